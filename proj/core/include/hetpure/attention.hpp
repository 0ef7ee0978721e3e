#pragma once

#include <cstdint>
#include <vector>

#include "hetpure/tensor.hpp"

namespace hetpure {

/// Post-activation outputs of each classifier block, shallowest first.
using ActivationStack = std::vector<Tensor>;

/// Spatially softmaxed per-block attention map at input resolution.
/// Values are strictly positive and sum to 1.
struct AttentionMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
};

/// Binary field marking high-attention pixels.
struct AttentionMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  AttentionMask() = default;
  AttentionMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), bits(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t area() const;
};

enum class PoolMode { Sum, SumP, MaxP };

PoolMode pool_mode_from_string(const std::string& s);
std::string to_string(PoolMode m);

/// Collapses the channel dimension of a block activation into one spatial map:
///   Sum:  sum_i |A_i|
///   SumP: (sum_i |A_i|^p)^(1/p)
///   MaxP: max_i |A_i|^p
struct PooledMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
};

PooledMap channel_pool(const Tensor& activation, PoolMode mode, int p);

/// Bilinear corner-aligned upsample to (out_h, out_w) followed by a softmax
/// over all spatial positions jointly.
AttentionMap attention_map(const PooledMap& pooled, int out_h, int out_w);

/// Thresholds each map after min-max normalisation to [0,1] and unions the
/// results: bit = 1 iff any normalised map strictly exceeds tau. A constant
/// map normalises to all zeros and contributes nothing.
AttentionMask build_mask(const std::vector<AttentionMap>& maps, double tau);

/// Convenience: maps for every block of an activation stack at image size.
std::vector<AttentionMap> attention_maps_for_stack(const ActivationStack& stack,
                                                   int out_h, int out_w,
                                                   PoolMode mode, int p);

}  // namespace hetpure
