#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace hetpure {

/// Dense C x H x W image tensor, row-major within each channel.
/// Pixel values are nominally in [0,1] but intermediates may leave that range.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {
    if (c <= 0 || h <= 0 || w <= 0)
      throw std::invalid_argument("Tensor: dimensions must be positive");
  }

  std::size_t size() const { return data.size(); }

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  bool all_finite() const;
  std::string shape_str() const;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* where);
void require_finite(const Tensor& t, const char* where);

Tensor zeros_like(const Tensor& t);

// c = a + s*b
Tensor add_scaled(const Tensor& a, double s, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& t);
double linf_norm(const Tensor& t);
Tensor clamp01(Tensor t);

}  // namespace hetpure
