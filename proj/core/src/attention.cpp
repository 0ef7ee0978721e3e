#include "hetpure/attention.hpp"

#include <algorithm>
#include <cmath>

namespace hetpure {

std::size_t AttentionMask::area() const {
  std::size_t n = 0;
  for (auto b : bits) n += b;
  return n;
}

PoolMode pool_mode_from_string(const std::string& s) {
  if (s == "sum") return PoolMode::Sum;
  if (s == "sum_p") return PoolMode::SumP;
  if (s == "max_p") return PoolMode::MaxP;
  throw std::invalid_argument("unknown pool mode: " + s);
}

std::string to_string(PoolMode m) {
  switch (m) {
    case PoolMode::Sum: return "sum";
    case PoolMode::SumP: return "sum_p";
    case PoolMode::MaxP: return "max_p";
  }
  return "?";
}

PooledMap channel_pool(const Tensor& activation, PoolMode mode, int p) {
  if (activation.channels < 1)
    throw std::invalid_argument("channel_pool: empty channel dimension");
  if (p < 1) throw std::invalid_argument("channel_pool: p must be >= 1");

  const int h = activation.height, w = activation.width;
  PooledMap out;
  out.height = h;
  out.width = w;
  out.values.assign(static_cast<std::size_t>(h) * w, 0.0);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      switch (mode) {
        case PoolMode::Sum:
          for (int c = 0; c < activation.channels; ++c)
            acc += std::fabs(activation.at(c, y, x));
          break;
        case PoolMode::SumP:
          for (int c = 0; c < activation.channels; ++c)
            acc += std::pow(std::fabs(activation.at(c, y, x)), p);
          acc = std::pow(acc, 1.0 / p);
          break;
        case PoolMode::MaxP:
          for (int c = 0; c < activation.channels; ++c)
            acc = std::max(acc, std::pow(std::fabs(activation.at(c, y, x)), p));
          break;
      }
      out.values[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

namespace {

// Corner-aligned bilinear sample of a single-channel map.
double bilinear_at(const PooledMap& m, double sy, double sx) {
  int y0 = static_cast<int>(std::floor(sy));
  int x0 = static_cast<int>(std::floor(sx));
  int y1 = std::min(y0 + 1, m.height - 1);
  int x1 = std::min(x0 + 1, m.width - 1);
  y0 = std::min(std::max(y0, 0), m.height - 1);
  x0 = std::min(std::max(x0, 0), m.width - 1);
  double fy = sy - y0, fx = sx - x0;
  auto v = [&](int y, int x) { return m.values[static_cast<std::size_t>(y) * m.width + x]; };
  double top = v(y0, x0) * (1 - fx) + v(y0, x1) * fx;
  double bot = v(y1, x0) * (1 - fx) + v(y1, x1) * fx;
  return top * (1 - fy) + bot * fy;
}

}  // namespace

AttentionMap attention_map(const PooledMap& pooled, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("attention_map: output dims must be >= 1");
  for (double v : pooled.values)
    if (!std::isfinite(v))
      throw std::invalid_argument("attention_map: non-finite input");

  AttentionMap map;
  map.height = out_h;
  map.width = out_w;
  map.values.resize(static_cast<std::size_t>(out_h) * out_w);

  const double sy_scale =
      (out_h > 1 && pooled.height > 1) ? double(pooled.height - 1) / (out_h - 1) : 0.0;
  const double sx_scale =
      (out_w > 1 && pooled.width > 1) ? double(pooled.width - 1) / (out_w - 1) : 0.0;

  double max_v = -HUGE_VAL;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      double v = bilinear_at(pooled, y * sy_scale, x * sx_scale);
      map.values[static_cast<std::size_t>(y) * out_w + x] = v;
      max_v = std::max(max_v, v);
    }

  // Softmax over all positions jointly, shifted for stability.
  double denom = 0.0;
  for (double& v : map.values) {
    v = std::exp(v - max_v);
    denom += v;
  }
  for (double& v : map.values) v /= denom;
  return map;
}

AttentionMask build_mask(const std::vector<AttentionMap>& maps, double tau) {
  if (maps.empty()) throw std::invalid_argument("build_mask: empty map list");
  if (!(tau >= 0.0 && tau <= 1.0))
    throw std::invalid_argument("build_mask: tau outside [0,1]");

  const int h = maps.front().height, w = maps.front().width;
  for (const auto& m : maps)
    if (m.height != h || m.width != w)
      throw std::invalid_argument("build_mask: map dimension mismatch");

  AttentionMask mask(h, w, 0);
  for (const auto& m : maps) {
    auto [lo_it, hi_it] = std::minmax_element(m.values.begin(), m.values.end());
    double lo = *lo_it, hi = *hi_it;
    double range = hi - lo;
    if (range <= 0.0) continue;  // constant map carries no signal
    for (std::size_t i = 0; i < m.values.size(); ++i) {
      double norm = (m.values[i] - lo) / range;
      if (norm > tau) mask.bits[i] = 1;
    }
  }
  return mask;
}

std::vector<AttentionMap> attention_maps_for_stack(const ActivationStack& stack,
                                                   int out_h, int out_w,
                                                   PoolMode mode, int p) {
  std::vector<AttentionMap> maps;
  maps.reserve(stack.size());
  for (const auto& act : stack)
    maps.push_back(attention_map(channel_pool(act, mode, p), out_h, out_w));
  return maps;
}

}  // namespace hetpure
