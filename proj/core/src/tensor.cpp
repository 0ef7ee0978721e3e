#include "hetpure/tensor.hpp"

#include <cmath>

namespace hetpure {

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" +
         std::to_string(width);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

void require_finite(const Tensor& t, const char* where) {
  if (!t.all_finite())
    throw std::invalid_argument(std::string(where) + ": non-finite values");
}

Tensor zeros_like(const Tensor& t) {
  return Tensor(t.channels, t.height, t.width, 0.0);
}

Tensor add_scaled(const Tensor& a, double s, const Tensor& b) {
  require_same_shape(a, b, "add_scaled");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += s * b.data[i];
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double l2_norm(const Tensor& t) { return std::sqrt(dot(t, t)); }

double linf_norm(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data) m = std::max(m, std::fabs(v));
  return m;
}

Tensor clamp01(Tensor t) {
  for (double& v : t.data) v = std::min(1.0, std::max(0.0, v));
  return t;
}

}  // namespace hetpure
