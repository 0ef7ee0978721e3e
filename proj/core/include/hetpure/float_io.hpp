#pragma once

#include <string>

#include "hetpure/tensor.hpp"

namespace hetpure {

/// Raw little-endian float32 tensor container: magic "HPIMGF32", three u32
/// dims (C,H,W), then C*H*W floats. Exact round-trip at float32 precision.
void write_float_tensor(const std::string& path, const Tensor& t);
Tensor read_float_tensor(const std::string& path);

}  // namespace hetpure
