#pragma once

#include <string>

#include "hetpure/tensor.hpp"

namespace hetpure {

/// Writes an 8-bit PNG (grayscale for 1 channel, RGB for 3). Values are
/// clamped to [0,1] and quantised with round-to-nearest. Deterministic
/// byte output for identical input.
void write_png(const std::string& path, const Tensor& image);

/// Reads the 8-bit non-interlaced grayscale/RGB subset written above.
/// Values are scaled back to [0,1].
Tensor read_png(const std::string& path);

}  // namespace hetpure
