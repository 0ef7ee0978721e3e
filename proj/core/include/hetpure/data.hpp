#pragma once

#include <vector>

#include "hetpure/tensor.hpp"

namespace hetpure {

struct LabeledImage {
  Tensor image;
  int label = 0;
};

using Dataset = std::vector<LabeledImage>;

int count_classes(const Dataset& data);

}  // namespace hetpure
