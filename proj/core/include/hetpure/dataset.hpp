#pragma once

#include <cstdint>
#include <string>

#include "hetpure/data.hpp"
#include "hetpure/rng.hpp"

namespace hetpure {

struct DatasetSpec {
  std::string generator = "shapes-easy";
  int image_size = 16;
  int classes = 3;          // 2..4
  int train_per_class = 500;
  int test_per_class = 100;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Renders one synthetic sample: a class-specific shape (disk, box, cross,
/// ring) of class-specific brightness over a dim textured background. Shape
/// areas are fixed so per-class pixel means separate cleanly, with gaps small
/// enough that pixel-budget attacks can cross them.
Tensor render_shape_image(const DatasetSpec& spec, int label, Rng& rng);

/// Writes class-labelled PNG directories plus index.csv (path,label,split).
/// Deterministic: identical spec produces byte-identical files.
void make_dataset(const DatasetSpec& spec, const std::string& out_dir);

/// Loads one split ("train"/"test") listed in dir/index.csv, in index order.
Dataset load_dataset(const std::string& dir, const std::string& split);

/// In-memory generation with the same draws as make_dataset (tests, inline
/// training).
Dataset generate_split(const DatasetSpec& spec, const std::string& split);

/// Deterministic class-balanced subset: k-th image of each class in turn.
Dataset balanced_subset(const Dataset& data, int n);

}  // namespace hetpure
