#pragma once

#include <string>
#include <vector>

#include "hetpure/classifier.hpp"
#include "hetpure/denoiser.hpp"

namespace hetpure {

/// Versioned model container: magic "HPCKPT01", u32 version, architecture
/// descriptor string, then named little-endian float32 parameter segments.
struct CheckpointSegment {
  std::string name;
  std::vector<float> values;
};

void write_checkpoint(const std::string& path, const std::string& descriptor,
                      const std::vector<CheckpointSegment>& segments);

struct Checkpoint {
  std::string descriptor;
  std::vector<CheckpointSegment> segments;
};
Checkpoint read_checkpoint(const std::string& path);

void save_classifier(const std::string& path, ClassifierModel& model);
ClassifierModel load_classifier(const std::string& path);

void save_denoiser(const std::string& path, DenoiserModel& model);
DenoiserModel load_denoiser(const std::string& path);

}  // namespace hetpure
