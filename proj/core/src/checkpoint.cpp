#include "hetpure/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace hetpure {

namespace {
constexpr char kMagic[8] = {'H', 'P', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& f, std::uint64_t v) {
  put_u32(f, static_cast<std::uint32_t>(v & 0xffffffffull));
  put_u32(f, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw std::runtime_error("checkpoint: truncated file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

std::uint64_t get_u64(std::ifstream& f) {
  std::uint64_t lo = get_u32(f);
  std::uint64_t hi = get_u32(f);
  return lo | (hi << 32);
}
}  // namespace

void write_checkpoint(const std::string& path, const std::string& descriptor,
                      const std::vector<CheckpointSegment>& segments) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_checkpoint: cannot open " + path);
  f.write(kMagic, 8);
  put_u32(f, kVersion);
  put_u32(f, static_cast<std::uint32_t>(descriptor.size()));
  f.write(descriptor.data(), static_cast<std::streamsize>(descriptor.size()));
  put_u32(f, static_cast<std::uint32_t>(segments.size()));
  for (const auto& seg : segments) {
    put_u32(f, static_cast<std::uint32_t>(seg.name.size()));
    f.write(seg.name.data(), static_cast<std::streamsize>(seg.name.size()));
    put_u64(f, seg.values.size());
    f.write(reinterpret_cast<const char*>(seg.values.data()),
            static_cast<std::streamsize>(seg.values.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write_checkpoint: write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("read_checkpoint: bad magic in " + path);
  std::uint32_t version = get_u32(f);
  if (version != kVersion)
    throw std::runtime_error("read_checkpoint: unsupported version " +
                             std::to_string(version));
  Checkpoint ckpt;
  std::uint32_t dlen = get_u32(f);
  ckpt.descriptor.resize(dlen);
  f.read(ckpt.descriptor.data(), dlen);
  std::uint32_t nseg = get_u32(f);
  ckpt.segments.resize(nseg);
  for (auto& seg : ckpt.segments) {
    std::uint32_t nlen = get_u32(f);
    seg.name.resize(nlen);
    f.read(seg.name.data(), nlen);
    std::uint64_t count = get_u64(f);
    seg.values.resize(count);
    f.read(reinterpret_cast<char*>(seg.values.data()),
           static_cast<std::streamsize>(count * sizeof(float)));
    if (!f) throw std::runtime_error("read_checkpoint: truncated segment " + seg.name);
  }
  return ckpt;
}

namespace {

template <typename Model>
std::vector<CheckpointSegment> collect_segments(Model& model) {
  std::vector<CheckpointSegment> out;
  for (auto& seg : model.segments()) {
    CheckpointSegment c;
    c.name = seg.name;
    c.values.assign(seg.data->begin(), seg.data->end());
    out.push_back(std::move(c));
  }
  return out;
}

template <typename Model>
void restore_segments(Model& model, const Checkpoint& ckpt, const std::string& path) {
  auto segs = model.segments();
  if (segs.size() != ckpt.segments.size())
    throw std::runtime_error("checkpoint " + path + ": segment count mismatch");
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& stored = ckpt.segments[i];
    if (stored.name != segs[i].name)
      throw std::runtime_error("checkpoint " + path + ": segment '" + stored.name +
                               "' where '" + segs[i].name + "' expected");
    if (stored.values.size() != segs[i].data->size())
      throw std::runtime_error("checkpoint " + path + ": segment '" + stored.name +
                               "' length mismatch");
    for (std::size_t k = 0; k < stored.values.size(); ++k)
      (*segs[i].data)[k] = stored.values[k];
  }
}

}  // namespace

void save_classifier(const std::string& path, ClassifierModel& model) {
  write_checkpoint(path, model.config().descriptor(), collect_segments(model));
}

ClassifierModel load_classifier(const std::string& path) {
  Checkpoint ckpt = read_checkpoint(path);
  ClassifierModel model(ClassifierConfig::from_descriptor(ckpt.descriptor));
  restore_segments(model, ckpt, path);
  return model;
}

void save_denoiser(const std::string& path, DenoiserModel& model) {
  if (model.kind() != DenoiserModel::Kind::Learned)
    throw std::invalid_argument("save_denoiser: only learned models are stored");
  write_checkpoint(path, model.descriptor(), collect_segments(model));
}

DenoiserModel load_denoiser(const std::string& path) {
  Checkpoint ckpt = read_checkpoint(path);
  DenoiserModel model =
      DenoiserModel::learned(DenoiserNetConfig::from_descriptor(ckpt.descriptor), 0);
  restore_segments(model, ckpt, path);
  return model;
}

}  // namespace hetpure
