#include "hetpure/float_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace hetpure {

namespace {
constexpr char kMagic[8] = {'H', 'P', 'I', 'M', 'G', 'F', '3', '2'};

void put_u32_le(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}
}  // namespace

void write_float_tensor(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_float_tensor: cannot open " + path);
  f.write(kMagic, 8);
  put_u32_le(f, static_cast<std::uint32_t>(t.channels));
  put_u32_le(f, static_cast<std::uint32_t>(t.height));
  put_u32_le(f, static_cast<std::uint32_t>(t.width));
  std::vector<float> payload(t.data.begin(), t.data.end());
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw std::runtime_error("write_float_tensor: write failed: " + path);
}

Tensor read_float_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_float_tensor: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("read_float_tensor: bad magic in " + path);
  int c = static_cast<int>(get_u32_le(f));
  int h = static_cast<int>(get_u32_le(f));
  int w = static_cast<int>(get_u32_le(f));
  if (c <= 0 || h <= 0 || w <= 0)
    throw std::runtime_error("read_float_tensor: bad dims in " + path);
  Tensor t(c, h, w);
  std::vector<float> payload(t.size());
  f.read(reinterpret_cast<char*>(payload.data()),
         static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) throw std::runtime_error("read_float_tensor: truncated payload: " + path);
  for (std::size_t i = 0; i < payload.size(); ++i) t.data[i] = payload[i];
  return t;
}

}  // namespace hetpure
