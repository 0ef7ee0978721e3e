#include "hetpure/png_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace hetpure {

namespace {

void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back((x >> 24) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back(x & 0xff);
}

std::uint32_t read_u32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void write_chunk(std::vector<unsigned char>& out, const char type[4],
                 const std::vector<unsigned char>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint32_t crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32(out, crc);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const Tensor& image) {
  if (image.channels != 1 && image.channels != 3)
    throw std::invalid_argument("write_png: only 1 or 3 channels supported");
  const int h = image.height, w = image.width, ch = image.channels;

  // raw scanlines, filter byte 0 per row
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + static_cast<std::size_t>(w) * ch));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double v = std::min(1.0, std::max(0.0, image.at(c, y, x)));
        raw.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  }

  uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_cap);
  if (compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("write_png: deflate failed");
  comp.resize(comp_cap);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<unsigned char> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(w));
  put_u32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);                       // bit depth
  ihdr.push_back(ch == 1 ? 0 : 2);         // color type
  ihdr.push_back(0);                       // compression
  ihdr.push_back(0);                       // filter
  ihdr.push_back(0);                       // no interlace
  write_chunk(out, "IHDR", ihdr);
  write_chunk(out, "IDAT", comp);
  write_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write_png: write failed for " + path);
}

Tensor read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_png: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
    throw std::runtime_error("read_png: not a PNG: " + path);

  int w = 0, h = 0, ch = 0;
  std::vector<unsigned char> idat;
  std::size_t pos = 8;
  while (pos + 8 <= buf.size()) {
    std::uint32_t len = read_u32(&buf[pos]);
    std::string type(reinterpret_cast<const char*>(&buf[pos + 4]), 4);
    if (pos + 12 + len > buf.size())
      throw std::runtime_error("read_png: truncated chunk");
    const unsigned char* payload = &buf[pos + 8];
    if (type == "IHDR") {
      w = static_cast<int>(read_u32(payload));
      h = static_cast<int>(read_u32(payload + 4));
      int depth = payload[8], color = payload[9], interlace = payload[12];
      if (depth != 8 || (color != 0 && color != 2) || interlace != 0)
        throw std::runtime_error("read_png: unsupported PNG variant (need 8-bit gray/rgb)");
      ch = color == 0 ? 1 : 3;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), payload, payload + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0 || ch == 0)
    throw std::runtime_error("read_png: missing IHDR");

  std::size_t stride = static_cast<std::size_t>(w) * ch;
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("read_png: inflate failed");

  // defilter
  std::vector<unsigned char> img(static_cast<std::size_t>(h) * stride);
  const int bpp = ch;
  for (int y = 0; y < h; ++y) {
    unsigned char filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
    const unsigned char* src = &raw[static_cast<std::size_t>(y) * (stride + 1) + 1];
    unsigned char* dst = &img[static_cast<std::size_t>(y) * stride];
    const unsigned char* up = y > 0 ? &img[static_cast<std::size_t>(y - 1) * stride] : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
      int b = up ? up[i] : 0;
      int c = (up && i >= static_cast<std::size_t>(bpp)) ? up[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw std::runtime_error("read_png: bad filter type");
      }
      dst[i] = static_cast<unsigned char>(v & 0xff);
    }
  }

  Tensor out(ch, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        out.at(c, y, x) =
            img[static_cast<std::size_t>(y) * stride + static_cast<std::size_t>(x) * ch + c] / 255.0;
  return out;
}

}  // namespace hetpure
