#include "harmon/synthdata/png_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "harmon/common.hpp"

namespace harmon::data {

namespace {

const unsigned char kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

std::uint32_t get_be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const std::vector<unsigned char>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + data.size())));
  put_be32(out, crc);
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<unsigned char>& rgb) {
  if (width <= 0 || height <= 0 ||
      rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw Error("png: bad dimensions for write");

  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(height) * (1 + static_cast<std::size_t>(width) * 3));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    const unsigned char* row = rgb.data() + static_cast<std::size_t>(y) * width * 3;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(width) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw Error("png: deflate failed");
  compressed.resize(bound);

  std::vector<unsigned char> out(kSig, kSig + 8);
  std::vector<unsigned char> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", compressed);
  append_chunk(out, "IEND", {});

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("png: cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!os) throw Error("png: write failed for '" + path + "'");
}

void read_png_rgb(const std::string& path, int& width, int& height,
                  std::vector<unsigned char>& rgb) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("png: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSig, 8) != 0)
    throw Error("png: '" + path + "' is not a PNG file");

  int w = 0, h = 0, color_type = -1;
  std::vector<unsigned char> idat;
  std::size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = get_be32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw Error("png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const unsigned char* data = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw Error("png: bad IHDR");
      w = static_cast<int>(get_be32(data));
      h = static_cast<int>(get_be32(data + 4));
      const int depth = data[8];
      color_type = data[9];
      if (depth != 8) throw Error("png: only 8-bit images supported");
      if (color_type != 0 && color_type != 2 && color_type != 6)
        throw Error("png: unsupported color type " + std::to_string(color_type));
      if (data[12] != 0) throw Error("png: interlaced images not supported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0 || color_type < 0) throw Error("png: missing IHDR");
  const int ch = color_type == 0 ? 1 : color_type == 2 ? 3 : 4;
  const std::size_t stride = static_cast<std::size_t>(w) * ch;
  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * (1 + stride));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw Error("png: inflate failed");

  // undo scanline filters in place
  std::vector<unsigned char> prev(stride, 0);
  std::vector<unsigned char> cur(stride);
  rgb.assign(static_cast<std::size_t>(w) * h * 3, 0);
  for (int y = 0; y < h; ++y) {
    const unsigned char* line = raw.data() + static_cast<std::size_t>(y) * (1 + stride);
    const int filter = line[0];
    std::memcpy(cur.data(), line + 1, stride);
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(ch) ? cur[i - ch] : 0;
      const int b = prev[i];
      const int c = i >= static_cast<std::size_t>(ch) ? prev[i - ch] : 0;
      int x = cur[i];
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: x += paeth(a, b, c); break;
        default: throw Error("png: bad filter byte " + std::to_string(filter));
      }
      cur[i] = static_cast<unsigned char>(x & 0xFF);
    }
    for (int x = 0; x < w; ++x) {
      unsigned char* dst = rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3;
      const unsigned char* src = cur.data() + static_cast<std::size_t>(x) * ch;
      if (ch == 1) {
        dst[0] = dst[1] = dst[2] = src[0];
      } else {
        dst[0] = src[0];
        dst[1] = src[1];
        dst[2] = src[2];
      }
    }
    std::swap(prev, cur);
  }
  width = w;
  height = h;
}

std::vector<unsigned char> float_image_to_bytes(const std::vector<float>& img) {
  std::vector<unsigned char> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    float v = (img[i] + 1.0f) * 0.5f * 255.0f;
    v = std::min(255.0f, std::max(0.0f, v));
    out[i] = static_cast<unsigned char>(std::lround(v));
  }
  return out;
}

std::vector<float> bytes_to_float_image(const std::vector<unsigned char>& bytes) {
  std::vector<float> out(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    out[i] = static_cast<float>(bytes[i]) / 255.0f * 2.0f - 1.0f;
  return out;
}

}  // namespace harmon::data
