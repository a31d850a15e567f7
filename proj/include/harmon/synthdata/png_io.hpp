#pragma once

#include <string>
#include <vector>

namespace harmon::data {

// Minimal PNG codec (zlib-backed). Writer emits 8-bit RGB, filter 0, no
// interlace, fixed compression level, so identical pixels give identical bytes.
// Reader accepts 8-bit gray/RGB/RGBA non-interlaced images with any scanline
// filters; alpha is dropped, gray is replicated.
void write_png_rgb(const std::string& path, int width, int height,
                   const std::vector<unsigned char>& rgb);
void read_png_rgb(const std::string& path, int& width, int& height,
                  std::vector<unsigned char>& rgb);

// [-1,1] float HWC <-> 8-bit bytes, round-to-nearest with clamping.
std::vector<unsigned char> float_image_to_bytes(const std::vector<float>& img);
std::vector<float> bytes_to_float_image(const std::vector<unsigned char>& bytes);

}  // namespace harmon::data
