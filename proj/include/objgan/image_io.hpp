#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "objgan/types.hpp"

namespace objgan::io {

// [-1,1] -> [0,255], rounding half up, clamped.
std::uint8_t to_byte(double v);
double from_byte(std::uint8_t b);

// 8-bit RGB (3-channel) or grayscale (1-channel) PNG.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Masks map [0,1] -> [0,255] directly.
void write_mask_png(const std::string& path, const Mask& m);
Mask read_mask_png(const std::string& path);

// Raw 8-bit grayscale buffer.
void write_gray_png(const std::string& path, int height, int width, const std::vector<std::uint8_t>& pixels);

}  // namespace objgan::io
