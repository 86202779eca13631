#include "objgan/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace objgan {

bool is_valid_box(const Box& b, double tol) {
  return b.x >= -tol && b.y >= -tol && b.w > 0 && b.h > 0 && b.x + b.w <= 1 + tol && b.y + b.h <= 1 + tol;
}

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

namespace io {

std::uint8_t to_byte(double v) {
  const double s = std::floor((v + 1.0) * 127.5 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0));
}

double from_byte(std::uint8_t b) { return b / 127.5 - 1.0; }

namespace {

void write_raw(const std::string& path, int h, int w, bool rgb, const std::vector<std::uint8_t>& buf) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("failed to write " + path + ": " + image.message);
}

std::vector<std::uint8_t> read_raw(const std::string& path, int& h, int& w, bool rgb) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw std::runtime_error("failed to read " + path + ": " + image.message);
  image.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
    throw std::runtime_error("failed to decode " + path + ": " + image.message);
  h = static_cast<int>(image.height);
  w = static_cast<int>(image.width);
  return buf;
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 3 && img.channels != 1) throw std::invalid_argument("write_png: 1 or 3 channels");
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(img.height) * img.width * img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        buf[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] = to_byte(img.at(c, y, x));
  write_raw(path, img.height, img.width, img.channels == 3, buf);
}

Image read_png(const std::string& path) {
  int h = 0, w = 0;
  auto buf = read_raw(path, h, w, true);
  Image img{3, h, w, std::vector<double>(static_cast<std::size_t>(3) * h * w)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = from_byte(buf[(static_cast<std::size_t>(y) * w + x) * 3 + c]);
  return img;
}

void write_mask_png(const std::string& path, const Mask& m) {
  std::vector<std::uint8_t> buf(m.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<std::uint8_t>(std::clamp(std::floor(m.data[i] * 255.0 + 0.5), 0.0, 255.0));
  write_raw(path, m.height, m.width, false, buf);
}

Mask read_mask_png(const std::string& path) {
  int h = 0, w = 0;
  auto buf = read_raw(path, h, w, false);
  Mask m{h, w, std::vector<double>(buf.size())};
  for (std::size_t i = 0; i < buf.size(); ++i) m.data[i] = buf[i] / 255.0;
  return m;
}

void write_gray_png(const std::string& path, int height, int width, const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(height) * width) throw std::invalid_argument("write_gray_png: size");
  write_raw(path, height, width, false, pixels);
}

}  // namespace io
}  // namespace objgan
