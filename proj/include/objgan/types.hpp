#pragma once

#include <string>
#include <vector>

namespace objgan {

// Axis-aligned box in normalised image units, top-left origin.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  bool operator==(const Box&) const = default;
};

struct LabeledBox {
  int label = 0;
  Box box;
  bool operator==(const LabeledBox&) const = default;
};

using BoxSequence = std::vector<LabeledBox>;

// 0 <= x,y; w,h > 0; x+w <= 1; y+h <= 1 (with slack `tol`).
bool is_valid_box(const Box& b, double tol = 1e-12);
double iou(const Box& a, const Box& b);

// Dense CHW image with values in [-1, 1].
struct Image {
  int channels = 3, height = 0, width = 0;
  std::vector<double> data;
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

// Single-channel map with values in [0, 1].
struct Mask {
  int height = 0, width = 0;
  std::vector<double> data;
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
};

// Objects in mention order with one full-resolution soft mask per object.
struct Layout {
  BoxSequence objects;
  std::vector<Mask> masks;
  std::size_t size() const { return objects.size(); }
};

}  // namespace objgan
