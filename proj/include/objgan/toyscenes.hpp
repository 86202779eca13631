#pragma once

// Procedural scenes of coloured geometric objects with templated captions.
// Every quantity a model is asked to predict (labels, boxes, masks, the word
// that names each object) is known exactly.

#include <cstdint>
#include <string>
#include <vector>

#include "objgan/types.hpp"

namespace objgan::toy {

struct Slot {
  double cx, cy;              // nominal box centre
  double min_size, max_size;  // side lengths drawn uniformly per axis
};

struct Template {
  std::vector<std::string> phrasings;  // "{0}", "{1}", ... expand to "<colour> <shape>"
  std::vector<Slot> slots;
};

struct Grammar {
  std::vector<std::string> colors;
  std::vector<std::string> shapes;
  std::vector<Template> templates;
  int image_size = 64;
  int captions_per_scene = 2;
  double jitter = 0.03;
  double max_iou = 0.5;
  int max_attempts = 100;

  int num_classes() const { return static_cast<int>(colors.size() * shapes.size()); }
  int label_of(int color, int shape) const { return color * static_cast<int>(shapes.size()) + shape; }
  int color_of(int label) const { return label / static_cast<int>(shapes.size()); }
  int shape_of(int label) const { return label % static_cast<int>(shapes.size()); }
  std::string class_name(int label) const;
  std::vector<std::string> class_names() const;
};

// 6 colours x 6 shapes, 10 templates with 1 to 4 objects.
Grammar default_grammar();

struct SceneSample {
  std::uint64_t seed = 0;
  Image image;
  Layout layout;
  std::vector<std::string> captions;
  // alignment[c][t]: token index in captions[c] of the shape word naming
  // object t; the colour word sits immediately before it.
  std::vector<std::vector<int>> alignment;
  int template_id = -1;
};

SceneSample generate_scene(std::uint64_t seed, const Grammar& g);

// Rasterise one shape (binary, pixel-centre rule) inside `box` on a size x size grid.
Mask rasterize_shape(int shape, const Box& box, int size);

// Colour/shape word pairs found in a caption, as labels in mention order.
std::vector<int> parse_labels(const std::string& caption, const Grammar& g);

struct Dataset {
  std::vector<SceneSample> samples;
  std::vector<int> train, test;  // indices into samples
  int image_size = 64;
  std::vector<std::string> class_names;
};

std::uint64_t scene_seed(std::uint64_t master, std::size_t index);

// Train scenes take indices [0, n_train), test scenes [n_train, n_train + n_test).
Dataset make_dataset(std::uint64_t master_seed, int n_train, int n_test, const Grammar& g);

// images/NNNN.png, masks/NNNN_t.png, annotations/NNNN.json, manifest.json
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset read_dataset(const std::string& dir);

// Area-average a mask by an integer factor.
Mask downsample(const Mask& m, int factor);

}  // namespace objgan::toy
