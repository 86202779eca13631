#pragma once

// Command-line driver: staged pipeline commands over a workspace directory,
// attention rendering and the finite-difference suite.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "objgan/image_generator.hpp"

namespace objgan::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// round_half_up(255 * v), clamped to [0, 255].
std::uint8_t brightness(double v);

struct GrayImage {
  int height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
};

// Row-major h x w values rendered as brightness, upscaled by an integer
// factor with nearest-neighbour replication.
GrayImage render_map(const std::vector<double>& values, int h, int w, int scale);

// Index of the largest entry; ties go to the lowest index.
int argmax(const std::vector<double>& row);

// Files written by render_attention_maps into `dir`:
//   words.txt              one token per line
//   grid_stage{k}.txt      beta rows (patches) for each refiner k
//   grid_stage{k}_w{j}.png per-word brightness map upscaled to the image size
//   object_beta.txt        beta rows (objects)
//   objects.txt            "t label word_index word weight" per object
//   object_{t}.png         mask scaled by the object's argmax-word weight
void render_attention_maps(const gen::SampleRecord& record, const std::vector<std::string>& words,
                           const std::vector<int>& labels, const ag::Var& masks, int image_size,
                           const std::string& dir);

struct SuiteCheck {
  std::string name;
  double rel_err = 0;
  std::size_t checked = 0;
  bool ok = false;
};

// Central-difference checks at double precision, tolerance 1e-4.
std::vector<SuiteCheck> gradient_suite(std::uint64_t seed);

}  // namespace objgan::cli
