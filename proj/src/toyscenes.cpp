#include "objgan/toyscenes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "objgan/image_io.hpp"
#include "objgan/text.hpp"

namespace objgan::toy {

namespace fs = std::filesystem;
using nlohmann::json;

std::string Grammar::class_name(int label) const {
  if (label < 0 || label >= num_classes()) throw std::out_of_range("class label " + std::to_string(label));
  return colors[color_of(label)] + " " + shapes[shape_of(label)];
}

std::vector<std::string> Grammar::class_names() const {
  std::vector<std::string> out;
  for (int l = 0; l < num_classes(); ++l) out.push_back(class_name(l));
  return out;
}

Grammar default_grammar() {
  Grammar g;
  g.colors = {"red", "green", "blue", "yellow", "cyan", "magenta"};
  g.shapes = {"circle", "square", "triangle", "diamond", "cross", "ring"};
  const double lo = 0.22, hi = 0.4;
  g.templates = {
      {{"a {0}", "there is a {0}"}, {{0.5, 0.5, 0.3, 0.5}}},
      {{"a {0} on the left", "there is a {0} on the left side"}, {{0.28, 0.5, lo, hi}}},
      {{"a {0} on the right", "there is a {0} on the right side"}, {{0.72, 0.5, lo, hi}}},
      {{"a {0} to the left of a {1}", "a {0} left of a {1}"}, {{0.28, 0.5, lo, hi}, {0.72, 0.5, lo, hi}}},
      {{"a {0} to the right of a {1}", "a {0} right of a {1}"}, {{0.72, 0.5, lo, hi}, {0.28, 0.5, lo, hi}}},
      {{"a {0} above a {1}", "a {0} on top of a {1}"}, {{0.5, 0.28, lo, hi}, {0.5, 0.72, lo, hi}}},
      {{"a {0} below a {1}", "a {0} under a {1}"}, {{0.5, 0.72, lo, hi}, {0.5, 0.28, lo, hi}}},
      {{"a {0} a {1} and a {2} in a row", "a row with a {0} a {1} and a {2}"},
       {{0.2, 0.5, 0.15, 0.25}, {0.5, 0.5, 0.15, 0.25}, {0.8, 0.5, 0.15, 0.25}}},
      {{"a {0} a {1} and a {2} in a column", "a column with a {0} a {1} and a {2}"},
       {{0.5, 0.2, 0.15, 0.25}, {0.5, 0.5, 0.15, 0.25}, {0.5, 0.8, 0.15, 0.25}}},
      {{"a {0} a {1} a {2} and a {3} in the corners", "corners with a {0} a {1} a {2} and a {3}"},
       {{0.27, 0.27, 0.2, 0.34}, {0.73, 0.27, 0.2, 0.34}, {0.27, 0.73, 0.2, 0.34}, {0.73, 0.73, 0.2, 0.34}}},
  };
  return g;
}

Mask rasterize_shape(int shape, const Box& b, int size) {
  Mask m{size, size, std::vector<double>(static_cast<std::size_t>(size) * size, 0.0)};
  for (int py = 0; py < size; ++py) {
    const double yc = (py + 0.5) / size;
    if (yc < b.y || yc >= b.y + b.h) continue;
    const double v = (yc - b.y) / b.h;
    for (int px = 0; px < size; ++px) {
      const double xc = (px + 0.5) / size;
      if (xc < b.x || xc >= b.x + b.w) continue;
      const double u = (xc - b.x) / b.w;
      const double du = u - 0.5, dv = v - 0.5, r2 = du * du + dv * dv;
      bool in = false;
      switch (shape) {
        case 0: in = r2 <= 0.25; break;
        case 1: in = true; break;
        case 2: in = std::abs(du) <= 0.5 * v; break;
        case 3: in = std::abs(du) + std::abs(dv) <= 0.5; break;
        case 4: in = std::abs(du) <= 1.0 / 6 || std::abs(dv) <= 1.0 / 6; break;
        case 5: in = r2 <= 0.25 && r2 >= 0.09; break;
        default: throw std::out_of_range("shape id " + std::to_string(shape));
      }
      if (in) m.at(py, px) = 1.0;
    }
  }
  return m;
}

namespace {

const double kColors[6][3] = {{0.9, -0.8, -0.8}, {-0.8, 0.8, -0.8}, {-0.8, -0.8, 0.9},
                              {0.9, 0.9, -0.8},  {-0.8, 0.9, 0.9},  {0.9, -0.8, 0.9}};
const double kBackground = -0.5;

std::string expand(const std::string& pattern, const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == '{') {
      const auto close = pattern.find('}', i);
      out += names.at(std::stoul(pattern.substr(i + 1, close - i - 1)));
      i = close;
    } else {
      out += pattern[i];
    }
  }
  return out;
}

}  // namespace

SceneSample generate_scene(std::uint64_t seed, const Grammar& g) {
  if (g.num_classes() < 1 || g.templates.empty()) throw std::invalid_argument("grammar needs a class and a template");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SceneSample s;
  s.seed = seed;
  s.template_id = static_cast<int>(rng() % g.templates.size());
  const Template& tpl = g.templates[s.template_id];
  const int n = static_cast<int>(tpl.slots.size());
  if (n > static_cast<int>(g.shapes.size())) throw std::invalid_argument("template has more slots than shapes");

  // Distinct shapes within a scene keep every shape word unique in the caption.
  std::vector<int> shape_ids(g.shapes.size());
  for (std::size_t i = 0; i < shape_ids.size(); ++i) shape_ids[i] = static_cast<int>(i);
  for (int i = 0; i < n; ++i) std::swap(shape_ids[i], shape_ids[i + rng() % (shape_ids.size() - i)]);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = g.label_of(static_cast<int>(rng() % g.colors.size()), shape_ids[i]);

  const int S = g.image_size;
  bool placed = false;
  for (int attempt = 0; attempt < g.max_attempts && !placed; ++attempt) {
    s.layout = {};
    for (int i = 0; i < n; ++i) {
      const Slot& sl = tpl.slots[i];
      Box b;
      b.w = sl.min_size + (sl.max_size - sl.min_size) * unit(rng);
      b.h = sl.min_size + (sl.max_size - sl.min_size) * unit(rng);
      const double cx = sl.cx + g.jitter * (2 * unit(rng) - 1);
      const double cy = sl.cy + g.jitter * (2 * unit(rng) - 1);
      b.x = std::clamp(cx - 0.5 * b.w, 0.0, 1.0 - b.w);
      b.y = std::clamp(cy - 0.5 * b.h, 0.0, 1.0 - b.h);
      s.layout.objects.push_back({labels[i], b});
      s.layout.masks.push_back(rasterize_shape(g.shape_of(labels[i]), b, S));
    }
    placed = true;
    for (int i = 0; i < n && placed; ++i) {
      double area = 0;
      for (double v : s.layout.masks[i].data) area += v;
      if (area == 0) placed = false;
      for (int j = i + 1; j < n && placed; ++j)
        if (iou(s.layout.objects[i].box, s.layout.objects[j].box) > g.max_iou) placed = false;
    }
  }
  if (!placed) throw std::runtime_error("scene placement failed after " + std::to_string(g.max_attempts) + " attempts");

  s.image = Image{3, S, S, std::vector<double>(static_cast<std::size_t>(3) * S * S, kBackground)};
  for (int i = 0; i < n; ++i) {
    const double* col = kColors[g.color_of(labels[i]) % 6];
    const Mask& m = s.layout.masks[i];
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        if (m.at(y, x) > 0)
          for (int c = 0; c < 3; ++c) s.image.at(c, y, x) = col[c];
  }

  std::vector<std::string> names;
  for (int l : labels) names.push_back(g.class_name(l));
  const int ncap = std::clamp(g.captions_per_scene, 1, 5);
  for (int c = 0; c < ncap; ++c) {
    const std::string cap = expand(tpl.phrasings[c % tpl.phrasings.size()], names);
    const auto toks = text::tokenize(cap);
    std::vector<int> align;
    for (int l : labels) {
      const auto it = std::find(toks.begin(), toks.end(), g.shapes[g.shape_of(l)]);
      align.push_back(static_cast<int>(it - toks.begin()));
    }
    s.captions.push_back(cap);
    s.alignment.push_back(std::move(align));
  }
  return s;
}

std::vector<int> parse_labels(const std::string& caption, const Grammar& g) {
  const auto toks = text::tokenize(caption);
  std::vector<int> out;
  for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
    const auto c = std::find(g.colors.begin(), g.colors.end(), toks[i]);
    const auto s = std::find(g.shapes.begin(), g.shapes.end(), toks[i + 1]);
    if (c != g.colors.end() && s != g.shapes.end())
      out.push_back(g.label_of(static_cast<int>(c - g.colors.begin()), static_cast<int>(s - g.shapes.begin())));
  }
  return out;
}

std::uint64_t scene_seed(std::uint64_t master, std::size_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z + index;
}

Dataset make_dataset(std::uint64_t master_seed, int n_train, int n_test, const Grammar& g) {
  if (n_train < 0 || n_test < 0) throw std::invalid_argument("negative split size");
  Dataset ds;
  ds.image_size = g.image_size;
  ds.class_names = g.class_names();
  for (int i = 0; i < n_train + n_test; ++i) {
    ds.samples.push_back(generate_scene(scene_seed(master_seed, i), g));
    (i < n_train ? ds.train : ds.test).push_back(i);
  }
  return ds;
}

namespace {

std::string id4(std::size_t i) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  fs::create_directories(fs::path(dir) / "annotations");
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const SceneSample& s = ds.samples[i];
    const std::string id = id4(i);
    io::write_png((fs::path(dir) / "images" / (id + ".png")).string(), s.image);
    json objs = json::array();
    for (std::size_t t = 0; t < s.layout.size(); ++t) {
      const std::string mask_rel = "masks/" + id + "_" + std::to_string(t) + ".png";
      io::write_mask_png((fs::path(dir) / mask_rel).string(), s.layout.masks[t]);
      const auto& o = s.layout.objects[t];
      objs.push_back({{"label", o.label},
                      {"name", ds.class_names.empty() ? "" : ds.class_names.at(o.label)},
                      {"box", {o.box.x, o.box.y, o.box.w, o.box.h}},
                      {"mask", mask_rel}});
    }
    json ann = {{"seed", s.seed},
                {"template", s.template_id},
                {"captions", s.captions},
                {"alignment", s.alignment},
                {"objects", objs}};
    std::ofstream(fs::path(dir) / "annotations" / (id + ".json")) << ann.dump(1) << "\n";
  }
  json manifest = {{"version", 1},
                   {"count", ds.samples.size()},
                   {"image_size", ds.image_size},
                   {"class_names", ds.class_names},
                   {"train", ds.train},
                   {"test", ds.test}};
  std::ofstream(fs::path(dir) / "manifest.json") << manifest.dump(1) << "\n";
}

Dataset read_dataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("no manifest.json in " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("bad manifest: " + std::string(e.what()));
  }
  Dataset ds;
  ds.image_size = manifest.at("image_size");
  ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
  ds.train = manifest.at("train").get<std::vector<int>>();
  ds.test = manifest.at("test").get<std::vector<int>>();
  const std::size_t count = manifest.at("count");
  for (std::size_t i = 0; i < count; ++i) {
    const std::string id = id4(i);
    std::ifstream af(fs::path(dir) / "annotations" / (id + ".json"));
    if (!af) throw std::runtime_error("missing annotation " + id);
    json ann;
    af >> ann;
    SceneSample s;
    s.seed = ann.at("seed");
    s.template_id = ann.at("template");
    s.captions = ann.at("captions").get<std::vector<std::string>>();
    s.alignment = ann.at("alignment").get<std::vector<std::vector<int>>>();
    s.image = io::read_png((fs::path(dir) / "images" / (id + ".png")).string());
    for (const auto& o : ann.at("objects")) {
      const auto b = o.at("box").get<std::vector<double>>();
      s.layout.objects.push_back({o.at("label").get<int>(), Box{b.at(0), b.at(1), b.at(2), b.at(3)}});
      s.layout.masks.push_back(io::read_mask_png((fs::path(dir) / o.at("mask").get<std::string>()).string()));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Mask downsample(const Mask& m, int factor) {
  if (factor < 1 || m.height % factor || m.width % factor) throw std::invalid_argument("downsample factor");
  Mask out{m.height / factor, m.width / factor, {}};
  out.data.assign(static_cast<std::size_t>(out.height) * out.width, 0.0);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) out.at(y / factor, x / factor) += m.at(y, x) * inv;
  for (auto& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace objgan::toy
