#include "objgan/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "objgan/attention.hpp"
#include "objgan/box_generator.hpp"
#include "objgan/config.hpp"
#include "objgan/damsm.hpp"
#include "objgan/image_io.hpp"
#include "objgan/shape_generator.hpp"
#include "objgan/toyscenes.hpp"
#include "objgan/training.hpp"

namespace objgan::cli {

namespace fs = std::filesystem;
using namespace objgan::ag;

std::uint8_t brightness(double v) {
  const double s = std::floor(255.0 * v + 0.5);
  return static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0));
}

GrayImage render_map(const std::vector<double>& values, int h, int w, int scale) {
  if (h <= 0 || w <= 0 || scale <= 0 || values.size() != static_cast<std::size_t>(h) * w)
    throw std::invalid_argument("render_map: bad geometry");
  GrayImage g{h * scale, w * scale, {}};
  g.pixels.resize(static_cast<std::size_t>(g.height) * g.width);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      g.pixels[static_cast<std::size_t>(y) * g.width + x] = brightness(values[(y / scale) * w + x / scale]);
  return g;
}

int argmax(const std::vector<double>& row) {
  if (row.empty()) throw std::invalid_argument("argmax: empty row");
  int best = 0;
  for (int i = 1; i < static_cast<int>(row.size()); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<double> row_of(const Var& m, int r) {
  const int cols = m.dim(1);
  return std::vector<double>(m.value().begin() + static_cast<std::ptrdiff_t>(r) * cols,
                             m.value().begin() + static_cast<std::ptrdiff_t>(r + 1) * cols);
}

void write_matrix(const fs::path& path, const Var& m) {
  std::ofstream f(path);
  for (int r = 0; r < m.dim(0); ++r) {
    const auto row = row_of(m, r);
    for (std::size_t c = 0; c < row.size(); ++c) f << (c ? " " : "") << fmt(row[c]);
    f << "\n";
  }
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

void write_gray(const fs::path& path, const GrayImage& g) {
  io::write_gray_png(path.string(), g.height, g.width, g.pixels);
}

}  // namespace

void render_attention_maps(const gen::SampleRecord& record, const std::vector<std::string>& words,
                           const std::vector<int>& labels, const Var& masks, int image_size, const std::string& dir) {
  const fs::path root(dir);
  fs::create_directories(root);
  {
    std::ofstream f(root / "words.txt");
    for (const auto& w : words) f << w << "\n";
  }
  const int Ts = static_cast<int>(words.size());
  for (int k = 1; k < 3; ++k) {
    const Var& beta = record.stages[k].grid_beta;
    if (!beta.defined()) continue;
    if (beta.dim(1) != Ts) throw ShapeError("render_attention_maps: beta width differs from the word count");
    write_matrix(root / ("grid_stage" + std::to_string(k) + ".txt"), beta);
    const int side = static_cast<int>(std::lround(std::sqrt(beta.dim(0))));
    if (side * side != beta.dim(0)) throw ShapeError("render_attention_maps: grid beta rows are not a square");
    const int scale = std::max(1, image_size / side);
    for (int j = 0; j < Ts; ++j) {
      std::vector<double> col(beta.dim(0));
      for (int p = 0; p < beta.dim(0); ++p) col[p] = beta.at(static_cast<std::size_t>(p) * Ts + j);
      write_gray(root / ("grid_stage" + std::to_string(k) + "_w" + std::to_string(j) + ".png"),
                 render_map(col, side, side, scale));
    }
  }
  const Var& ob = record.obj_beta;
  const int T = static_cast<int>(labels.size());
  if (masks.rank() != 3 || masks.dim(0) != T) throw ShapeError("render_attention_maps: masks must be [T,S,S]");
  std::ofstream objs(root / "objects.txt");
  if (T > 0) {
    if (ob.dim(0) != T || ob.dim(1) != Ts) throw ShapeError("render_attention_maps: object beta must be [T,Ts]");
    write_matrix(root / "object_beta.txt", ob);
    const int S = masks.dim(1);
    const std::size_t plane = static_cast<std::size_t>(S) * S;
    for (int t = 0; t < T; ++t) {
      const auto row = row_of(ob, t);
      const int j = argmax(row);
      objs << t << " " << labels[t] << " " << j << " " << words[j] << " " << fmt(row[j]) << "\n";
      std::vector<double> v(masks.value().begin() + static_cast<std::ptrdiff_t>(t * plane),
                            masks.value().begin() + static_cast<std::ptrdiff_t>((t + 1) * plane));
      for (auto& x : v) x *= row[j];
      write_gray(root / ("object_" + std::to_string(t) + ".png"), render_map(v, S, S, 1));
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> setting;
  std::optional<int> steps;
  std::optional<std::string> variant;
};

// Workspace layout under --out.
struct Workspace {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path vocab() const { return root / "data" / "vocab.txt"; }
  fs::path ckpt(const std::string& stage) const { return root / (stage + ".ckpt"); }
  fs::path log(const std::string& stage) const { return root / (stage + ".log"); }
};

void require_stage(const Workspace& ws, const std::string& stage, const std::string& command) {
  if (!fs::exists(ws.ckpt(stage)))
    throw std::runtime_error(command + " requires " + ws.ckpt(stage).string() + "; run train-" + stage + " first");
}

nn::Rng stage_rng(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return nn::Rng(seq);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// Everything needed to run any stage, built from one configuration.
struct Pipeline {
  cfg::Config config;
  Workspace ws;
  std::uint64_t seed = 0;
  toy::Dataset ds;
  text::Vocabulary vocab;

  text::TextEncoder text;
  text::LabelEmbeddings labels;
  damsm::DamsmConfig dcfg;
  damsm::ImageEncoder image_enc;
  box::BoxGenerator boxgen;
  shape::ShapeGenerator shapegen;
  shape::ShapeCritic critic;
  gen::GenConfig gcfg;
  disc::DiscConfig disc_cfg;
  gen::ImageGenerator G;

  int num_classes() const { return static_cast<int>(ds.class_names.size()); }
  int image_size() const { return config.get_int("data.image_size"); }
  int dim() const { return 2 * config.get_int("text.hidden"); }
};

toy::Grammar grammar_from(const cfg::Config& c) {
  auto g = toy::default_grammar();
  g.image_size = c.get_int("data.image_size");
  g.captions_per_scene = c.get_int("data.captions");
  return g;
}

void load_dataset(Pipeline& p) {
  if (!fs::exists(p.ws.data() / "manifest.json"))
    throw std::runtime_error("no dataset in " + p.ws.data().string() + "; run make-data first");
  p.ds = toy::read_dataset(p.ws.data().string());
  p.vocab = text::Vocabulary::load(p.ws.vocab().string());
  if (p.ds.image_size != p.image_size())
    throw cfg::ConfigError("dataset resolution " + std::to_string(p.ds.image_size) + " differs from data.image_size=" +
                           p.config.get("data.image_size"));
}

void build_models(Pipeline& p) {
  const auto& c = p.config;
  nn::Rng init = stage_rng(p.seed, 100);
  text::TextConfig tc;
  tc.vocab_size = p.vocab.size();
  tc.embed_dim = c.get_int("text.embed_dim");
  tc.hidden = c.get_int("text.hidden");
  tc.label_dim = c.get_int("text.label_dim");
  tc.max_len = c.get_int("text.max_len");
  tc.dropout = c.get_double("text.dropout");
  p.text = text::TextEncoder(tc, init);
  p.labels = text::LabelEmbeddings(p.num_classes(), tc.label_dim, init);

  p.dcfg.gamma1 = c.get_double("damsm.gamma1");
  p.dcfg.gamma2 = c.get_double("damsm.gamma2");
  p.dcfg.gamma3 = c.get_double("damsm.gamma3");
  p.dcfg.base_channels = c.get_int("damsm.base_channels");
  p.dcfg.dim = p.dim();
  p.dcfg.image_size = p.image_size();
  p.image_enc = damsm::ImageEncoder(p.dcfg, init);

  box::BoxGenConfig bc;
  bc.num_labels = p.num_classes();
  bc.enc_dim = p.dim();
  bc.attn_dim = c.get_int("box.attn_dim");
  bc.components = c.get_int("box.components");
  bc.max_objects = c.get_int("box.max_objects");
  p.boxgen = box::BoxGenerator(bc, init);

  shape::ShapeGenConfig sc;
  sc.num_classes = p.num_classes();
  sc.size = p.image_size();
  sc.base = c.get_int("shape.base");
  sc.noise_dim = c.get_int("shape.noise_dim");
  const auto& cell = c.get("shape.cell");
  if (cell != "gru" && cell != "lstm") throw cfg::ConfigError("shape.cell must be gru or lstm");
  sc.cell = cell == "gru" ? shape::CellType::Gru : shape::CellType::Lstm;
  p.shapegen = shape::ShapeGenerator(sc, init);
  p.critic = shape::ShapeCritic(sc, init);

  auto& g = p.gcfg;
  g.s0 = c.get_int("image.s0");
  g.ng = c.get_int("image.ng");
  const auto res = c.get_int_list("image.residuals");
  if (res.size() != 3) throw cfg::ConfigError("image.residuals needs three entries");
  g.residuals = {res[0], res[1], res[2]};
  g.noise_dim = c.get_int("image.noise_dim");
  g.label_dim = tc.label_dim;
  g.num_classes = p.num_classes();
  g.cond_dim = c.get_int("image.cond_dim");
  g.word_dim = p.dim();
  g.validate();
  if (g.stage_size(2) != p.image_size())
    throw cfg::ConfigError("4 * image.s0 must equal data.image_size (" + std::to_string(g.stage_size(2)) + " vs " +
                           std::to_string(p.image_size()) + ")");
  auto& d = p.disc_cfg;
  d.nd = c.get_int("image.nd");
  d.s0 = g.s0;
  d.ng = g.ng;
  d.label_dim = g.label_dim;
  d.num_classes = g.num_classes;
  d.cond_dim = g.cond_dim;
  const auto& variant = c.get("image.variant");
  if (variant != "plain" && variant != "sn") throw cfg::ConfigError("image.variant must be plain or sn");
  d.spectral = variant == "sn";
  d.interpolate_objects = c.get_bool("image.interpolate_objects");
  d.roi_bins = c.get_int("image.roi_bins");
  d.validate();
  p.G = gen::ImageGenerator(g, init);
}

nn::TensorList collect_all(const std::function<void(nn::StateDict&)>& f) {
  nn::StateDict sd;
  f(sd);
  nn::TensorList all = sd.params;
  all.append(sd.buffers);
  return all;
}

nn::TensorList frozen_tensors(Pipeline& p) {
  return collect_all([&](nn::StateDict& sd) {
    p.text.collect(sd, "text");
    p.image_enc.collect(sd, "image");
    p.labels.collect(sd, "labels");
  });
}

nn::TensorList text_tensors(Pipeline& p) {
  return collect_all([&](nn::StateDict& sd) { p.text.collect(sd, "text"); });
}

nn::TensorList box_tensors(Pipeline& p) {
  return collect_all([&](nn::StateDict& sd) { p.boxgen.collect(sd, "box"); });
}

nn::TensorList shape_tensors(Pipeline& p) {
  return collect_all([&](nn::StateDict& sd) {
    p.shapegen.collect(sd, "shape");
    p.critic.collect(sd, "critic");
  });
}

nn::TensorList generator_tensors(Pipeline& p) {
  return collect_all([&](nn::StateDict& sd) { p.G.collect(sd, "G"); });
}

train::DType dtype_of(const cfg::Config& c) {
  const auto& v = c.get("checkpoint.dtype");
  if (v == "f64") return train::DType::F64;
  if (v == "f32") return train::DType::F32;
  throw cfg::ConfigError("checkpoint.dtype must be f64 or f32");
}

void save_stage(const Pipeline& p, const std::string& stage, const nn::TensorList& tensors, const std::string& rng) {
  train::save_checkpoint(p.ws.ckpt(stage).string(), {p.config.serialize(), rng, tensors}, dtype_of(p.config));
}

bool has_prefix(const nn::TensorList& list, const std::string& prefix) {
  for (const auto& nv : list.items())
    if (nv.name.rfind(prefix, 0) == 0) return true;
  return false;
}

// Loads the checkpoints of every stage up to and including `upto`, adopting
// their architecture keys before the models are built.
void load_pipeline(Pipeline& p, const std::string& upto, const std::string& command) {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> owned = {
      {"damsm", {"data.", "text.", "damsm."}}, {"box", {"box."}}, {"shape", {"shape."}}, {"image", {"image."}}};
  std::vector<std::pair<std::string, train::Checkpoint>> cks;
  for (const auto& [stage, prefixes] : owned) {
    require_stage(p.ws, stage, command);
    auto ck = train::load_checkpoint(p.ws.ckpt(stage).string());
    p.config.adopt_arch(ck.config, prefixes);
    cks.emplace_back(stage, std::move(ck));
    if (stage == upto) break;
  }
  load_dataset(p);
  build_models(p);
  for (auto& [stage, ck] : cks) {
    if (stage == "damsm") {
      auto dst = frozen_tensors(p);
      nn::copy_values(ck.tensors, dst);
    } else if (stage == "box") {
      auto dst = box_tensors(p);
      nn::copy_values(ck.tensors, dst);
      if (has_prefix(ck.tensors, "text.")) {
        auto t = text_tensors(p);
        nn::copy_values(ck.tensors, t);
      }
    } else if (stage == "shape") {
      auto dst = shape_tensors(p);
      nn::copy_values(ck.tensors, dst);
    } else {
      auto dst = generator_tensors(p);
      nn::copy_values(ck.tensors, dst);
    }
  }
}

void write_image(const fs::path& path, const Var& batch, int n) {
  const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  const std::size_t per = static_cast<std::size_t>(C) * H * W;
  Image img{C, H, W, std::vector<double>(batch.value().begin() + static_cast<std::ptrdiff_t>(n * per),
                                         batch.value().begin() + static_cast<std::ptrdiff_t>((n + 1) * per))};
  io::write_png(path.string(), img);
}

std::string id4(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", i);
  return buf;
}

void fresh_log(const fs::path& path) { fs::remove(path); }

// ---------------------------------------------------------------------------

int cmd_make_data(Pipeline& p, std::ostream& out) {
  const auto g = grammar_from(p.config);
  auto ds = toy::make_dataset(p.seed, p.config.get_int("data.train"), p.config.get_int("data.test"), g);
  fs::create_directories(p.ws.data());
  toy::write_dataset(ds, p.ws.data().string());
  std::vector<std::string> corpus;
  for (const auto& s : ds.samples) corpus.insert(corpus.end(), s.captions.begin(), s.captions.end());
  text::build_vocab(corpus).save(p.ws.vocab().string());
  out << "wrote " << ds.samples.size() << " scenes to " << p.ws.data().string() << "\n";
  return 0;
}

int cmd_train_damsm(Pipeline& p, std::ostream& out) {
  load_dataset(p);
  build_models(p);
  std::vector<std::vector<damsm::TrainExample>> scenes;
  for (int i : p.ds.train) {
    const auto& s = p.ds.samples[i];
    std::vector<damsm::TrainExample> ex;
    for (const auto& c : s.captions) ex.push_back({&s.image, p.vocab.encode(c)});
    scenes.push_back(std::move(ex));
  }
  damsm::DamsmTrainConfig tc;
  tc.steps = p.config.get_int("damsm.steps");
  tc.batch = p.config.get_int("damsm.batch");
  tc.lr = p.config.get_double("damsm.lr");
  tc.dropout = p.config.get_double("text.dropout") > 0;
  fresh_log(p.ws.log("damsm"));
  train::TrainLog log(p.ws.log("damsm").string());
  double last = 0;
  nn::Rng rng = stage_rng(p.seed, 1);
  damsm::train_damsm(scenes, p.text, p.image_enc, p.dcfg, tc, rng, [&](int step, const damsm::DamsmLoss& l) {
    last = l.total.item();
    log.record({{"step", step}, {"loss", last}, {"w1", l.w1.item()}, {"w2", l.w2.item()}, {"s1", l.s1.item()},
                {"s2", l.s2.item()}});
  });
  p.labels.init_from_words(p.vocab, p.ds.class_names, p.text.label_words);
  save_stage(p, "damsm", frozen_tensors(p), train::rng_state(rng));
  out << "train-damsm: " << tc.steps << " steps, last loss " << fmt(last) << "\n";
  return 0;
}

int cmd_train_box(Pipeline& p, std::ostream& out) {
  load_pipeline(p, "damsm", "train-box");
  std::vector<box::BoxExample> data;
  for (int i : p.ds.train) {
    const auto& s = p.ds.samples[i];
    for (const auto& c : s.captions) data.push_back({p.vocab.encode(c), s.layout.objects});
  }
  box::BoxTrainConfig tc;
  tc.steps = p.config.get_int("box.steps");
  tc.batch = p.config.get_int("box.batch");
  tc.lr = p.config.get_double("box.lr");
  tc.finetune_encoder = p.config.get_bool("box.finetune_encoder");
  fresh_log(p.ws.log("box"));
  train::TrainLog log(p.ws.log("box").string());
  double last = 0;
  nn::Rng rng = stage_rng(p.seed, 2);
  box::train_box_generator(p.boxgen, p.text, data, tc, rng, [&](int step, double nll) {
    last = nll;
    log.record({{"step", step}, {"nll", nll}});
  });
  auto tensors = box_tensors(p);
  if (tc.finetune_encoder) tensors.append(text_tensors(p));
  save_stage(p, "box", tensors, train::rng_state(rng));
  out << "train-box: " << tc.steps << " steps, last nll " << fmt(last) << "\n";
  return 0;
}

int cmd_train_shape(Pipeline& p, std::ostream& out) {
  load_pipeline(p, "box", "train-shape");
  std::vector<shape::ShapeExample> data;
  const int S = p.image_size();
  for (int i : p.ds.train) {
    const auto& s = p.ds.samples[i];
    if (s.layout.size() == 0) continue;
    data.push_back({s.layout.objects, attn::stack_masks(s.layout.masks, S)});
  }
  shape::ShapeTrainConfig tc;
  tc.steps = p.config.get_int("shape.steps");
  tc.lr = p.config.get_double("shape.lr");
  tc.perceptual_weight = p.config.get_double("shape.perceptual_weight");
  fresh_log(p.ws.log("shape"));
  train::TrainLog log(p.ws.log("shape").string());
  shape::ShapeStepLog last{};
  nn::Rng rng = stage_rng(p.seed, 3);
  shape::train_shape_generator(p.shapegen, p.critic, data, tc, rng, [&](int step, const shape::ShapeStepLog& l) {
    last = l;
    log.record({{"step", step}, {"g_loss", l.g_loss}, {"d_loss", l.d_loss}, {"perceptual", l.perceptual}});
  });
  save_stage(p, "shape", shape_tensors(p), train::rng_state(rng));
  out << "train-shape: " << tc.steps << " steps, last perceptual " << fmt(last.perceptual) << "\n";
  return 0;
}

train::ImageTrainConfig image_train_config(const cfg::Config& c) {
  train::ImageTrainConfig tc;
  tc.batch = c.get_int("image.batch");
  tc.lr = c.get_double("image.lr");
  tc.weights.obj = c.get_double("image.lambda_obj");
  tc.weights.txt = c.get_double("image.lambda_txt");
  tc.weights.pix = c.get_double("image.lambda_pix");
  tc.weights.damsm = c.get_double("image.lambda_damsm");
  tc.mismatch = c.get_bool("image.mismatch");
  return tc;
}

int cmd_train_image(Pipeline& p, std::ostream& out) {
  load_pipeline(p, "shape", "train-image");
  const auto tc = image_train_config(p.config);
  const int steps = p.config.get_int("image.steps");
  const int every = std::max(1, p.config.get_int("image.log_every"));
  train::ImageGanTrainer trainer(p.gcfg, p.disc_cfg, tc, {&p.text, &p.labels, &p.image_enc, p.dcfg},
                                 train::image_examples(p.ds, p.ds.train, p.vocab), derive_seed(p.seed, 4, 0));
  fresh_log(p.ws.log("image"));
  train::TrainLog log(p.ws.log("image").string());
  train::StepLog last{};
  for (int s = 0; s < steps; ++s) {
    last = trainer.step();
    if (s % every == 0 || s + 1 == steps)
      log.record({{"step", last.step},
                  {"g_total", last.g_total},
                  {"g_gan", last.g_gan},
                  {"damsm", last.damsm},
                  {"d_patch", last.d_patch},
                  {"d_shape", last.d_shape},
                  {"d_object", last.d_object}});
  }
  const auto snap = trainer.snapshot();
  save_stage(p, "image", snap.tensors, snap.rng_state);
  out << "train-image: " << steps << " steps, last g_total " << fmt(last.g_total) << "\n";
  return 0;
}

// Predicted boxes that cover no pixel centre cannot be rendered and are dropped.
bool covers_pixel(const Box& b, int S) {
  auto any = [S](double lo, double len) {
    const int first = static_cast<int>(std::ceil(lo * S - 0.5));
    return first >= 0 && first < S && (first + 0.5) / S < lo + len;
  };
  return any(b.x, b.w) && any(b.y, b.h);
}

struct Generated {
  std::vector<int> labels;
  BoxSequence boxes;
  Var masks;  // [T,S,S]
  gen::GenOutput out;
  std::vector<std::string> words;
  std::string caption;
};

Generated generate_scene(Pipeline& p, int scene, int setting, std::uint64_t sample_seed) {
  if (setting < 0 || setting > 2) throw UsageError("--setting must be 0, 1 or 2");
  NoGradGuard ng;
  const auto& s = p.ds.samples.at(scene);
  const int S = p.image_size();
  Generated g;
  g.caption = s.captions.at(0);
  const auto ids = p.vocab.encode(g.caption);
  for (int id : ids) g.words.push_back(p.vocab.token(id));
  const text::TextEncoding enc = p.text.encode(ids);
  nn::Rng rng(sample_seed);

  if (setting == 0) {
    const auto mode = p.config.get("sample.box_mode") == "stochastic" ? box::SampleMode::Stochastic
                                                                       : box::SampleMode::Greedy;
    for (const auto& lb : p.boxgen.sample(enc, mode, rng()))
      if (covers_pixel(lb.box, S)) g.boxes.push_back(lb);
  } else {
    g.boxes = s.layout.objects;
  }
  const int T = static_cast<int>(g.boxes.size());
  for (const auto& lb : g.boxes) g.labels.push_back(lb.label);
  if (setting == 2) {
    g.masks = attn::stack_masks(s.layout.masks, S);
  } else {
    const int nz = p.shapegen.config().noise_dim;
    g.masks = p.shapegen.generate(g.boxes, constant({T, nz}, nn::normal_values(rng, static_cast<std::size_t>(T) * nz, 1.0)));
  }
  gen::GenInput in;
  in.text = &enc;
  in.labels = g.labels;
  in.label_emb = p.labels.embed(g.labels);
  in.masks = gen::mask_set(g.masks, p.gcfg);
  in.z = constant({p.gcfg.noise_dim}, nn::normal_values(rng, p.gcfg.noise_dim, 1.0));
  g.out = p.G.forward({in}, false);
  return g;
}

int resolve_setting(const Pipeline& p, const Options& o) {
  const int s = o.setting.value_or(p.config.get_int("eval.setting"));
  if (s < 0 || s > 2) throw cfg::ConfigError("eval.setting must be 0, 1 or 2");
  return s;
}

std::vector<int> first_test(const Pipeline& p, int count) {
  std::vector<int> out(p.ds.test.begin(), p.ds.test.begin() + std::min<std::size_t>(count, p.ds.test.size()));
  if (out.empty()) throw std::runtime_error("the dataset has no test scenes");
  return out;
}

int cmd_sample(Pipeline& p, const Options& o, std::ostream& out) {
  load_pipeline(p, "image", "sample");
  const int setting = resolve_setting(p, o);
  const auto dir = p.ws.root / "samples" / ("setting" + std::to_string(setting));
  fs::create_directories(dir);
  const auto scenes = first_test(p, p.config.get_int("sample.count"));
  for (int scene : scenes) {
    auto g = generate_scene(p, scene, setting, derive_seed(p.seed, 5, scene));
    const auto id = id4(scene);
    for (int k = 0; k < 3; ++k) write_image(dir / (id + "_stage" + std::to_string(k) + ".png"), g.out.images[k], 0);
    write_image(dir / (id + ".png"), g.out.images[2], 0);
    nlohmann::json layout = {{"caption", g.caption}, {"setting", setting}, {"objects", nlohmann::json::array()}};
    for (const auto& lb : g.boxes)
      layout["objects"].push_back({{"label", lb.label},
                                   {"name", p.ds.class_names.at(lb.label)},
                                   {"box", {lb.box.x, lb.box.y, lb.box.w, lb.box.h}}});
    std::ofstream(dir / (id + "_layout.json")) << layout.dump(1) << "\n";
  }
  out << "sample: " << scenes.size() << " images in " << dir.string() << "\n";
  return 0;
}

int cmd_eval(Pipeline& p, const Options& o, std::ostream& out) {
  load_pipeline(p, "image", "eval");
  const int setting = resolve_setting(p, o);
  const auto& scorer = p.config.get("eval.scorer");
  if (scorer != "trained" && scorer != "random") throw cfg::ConfigError("eval.scorer must be trained or random");
  text::TextEncoder score_text = p.text;
  damsm::ImageEncoder score_image = p.image_enc;
  if (scorer == "random") {
    nn::Rng init = stage_rng(p.seed, 7);
    score_text = text::TextEncoder(p.text.config(), init);
    score_image = damsm::ImageEncoder(p.dcfg, init);
  }
  std::vector<std::string> pool;
  for (const auto& s : p.ds.samples) pool.insert(pool.end(), s.captions.begin(), s.captions.end());
  const int distractors = p.config.get_int("eval.distractors");
  nn::Rng rng = stage_rng(p.seed, 6);
  std::vector<damsm::RetrievalQuery> queries;
  std::vector<std::vector<double>> real_feats, fake_feats;
  const auto scenes = first_test(p, p.config.get_int("eval.count"));
  NoGradGuard ng;
  for (int scene : scenes) {
    auto g = generate_scene(p, scene, setting, derive_seed(p.seed, 5, scene));
    const auto fake = score_image.encode(g.out.images[2]);
    const auto& s = p.ds.samples[scene];
    const auto real = score_image.encode(damsm::stack_images({&s.image}));
    fake_feats.push_back(fake.global(0).value());
    real_feats.push_back(real.global(0).value());
    damsm::RetrievalQuery q;
    q.image_global = fake.global(0);
    q.candidates.push_back(g.caption);
    for (auto& d : damsm::pick_distractors(g.caption, pool, distractors, rng)) q.candidates.push_back(d);
    queries.push_back(std::move(q));
  }
  const double rp = damsm::r_precision(queries, p.vocab, score_text);
  const double fd = damsm::frechet_distance(real_feats, fake_feats);
  std::ostringstream report;
  report << "setting=" << setting << "\nscorer=" << scorer << "\nqueries=" << queries.size()
         << "\ndistractors=" << distractors << "\nr_precision=" << fmt(rp) << "\nfrechet_distance=" << fmt(fd)
         << "\n";
  std::ofstream(p.ws.root / ("eval_setting" + std::to_string(setting) + ".txt")) << report.str();
  out << report.str();
  return 0;
}

int cmd_attnviz(Pipeline& p, const Options& o, std::ostream& out) {
  load_pipeline(p, "image", "attnviz");
  const int setting = resolve_setting(p, o);
  const auto scenes = first_test(p, p.config.get_int("attnviz.count"));
  for (int scene : scenes) {
    auto g = generate_scene(p, scene, setting, derive_seed(p.seed, 5, scene));
    const auto dir = p.ws.root / "attention" / ("setting" + std::to_string(setting)) / id4(scene);
    render_attention_maps(g.out.records.at(0), g.words, g.labels, g.masks, p.image_size(), dir.string());
    write_image(dir / "image.png", g.out.images[2], 0);
  }
  out << "attnviz: " << scenes.size() << " scenes in " << (p.ws.root / "attention").string() << "\n";
  return 0;
}

int cmd_gradcheck(Pipeline& p, std::ostream& out) {
  bool ok = true;
  for (const auto& c : gradient_suite(p.seed)) {
    out << c.name << " rel_err=" << fmt(c.rel_err) << " checked=" << c.checked << (c.ok ? " ok" : " FAIL") << "\n";
    ok = ok && c.ok;
  }
  return ok ? 0 : 1;
}

int dispatch(const Options& o, std::ostream& out) {
  if (o.command == "config-reference") {
    if (o.out.empty()) {
      out << cfg::reference();
    } else {
      std::ofstream f(o.out);
      f << cfg::reference();
      if (!f) throw std::runtime_error("cannot write " + o.out);
    }
    return 0;
  }
  Pipeline p;
  if (!o.config_path.empty()) p.config = cfg::Config::load(o.config_path);
  if (o.seed) p.config.set("seed", std::to_string(*o.seed));
  if (o.variant) p.config.set("image.variant", *o.variant);
  static const std::map<std::string, std::string> step_keys = {{"train-damsm", "damsm.steps"},
                                                               {"train-box", "box.steps"},
                                                               {"train-shape", "shape.steps"},
                                                               {"train-image", "image.steps"}};
  if (o.steps) {
    const auto it = step_keys.find(o.command);
    if (it == step_keys.end()) throw UsageError("--steps applies to train-* commands only");
    p.config.set(it->second, std::to_string(*o.steps));
  }
  p.seed = p.config.get_u64("seed");
  p.ws.root = o.out.empty() ? fs::path("workspace") : fs::path(o.out);
  if (o.command != "gradcheck") fs::create_directories(p.ws.root);

  if (o.command == "make-data") return cmd_make_data(p, out);
  if (o.command == "train-damsm") return cmd_train_damsm(p, out);
  if (o.command == "train-box") return cmd_train_box(p, out);
  if (o.command == "train-shape") return cmd_train_shape(p, out);
  if (o.command == "train-image") return cmd_train_image(p, out);
  if (o.command == "sample") return cmd_sample(p, o, out);
  if (o.command == "eval") return cmd_eval(p, o, out);
  if (o.command == "attnviz") return cmd_attnviz(p, o, out);
  if (o.command == "gradcheck") return cmd_gradcheck(p, out);
  throw UsageError("unknown command " + o.command);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Object-driven text-to-image pipeline on procedural toy scenes"};
  app.require_subcommand(1, 1);
  Options o;
  std::uint64_t seed = 0;
  int setting = 0, steps = 0;
  std::string variant;
  auto* o_config = app.add_option("--config", o.config_path, "key=value configuration file");
  auto* o_seed = app.add_option("--seed", seed, "master seed (overrides the config)");
  auto* o_setting = app.add_option("--setting", setting, "layout setting: 0 predicted boxes and shapes, 1 true boxes, "
                                                         "2 true boxes and shapes")
                        ->check(CLI::Range(0, 2));
  auto* o_out = app.add_option("--out", o.out, "workspace directory (config-reference: output file)");
  auto* o_steps = app.add_option("--steps", steps, "training steps for train-* commands")->check(CLI::PositiveNumber);
  auto* o_variant =
      app.add_option("--variant", variant, "discriminator variant")->check(CLI::IsMember({"plain", "sn"}));
  (void)o_config;
  (void)o_out;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"make-data", "generate the toy dataset and vocabulary"},
      {"train-damsm", "pretrain the text and image matching encoders"},
      {"train-box", "train the box generator (needs train-damsm)"},
      {"train-shape", "train the shape generator (needs train-box)"},
      {"train-image", "train the image GAN (needs train-shape)"},
      {"sample", "generate test images for --setting"},
      {"eval", "R-precision and Frechet distance of generated test images"},
      {"attnviz", "render grid and object attention maps"},
      {"gradcheck", "run the finite-difference suite"},
      {"config-reference", "print every configuration key with its default"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  }
  o.command = app.get_subcommands().front()->get_name();
  if (*o_seed) o.seed = seed;
  if (*o_setting) o.setting = setting;
  if (*o_steps) o.steps = steps;
  if (*o_variant) o.variant = variant;
  try {
    return dispatch(o, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace objgan::cli
