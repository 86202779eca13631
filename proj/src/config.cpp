#include "objgan/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace objgan::cfg {

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      {"seed", "0", "master seed; --seed overrides"},
      {"checkpoint.dtype", "f64", "checkpoint tensor encoding: f64 or f32"},

      {"data.train", "64", "training scenes written by make-data"},
      {"data.test", "16", "test scenes written by make-data"},
      {"data.image_size", "64", "scene resolution; must equal 4 * image.s0", true},
      {"data.captions", "2", "captions per scene (1-5)"},

      {"text.embed_dim", "32", "word embedding width", true},
      {"text.hidden", "32", "bi-LSTM units per direction; D = 2 * hidden", true},
      {"text.label_dim", "50", "label-space width N_l", true},
      {"text.max_len", "32", "maximum caption tokens", true},
      {"text.dropout", "0.5", "embedding dropout during matching-model pretraining only"},

      {"damsm.base_channels", "16", "image encoder base width", true},
      {"damsm.gamma1", "5", "region attention sharpness"},
      {"damsm.gamma2", "5", "word relevance aggregation"},
      {"damsm.gamma3", "10", "posterior smoothing"},
      {"damsm.steps", "500", "pretraining steps"},
      {"damsm.batch", "16", "pretraining batch"},
      {"damsm.lr", "0.002", "pretraining Adam learning rate"},

      {"box.attn_dim", "64", "decoder attention width", true},
      {"box.components", "4", "Gaussian components per coordinate head", true},
      {"box.max_objects", "8", "decoding length cap", true},
      {"box.steps", "3000", "training steps"},
      {"box.batch", "16", "training batch"},
      {"box.lr", "0.001", "Adam learning rate"},
      {"box.finetune_encoder", "false", "update the text encoder while training the box decoder"},

      {"shape.base", "16", "shape generator base width", true},
      {"shape.noise_dim", "8", "per-object noise width", true},
      {"shape.cell", "gru", "recurrent cell across objects: gru or lstm", true},
      {"shape.steps", "200", "training steps"},
      {"shape.lr", "0.0002", "Adam learning rate"},
      {"shape.perceptual_weight", "1", "weight of the feature-matching term"},

      {"image.s0", "16", "first-stage resolution", true},
      {"image.ng", "16", "generator width N_g", true},
      {"image.nd", "16", "discriminator width N_d", true},
      {"image.residuals", "3,2,2", "residual blocks per stage", true},
      {"image.noise_dim", "100", "noise width", true},
      {"image.cond_dim", "256", "conditioning width N_e", true},
      {"image.variant", "plain", "discriminator variant: plain or sn; --variant overrides", true},
      {"image.interpolate_objects", "false", "x2 input interpolation in the object towers", true},
      {"image.roi_bins", "5", "ROI-align output bins", true},
      {"image.steps", "500", "adversarial training steps"},
      {"image.batch", "2", "adversarial batch (>= 2)"},
      {"image.lr", "0.0002", "Adam learning rate, all players"},
      {"image.lambda_obj", "0.1", "object-wise adversarial weight"},
      {"image.lambda_txt", "0.1", "conditional patch weight"},
      {"image.lambda_pix", "1", "shape-aware patch weight"},
      {"image.lambda_damsm", "100", "matching loss weight"},
      {"image.mismatch", "true", "mismatched real pairs as extra negatives for conditional heads"},
      {"image.log_every", "1", "training log period in steps"},

      {"sample.count", "8", "test scenes sampled"},
      {"sample.box_mode", "greedy", "box decoding in setting 0: greedy or stochastic"},

      {"eval.count", "16", "test scenes scored (capped at the test split)"},
      {"eval.distractors", "9", "R-precision distractor captions"},
      {"eval.scorer", "trained", "retrieval scorer: trained or random"},
      {"eval.setting", "0", "layout setting for sample, eval and attnviz when --setting is absent"},

      {"attnviz.count", "2", "test scenes rendered"},
  };
  return entries;
}

namespace {

const Entry* find_entry(const std::string& key) {
  for (const auto& e : registry())
    if (e.key == key) return &e;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  return out;
}

}  // namespace

Config::Config() {
  for (const auto& e : registry()) values_[e.key] = e.default_value;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  Config c;
  c.merge_text(ss.str(), path);
  return c;
}

void Config::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::set(const std::string& key, const std::string& value) {
  if (!find_entry(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int Config::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }
std::uint64_t Config::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }
double Config::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool Config::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  return out;
}

void Config::adopt_arch(const std::string& stored, const std::vector<std::string>& prefixes) {
  Config other;
  other.merge_text(stored, "checkpoint config");
  for (const auto& e : registry()) {
    if (!e.arch) continue;
    for (const auto& p : prefixes)
      if (e.key.rfind(p, 0) == 0) values_[e.key] = other.values_[e.key];
  }
}

std::string Config::serialize() const {
  std::string out;
  for (const auto& e : registry()) out += e.key + "=" + values_.at(e.key) + "\n";
  return out;
}

std::string reference() {
  std::ostringstream os;
  os << "# Configuration reference: key=value lines, '#' comments.\n"
     << "# Keys marked [arch] fix tensor shapes; later stages take them from the checkpoint they load.\n";
  std::string group;
  for (const auto& e : registry()) {
    const auto dot = e.key.find('.');
    const std::string g = dot == std::string::npos ? "general" : e.key.substr(0, dot);
    if (g != group) {
      os << "\n# [" << g << "]\n";
      group = g;
    }
    os << e.key << "=" << e.default_value << "    # " << e.help << (e.arch ? " [arch]" : "") << "\n";
  }
  return os.str();
}

}  // namespace objgan::cfg
