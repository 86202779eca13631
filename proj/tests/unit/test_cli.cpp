#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "objgan/attention.hpp"
#include "objgan/cli.hpp"
#include "objgan/config.hpp"

using namespace objgan;
using namespace objgan::ag;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int rc = cli::run(args, out, err);
  if (out_text) *out_text = out.str();
  return rc;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

std::vector<std::vector<double>> read_matrix(const fs::path& p) {
  std::vector<std::vector<double>> rows;
  std::ifstream f(p);
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::vector<double> r;
    double v;
    while (ls >> v) r.push_back(v);
    rows.push_back(r);
  }
  return rows;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("objgan_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("brightness scaling of a 2x2 map matches hand values", "[cli]") {
  auto g = cli::render_map({0.0, 0.25, 0.5, 1.0}, 2, 2, 1);
  CHECK(g.pixels == std::vector<std::uint8_t>{0, 64, 128, 255});
  auto up = cli::render_map({0.0, 0.25, 0.5, 1.0}, 2, 2, 2);
  REQUIRE(up.height == 4);
  CHECK(up.pixels == std::vector<std::uint8_t>{0, 0, 64, 64, 0, 0, 64, 64, 128, 128, 255, 255, 128, 128, 255, 255});
  CHECK(cli::brightness(-0.1) == 0);
  CHECK(cli::brightness(1.7) == 255);
  CHECK(cli::brightness(1.0 / 510.0) == 1);  // exactly half rounds up
}

TEST_CASE("uniform attention renders uniformly gray", "[cli]") {
  auto g = cli::render_map(std::vector<double>(9, 0.25), 3, 3, 3);
  for (auto px : g.pixels) CHECK(px == 64);
}

TEST_CASE("argmax prefers the first of tied entries", "[cli]") {
  CHECK(cli::argmax({0.1, 0.4, 0.4, 0.1}) == 1);
  CHECK_THROWS(cli::argmax({}));
}

TEST_CASE("object attention picks the class word when the label matches its embedding", "[cli]") {
  // Orthogonal word keys; the label query equals the key of word 2.
  const int Ts = 4, Nl = 4;
  std::vector<double> keys(Ts * Nl, 0.0);
  for (int j = 0; j < Ts; ++j) keys[j * Nl + j] = 3.0;
  Var k = constant({Ts, Nl}, keys);
  Var q = constant({1, Nl}, {0.0, 0.0, 3.0, 0.0});
  Var v = constant({2, Ts}, std::vector<double>(2 * Ts, 1.0));
  gen::SampleRecord rec;
  rec.obj_beta = attn::object_attention(q, k, v, std::vector<bool>(Ts, false)).beta;
  const auto dir = temp_dir("objattn");
  cli::render_attention_maps(rec, {"a", "red", "circle", "here"}, {5}, constant({1, 2, 2}, {1, 0, 0, 1}), 2,
                             dir.string());
  std::ifstream f(dir / "objects.txt");
  int t, label, j;
  std::string word;
  double w;
  f >> t >> label >> j >> word >> w;
  CHECK(word == "circle");
  CHECK(j == 2);
  CHECK(label == 5);
  CHECK(fs::exists(dir / "object_0.png"));
  fs::remove_all(dir);
}

TEST_CASE("config defaults, parsing and errors", "[cli][config]") {
  cfg::Config c;
  CHECK(c.get_int("image.s0") == 16);
  CHECK(c.get_double("image.lambda_damsm") == 100);
  CHECK(c.get_double("image.lambda_obj") == 0.1);
  CHECK(c.get_int_list("image.residuals") == std::vector<int>{3, 2, 2});
  c.merge_text("# comment\n image.ng = 8  # trailing\n\nseed=7\n", "test");
  CHECK(c.get_int("image.ng") == 8);
  CHECK(c.get_u64("seed") == 7);
  CHECK_THROWS_AS(c.merge_text("nonsense.key=1\n", "test"), cfg::ConfigError);
  CHECK_THROWS_AS(c.merge_text("no equals sign\n", "test"), cfg::ConfigError);
  c.set("image.ng", "eight");
  CHECK_THROWS_AS(c.get_int("image.ng"), cfg::ConfigError);
  c.set("image.mismatch", "maybe");
  CHECK_THROWS_AS(c.get_bool("image.mismatch"), cfg::ConfigError);
}

TEST_CASE("config reference documents every key and parses back to the defaults", "[cli][config]") {
  const auto ref = cfg::reference();
  for (const auto& e : cfg::registry()) CHECK(ref.find(e.key + "=") != std::string::npos);
  cfg::Config c;
  c.merge_text(ref, "reference");
  CHECK(c.serialize() == cfg::Config().serialize());
}

TEST_CASE("adopting architecture keys is scoped by prefix", "[cli][config]") {
  cfg::Config stored;
  stored.set("image.ng", "8");
  stored.set("box.components", "2");
  stored.set("image.steps", "9");
  cfg::Config c;
  c.adopt_arch(stored.serialize(), {"image."});
  CHECK(c.get_int("image.ng") == 8);
  CHECK(c.get_int("image.steps") == 500);   // not an arch key
  CHECK(c.get_int("box.components") == 4);  // other prefix
}

TEST_CASE("usage errors exit with status 2", "[cli]") {
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"frobnicate"}) == 2);
  CHECK(run_cli({"sample", "--no-such-flag"}) == 2);
  CHECK(run_cli({"sample", "--setting", "3"}) == 2);
  CHECK(run_cli({"train-image", "--variant", "fancy"}) == 2);
  CHECK(run_cli({"eval", "--steps", "3"}) == 2);
}

TEST_CASE("config-reference and gradcheck succeed", "[cli]") {
  std::string text;
  CHECK(run_cli({"config-reference"}, &text) == 0);
  CHECK(text.find("image.lambda_damsm=100") != std::string::npos);
  CHECK(run_cli({"gradcheck", "--seed", "3"}, &text) == 0);
  CHECK(text.find("FAIL") == std::string::npos);
  CHECK(text.find("roi_align") != std::string::npos);
}

TEST_CASE("gradient suite covers the required operations", "[cli]") {
  const auto checks = cli::gradient_suite(11);
  std::vector<std::string> names;
  for (const auto& c : checks) {
    names.push_back(c.name);
    CHECK(c.ok);
    CHECK(c.checked > 0);
  }
  for (const char* n : {"roi_align", "distribute_contexts", "gmm_nll", "grid_attention", "object_attention",
                        "relevance", "generator_end_to_end"})
    CHECK(std::find(names.begin(), names.end(), n) != names.end());
}

TEST_CASE("stages must run in order", "[cli]") {
  const auto ws = temp_dir("order");
  CHECK(run_cli({"train-damsm", "--out", ws.string()}) == 1);  // no dataset
  CHECK(run_cli({"train-image", "--out", ws.string()}) == 1);
  CHECK(run_cli({"sample", "--out", ws.string()}) == 1);
  fs::remove_all(ws);
}

TEST_CASE("tiny pipeline runs end to end and repeats byte for byte", "[cli][slow]") {
  const auto ws = temp_dir("pipeline");
  const auto cfg_path = ws / "tiny.cfg";
  std::ofstream(cfg_path) << "data.train=6\ndata.test=30\ndata.image_size=32\nimage.s0=8\nimage.ng=4\nimage.nd=4\n"
                             "image.residuals=1,1,1\nimage.noise_dim=8\nimage.cond_dim=16\ntext.embed_dim=8\n"
                             "text.hidden=8\ntext.label_dim=8\ndamsm.base_channels=4\ndamsm.steps=2\ndamsm.batch=4\n"
                             "box.attn_dim=8\nbox.steps=2\nbox.batch=4\nshape.base=4\nshape.steps=2\nimage.steps=2\n"
                             "sample.count=2\neval.count=30\neval.scorer=random\nattnviz.count=1\n";
  const auto root = (ws / "run").string();
  auto cmd = [&](std::vector<std::string> a) {
    a.insert(a.end(), {"--config", cfg_path.string(), "--out", root, "--seed", "5"});
    return run_cli(a);
  };
  REQUIRE(cmd({"make-data"}) == 0);
  REQUIRE(cmd({"train-damsm"}) == 0);
  REQUIRE(cmd({"train-box"}) == 0);
  REQUIRE(cmd({"train-shape"}) == 0);
  REQUIRE(cmd({"train-image"}) == 0);
  for (const char* s : {"0", "1", "2"}) REQUIRE(cmd({"sample", "--setting", s}) == 0);
  REQUIRE(cmd({"attnviz", "--setting", "2"}) == 0);
  const auto ckpt = slurp(fs::path(root) / "image.ckpt");
  const auto img = slurp(fs::path(root) / "samples" / "setting1" / "0006.png");
  CHECK(!img.empty());

  // Attention rows are distributions over words.
  const auto adir = fs::path(root) / "attention" / "setting2" / "0006";
  for (const char* f : {"grid_stage1.txt", "grid_stage2.txt", "object_beta.txt"}) {
    const auto rows = read_matrix(adir / f);
    REQUIRE(!rows.empty());
    for (const auto& r : rows) {
      double s = 0;
      for (double v : r) s += v;
      CHECK(std::abs(s - 1) < 1e-9);
    }
  }

  // Untrained scorer with 9 distractors sits near chance (0.1).
  std::string report;
  {
    std::ostringstream out, err;
    REQUIRE(cli::run({"eval", "--config", cfg_path.string(), "--out", root, "--seed", "5"}, out, err) == 0);
    report = out.str();
  }
  const auto pos = report.find("r_precision=");
  REQUIRE(pos != std::string::npos);
  const double rp = std::stod(report.substr(pos + 12));
  CHECK(rp <= 0.3);

  REQUIRE(cmd({"train-image"}) == 0);
  REQUIRE(cmd({"sample", "--setting", "1"}) == 0);
  CHECK(slurp(fs::path(root) / "image.ckpt") == ckpt);
  CHECK(slurp(fs::path(root) / "samples" / "setting1" / "0006.png") == img);
  fs::remove_all(ws);
}
