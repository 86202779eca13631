#include "objgan/training.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "objgan/attention.hpp"

namespace objgan::train {

using namespace objgan::ag;

namespace {

double neg_log(double p, const char* what) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error(std::string(what) + ": probability outside (0,1)");
  return -std::log(p);
}

double mean_neg_log(const std::vector<double>& ps, const char* what) {
  double s = 0;
  for (double p : ps) s += neg_log(p, what);
  return s / static_cast<double>(ps.size());
}

bool has_entries(const Var& v) { return v.defined() && v.numel() > 0; }

Var mean_nll(const Var& logits) { return mean(softplus(neg(logits))); }

}  // namespace

double generator_gan_loss(const VerdictProbs& v, const LossWeights& w) {
  const std::size_t n = v.pat_un.size();
  if (n == 0 || v.pat_con.size() != n || v.pix.size() != n)
    throw std::invalid_argument("generator_gan_loss: patch verdicts must be non-empty and equally sized");
  if (v.obj_un.size() != v.obj_con.size()) throw std::invalid_argument("generator_gan_loss: object verdict sizes differ");
  double loss = mean_neg_log(v.pat_un, "pat_un") + w.txt * mean_neg_log(v.pat_con, "pat_con") +
                w.pix * mean_neg_log(v.pix, "pix");
  if (!v.obj_un.empty()) loss += w.obj * (mean_neg_log(v.obj_un, "obj_un") + mean_neg_log(v.obj_con, "obj_con"));
  return loss;
}

Var generator_gan_loss(const VerdictLogits& v, const LossWeights& w) {
  if (!has_entries(v.pat_un) || !has_entries(v.pat_con) || !has_entries(v.pix))
    throw std::invalid_argument("generator_gan_loss: patch logits required");
  Var loss = add(add(mean_nll(v.pat_un), scale(mean_nll(v.pat_con), w.txt)), scale(mean_nll(v.pix), w.pix));
  if (has_entries(v.obj_un)) loss = add(loss, scale(add(mean_nll(v.obj_un), mean_nll(v.obj_con)), w.obj));
  return loss;
}

double total_generator_loss(double gan, double damsm, const LossWeights& w) { return gan + w.damsm * damsm; }

Var total_generator_loss(const Var& gan, const Var& damsm, const LossWeights& w) {
  return damsm.defined() ? add(gan, scale(damsm, w.damsm)) : gan;
}

double discriminator_loss(const std::vector<std::vector<double>>& real, const std::vector<std::vector<double>>& fake) {
  if (real.size() != fake.size()) throw std::invalid_argument("discriminator_loss: head count mismatch");
  double loss = 0;
  for (std::size_t h = 0; h < real.size(); ++h) {
    if (real[h].empty() || fake[h].empty()) throw std::invalid_argument("discriminator_loss: empty head");
    loss += mean_neg_log(real[h], "real");
    double f = 0;
    for (double p : fake[h]) f += neg_log(1.0 - p, "fake");
    loss += f / static_cast<double>(fake[h].size());
  }
  return loss;
}

Var discriminator_head_loss(const Var& real_logits, const Var& fake_logits, const Var& wrong_logits) {
  Var neg_term = mean(softplus(fake_logits));
  if (wrong_logits.defined() && wrong_logits.numel() > 0)
    neg_term = scale(add(neg_term, mean(softplus(wrong_logits))), 0.5);
  return add(mean_nll(real_logits), neg_term);
}

std::vector<ImageExample> image_examples(const toy::Dataset& ds, const std::vector<int>& indices,
                                         const text::Vocabulary& vocab) {
  std::vector<ImageExample> out;
  for (int i : indices) {
    const auto& s = ds.samples.at(i);
    ImageExample ex;
    ex.image = &s.image;
    for (const auto& c : s.captions) ex.captions.push_back(vocab.encode(c));
    const int S = s.image.height;
    std::vector<double> m;
    m.reserve(s.layout.size() * S * S);
    for (std::size_t t = 0; t < s.layout.size(); ++t) {
      ex.labels.push_back(s.layout.objects[t].label);
      ex.boxes.push_back(s.layout.objects[t]);
      const auto& mk = s.layout.masks[t];
      if (mk.height != S || mk.width != S) throw ShapeError("image_examples: mask/image size mismatch");
      m.insert(m.end(), mk.data.begin(), mk.data.end());
    }
    ex.masks = constant({static_cast<int>(s.layout.size()), S, S}, std::move(m));
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Var image_var(const Image& img) {
  return constant({1, img.channels, img.height, img.width}, img.data);
}

Var stack0(const std::vector<Var>& xs) { return concat(xs, 0); }

std::vector<int> roll(int n) {
  std::vector<int> r(n);
  for (int i = 0; i < n; ++i) r[i] = (i + 1) % n;
  return r;
}

void check_finite(int step, const char* what, double v) {
  if (!std::isfinite(v))
    throw std::runtime_error("image GAN step " + std::to_string(step) + ": non-finite " + what + " (" +
                             std::to_string(v) + ")");
}

}  // namespace

ImageGanTrainer::ImageGanTrainer(const gen::GenConfig& gcfg, const disc::DiscConfig& dcfg, const ImageTrainConfig& tc,
                                 const FrozenModels& frozen, std::vector<ImageExample> data, std::uint64_t seed)
    : gcfg_(gcfg), dcfg_(dcfg), tc_(tc), frozen_(frozen), data_(std::move(data)), rng_(seed) {
  if (data_.empty()) throw std::invalid_argument("ImageGanTrainer: empty dataset");
  if (tc_.batch < 2) throw std::invalid_argument("ImageGanTrainer: batch must be >= 2 (batch-normalised FC input)");
  if (!frozen_.text || !frozen_.labels) throw std::invalid_argument("ImageGanTrainer: text encoder and label embeddings required");
  if (tc_.weights.damsm > 0 && !frozen_.damsm_image)
    throw std::invalid_argument("ImageGanTrainer: matching-loss weight > 0 needs an image encoder");
  if (dcfg_.s0 != gcfg_.s0) throw std::invalid_argument("ImageGanTrainer: generator and discriminator S0 differ");

  Rng init(seed ^ 0x9e3779b97f4a7c15ULL);
  G = gen::ImageGenerator(gcfg_, init);
  for (int k = 0; k < 3; ++k) {
    patch[k] = disc::PatchDiscriminator(dcfg_, k, init);
    shape[k] = disc::ShapeDiscriminator(dcfg_, k, init);
  }
  object = disc::ObjectDiscriminator(dcfg_, init);

  G.collect(gsd_, "G");
  dsd_.resize(7);
  for (int k = 0; k < 3; ++k) {
    patch[k].collect(dsd_[k], "Dpat" + std::to_string(k));
    shape[k].collect(dsd_[3 + k], "Dshp" + std::to_string(k));
  }
  object.collect(dsd_[6], "Dobj");
  gopt_ = nn::Adam(tc_.lr, tc_.beta1, tc_.beta2);
  dopt_.assign(7, nn::Adam(tc_.lr, tc_.beta1, tc_.beta2));

  const int full = gcfg_.stage_size(2);
  NoGradGuard ng;
  for (const auto& ex : data_) {
    if (!ex.image || ex.image->height != full || ex.image->width != full || ex.image->channels != 3)
      throw ShapeError("ImageGanTrainer: images must be 3x" + std::to_string(full) + "x" + std::to_string(full));
    const int T = static_cast<int>(ex.labels.size());
    if (ex.masks.shape() != Shape{T, full, full} || static_cast<int>(ex.boxes.size()) != T)
      throw ShapeError("ImageGanTrainer: masks/boxes must match the label count");
    if (ex.captions.empty()) throw std::invalid_argument("ImageGanTrainer: example without captions");
    Prepared p;
    Var img = image_var(*ex.image);
    for (int k = 0; k < 3; ++k) {
      const int f = full / gcfg_.stage_size(k);
      p.real[k] = f == 1 ? img : avg_pool2d(img, f);
    }
    p.masks = gen::mask_set(ex.masks, gcfg_);
    for (int k = 0; k < 3; ++k) {
      Var cm = attn::class_channel_map(ex.labels, p.masks[k + 1], gcfg_.num_classes);
      p.class_maps[k] = reshape(cm, {1, cm.dim(0), cm.dim(1), cm.dim(2)});
    }
    for (const auto& cap : ex.captions) p.captions.push_back(frozen_.text->encode(cap));
    p.label_emb = frozen_.labels->embed(ex.labels);
    prep_.push_back(std::move(p));
  }
}

gen::GenInput ImageGanTrainer::input_for(int idx, int caption, Var z) const {
  gen::GenInput in;
  in.text = &prep_[idx].captions[caption];
  in.labels = data_[idx].labels;
  in.label_emb = prep_[idx].label_emb;
  in.masks = prep_[idx].masks;
  in.z = std::move(z);
  return in;
}

int ImageGanTrainer::random_other_label(int label, Rng& rng) const {
  const int L = gcfg_.num_classes;
  if (L < 2) return label;
  return (label + 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(L - 1))) % L;
}

gen::GenOutput ImageGanTrainer::generate(const std::vector<int>& indices, Rng& rng, bool train) const {
  std::vector<gen::GenInput> inputs;
  for (int idx : indices) {
    const int cap = static_cast<int>(rng() % prep_[idx].captions.size());
    inputs.push_back(input_for(idx, cap, constant({gcfg_.noise_dim}, nn::normal_values(rng, gcfg_.noise_dim, 1.0))));
  }
  return G.forward(inputs, train);
}

ImageGanTrainer::Batch ImageGanTrainer::draw_batch(Rng& rng) const {
  const int B = tc_.batch;
  Batch batch;
  batch.idx.resize(B);
  batch.caps.resize(B);
  for (int b = 0; b < B; ++b) {
    batch.idx[b] = static_cast<int>(rng() % data_.size());
    batch.caps[b] = static_cast<int>(rng() % prep_[batch.idx[b]].captions.size());
    batch.inputs.push_back(input_for(batch.idx[b], batch.caps[b],
                                     constant({gcfg_.noise_dim}, nn::normal_values(rng, gcfg_.noise_dim, 1.0))));
  }
  for (int b = 0; b < B; ++b) {
    std::vector<int> other;
    for (int l : data_[batch.idx[b]].labels) other.push_back(random_other_label(l, rng));
    NoGradGuard ng;
    batch.wrong_labels.push_back(frozen_.labels->embed(other));
  }
  for (int k = 0; k < 3; ++k) {
    std::vector<Var> r, m;
    for (int i : batch.idx) {
      r.push_back(prep_[i].real[k]);
      m.push_back(prep_[i].class_maps[k]);
    }
    batch.real[k] = stack0(r);
    batch.maps[k] = stack0(m);
  }
  return batch;
}

disc::ObjectInputs ImageGanTrainer::object_inputs(const Batch& batch, const gen::GenOutput& out, bool detach_context,
                                                  bool wrong) const {
  disc::ObjectInputs o;
  for (std::size_t b = 0; b < batch.idx.size(); ++b) {
    o.boxes.push_back(data_[batch.idx[b]].boxes);
    const Var& c = out.records[b].obj_context;
    o.c_obj.push_back(detach_context ? detach(c) : c);
    o.label_emb.push_back(wrong ? batch.wrong_labels[b] : prep_[batch.idx[b]].label_emb);
  }
  return o;
}

Var ImageGanTrainer::generator_loss(const Batch& batch, const gen::GenOutput& out, StepLog& log) const {
  const int B = static_cast<int>(batch.idx.size());
  const auto& w = tc_.weights;
  Var gan = zeros({});
  for (int k = 0; k < 3; ++k) {
    VerdictLogits v;
    auto p = patch[k].forward(out.images[k], out.cond, true);
    v.pat_un = p.un;
    v.pat_con = p.con;
    v.pix = shape[k].forward(out.images[k], batch.maps[k], true);
    gan = add(gan, generator_gan_loss(v, w));
  }
  const auto objs = object_inputs(batch, out, false, false);
  if (objs.count() > 0) {
    // Object term normalised by each image's own object count, then averaged over the batch.
    auto o = object.forward(out.images[2], batch.maps[2], objs, true);
    int offset = 0;
    for (int b = 0; b < B; ++b) {
      const int T = static_cast<int>(objs.boxes[b].size());
      if (T == 0) continue;
      Var term = add(mean_nll(narrow(o.un, 0, offset, T)), mean_nll(narrow(o.con, 0, offset, T)));
      gan = add(gan, scale(term, w.obj / B));
      offset += T;
    }
  }
  Var dl;
  if (w.damsm > 0) {
    std::vector<text::TextEncoding> encs;
    for (int b = 0; b < B; ++b) encs.push_back(prep_[batch.idx[b]].captions[batch.caps[b]]);
    dl = damsm::damsm_loss(frozen_.damsm_image->encode(out.images[2]), encs, frozen_.damsm_cfg).total;
  }
  Var total = total_generator_loss(gan, dl, w);
  log.g_gan = gan.item();
  log.damsm = dl.defined() ? dl.item() : 0.0;
  log.g_total = total.item();
  return total;
}

StepLog ImageGanTrainer::evaluate(int batches, std::uint64_t seed) const {
  if (batches < 1) throw std::invalid_argument("evaluate: batches must be positive");
  Rng rng(seed);
  NoGradGuard ng;
  StepLog mean_log;
  mean_log.step = step_;
  for (int i = 0; i < batches; ++i) {
    Batch batch = draw_batch(rng);
    StepLog log;
    generator_loss(batch, G.forward(batch.inputs, true), log);
    mean_log.g_total += log.g_total / batches;
    mean_log.g_gan += log.g_gan / batches;
    mean_log.damsm += log.damsm / batches;
  }
  return mean_log;
}

StepLog ImageGanTrainer::step() {
  const int B = tc_.batch;
  StepLog log;
  log.step = step_;

  Batch batch = draw_batch(rng_);
  gen::GenOutput out = G.forward(batch.inputs, true);
  const auto& real = batch.real;
  const auto& maps = batch.maps;
  const auto obj_true = object_inputs(batch, out, true, false);
  const auto obj_wrong = object_inputs(batch, out, true, true);
  const bool any_objects = obj_true.count() > 0;

  // Discriminator update on real vs detached fake.
  const std::uint64_t g_before = tc_.check_partition ? nn::hash_tensors(gsd_.params) : 0;
  {
    Var cond = detach(out.cond);
    Var wrong_cond = tc_.mismatch ? index_select(cond, roll(B)) : Var();
    Var d_patch = zeros({}), d_shape = zeros({}), d_obj = zeros({});
    for (int k = 0; k < 3; ++k) {
      Var fake = detach(out.images[k]);
      auto pr = patch[k].forward(real[k], cond, true);
      auto pf = patch[k].forward(fake, cond, true);
      Var pw = tc_.mismatch ? patch[k].forward(real[k], wrong_cond, true).con : Var();
      d_patch = add(d_patch, add(discriminator_head_loss(pr.un, pf.un), discriminator_head_loss(pr.con, pf.con, pw)));
      d_shape = add(d_shape, discriminator_head_loss(shape[k].forward(real[k], maps[k], true),
                                                     shape[k].forward(fake, maps[k], true)));
    }
    if (any_objects) {
      Var fake = detach(out.images[2]);
      auto orl = object.forward(real[2], maps[2], obj_true, true);
      auto ofk = object.forward(fake, maps[2], obj_true, true);
      Var ow = tc_.mismatch ? object.forward(real[2], maps[2], obj_wrong, true).con : Var();
      d_obj = add(discriminator_head_loss(orl.un, ofk.un), discriminator_head_loss(orl.con, ofk.con, ow));
    }
    log.d_patch = d_patch.item();
    log.d_shape = d_shape.item();
    log.d_object = d_obj.item();
    check_finite(step_, "patch discriminator loss", log.d_patch);
    check_finite(step_, "shape discriminator loss", log.d_shape);
    check_finite(step_, "object discriminator loss", log.d_object);
    for (auto& sd : dsd_) sd.params.zero_grad();
    add(add(d_patch, d_shape), d_obj).backward();
    for (std::size_t i = 0; i < dsd_.size(); ++i) dopt_[i].step(dsd_[i].params);
  }
  if (tc_.check_partition && nn::hash_tensors(gsd_.params) != g_before)
    throw std::logic_error("discriminator update modified generator parameters");

  // Generator update against the refreshed discriminators.
  std::vector<std::uint64_t> d_before;
  if (tc_.check_partition)
    for (const auto& sd : dsd_) d_before.push_back(nn::hash_tensors(sd.params));
  {
    Var total = generator_loss(batch, out, log);
    check_finite(step_, "generator GAN loss", log.g_gan);
    check_finite(step_, "matching loss", log.damsm);
    gsd_.params.zero_grad();
    total.backward();
    gopt_.step(gsd_.params);
  }
  if (tc_.check_partition)
    for (std::size_t i = 0; i < dsd_.size(); ++i)
      if (nn::hash_tensors(dsd_[i].params) != d_before[i])
        throw std::logic_error("generator update modified discriminator parameters");
  ++step_;
  return log;
}

ObjectProbe ImageGanTrainer::probe_objects(int batches, bool fake, std::uint64_t seed) const {
  Rng rng(seed);
  NoGradGuard ng;
  ObjectProbe probe;
  double sm = 0, sw = 0;
  for (int it = 0; it < batches; ++it) {
    std::vector<int> idx;
    for (int b = 0; b < tc_.batch; ++b) idx.push_back(static_cast<int>(rng() % data_.size()));
    gen::GenOutput out = generate(idx, rng, false);
    disc::ObjectInputs t, wr;
    std::vector<Var> imgs, maps;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& ex = data_[idx[b]];
      t.boxes.push_back(ex.boxes);
      t.c_obj.push_back(out.records[b].obj_context);
      t.label_emb.push_back(prep_[idx[b]].label_emb);
      std::vector<int> other;
      for (int l : ex.labels) other.push_back(random_other_label(l, rng));
      wr.boxes.push_back(ex.boxes);
      wr.c_obj.push_back(out.records[b].obj_context);
      wr.label_emb.push_back(frozen_.labels->embed(other));
      imgs.push_back(prep_[idx[b]].real[2]);
      maps.push_back(prep_[idx[b]].class_maps[2]);
    }
    if (t.count() == 0) continue;
    Var x = fake ? out.images[2] : stack0(imgs);
    Var m = stack0(maps);
    Var pm = sigmoid(object.forward(x, m, t, false).con);
    Var pw = sigmoid(object.forward(x, m, wr, false).con);
    for (std::size_t i = 0; i < pm.numel(); ++i) {
      sm += pm.at(i);
      sw += pw.at(i);
    }
    probe.objects += static_cast<int>(pm.numel());
  }
  if (probe.objects > 0) {
    probe.matched = sm / probe.objects;
    probe.mismatched = sw / probe.objects;
  }
  return probe;
}

nn::StateDict ImageGanTrainer::generator_state() const { return gsd_; }

nn::StateDict ImageGanTrainer::discriminator_state() const {
  nn::StateDict all;
  for (const auto& sd : dsd_) {
    all.params.append(sd.params);
    all.buffers.append(sd.buffers);
  }
  return all;
}

ImageGanTrainer::Snapshot ImageGanTrainer::snapshot() const {
  Snapshot s;
  s.tensors.append(gsd_.params);
  s.tensors.append(gsd_.buffers);
  gopt_.export_state(s.tensors, "adam.G", gsd_.params);
  for (std::size_t i = 0; i < dsd_.size(); ++i) {
    s.tensors.append(dsd_[i].params);
    s.tensors.append(dsd_[i].buffers);
    dopt_[i].export_state(s.tensors, "adam.D" + std::to_string(i), dsd_[i].params);
  }
  s.rng_state = rng_state(rng_);
  s.step = step_;
  s.tensors.add("trainer.step", constant({1}, {static_cast<double>(step_)}));
  return s;
}

void ImageGanTrainer::restore(const Snapshot& s) {
  nn::TensorList dst;
  dst.append(gsd_.params);
  dst.append(gsd_.buffers);
  for (const auto& sd : dsd_) {
    dst.append(sd.params);
    dst.append(sd.buffers);
  }
  nn::copy_values(s.tensors, dst);
  gopt_.import_state(s.tensors, "adam.G", gsd_.params);
  for (std::size_t i = 0; i < dsd_.size(); ++i) dopt_[i].import_state(s.tensors, "adam.D" + std::to_string(i), dsd_[i].params);
  set_rng_state(rng_, s.rng_state);
  step_ = static_cast<int>(s.step);
  for (const auto& nv : s.tensors.items())
    if (nv.name == "trainer.step") step_ = static_cast<int>(nv.var.at(0));
}

// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'O', 'B', 'J', 'G', 'A', 'N', 'C', 'K'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError(std::string("checkpoint truncated reading ") + what);
  return v;
}

std::string get_string(std::istream& is, std::uint64_t limit, const char* what) {
  const auto n = get<std::uint64_t>(is, what);
  if (n > limit) throw CheckpointError(std::string("checkpoint field too long: ") + what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError(std::string("checkpoint truncated reading ") + what);
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck, DType dtype) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  put_string(os, ck.config);
  put_string(os, ck.rng_state);
  put<std::uint64_t>(os, ck.tensors.size());
  for (const auto& nv : ck.tensors.items()) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(nv.name.size()));
    os.write(nv.name.data(), static_cast<std::streamsize>(nv.name.size()));
    const auto& shape = nv.var.shape();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put<std::int64_t>(os, d);
    if (dtype == DType::F64) {
      os.write(reinterpret_cast<const char*>(nv.var.data()), static_cast<std::streamsize>(nv.var.numel() * sizeof(double)));
    } else {
      for (double v : nv.var.value()) put<float>(os, static_cast<float>(v));
    }
  }
  if (!os) throw CheckpointError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw CheckpointError(path + ": not a checkpoint (bad magic)");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError(path + ": checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto dtype = get<std::uint8_t>(is, "dtype");
  if (dtype > 1) throw CheckpointError(path + ": unknown dtype " + std::to_string(dtype));
  Checkpoint ck;
  ck.config = get_string(is, 1u << 24, "config");
  ck.rng_state = get_string(is, 1u << 20, "rng state");
  const auto count = get<std::uint64_t>(is, "tensor count");
  if (count > (1u << 20)) throw CheckpointError(path + ": implausible tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(is, "name length");
    if (name_len > 4096) throw CheckpointError(path + ": tensor name too long");
    std::string name(name_len, '\0');
    if (name_len && !is.read(name.data(), name_len)) throw CheckpointError(path + ": truncated tensor name");
    const auto rank = get<std::uint32_t>(is, "rank");
    if (rank > 8) throw CheckpointError(path + ": implausible rank for " + name);
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = get<std::int64_t>(is, "dim");
      if (d < 0 || d > (1 << 30)) throw CheckpointError(path + ": bad dimension for " + name);
      shape.push_back(static_cast<int>(d));
      numel *= static_cast<std::uint64_t>(d);
    }
    if (numel > (1ull << 32)) throw CheckpointError(path + ": tensor too large: " + name);
    std::vector<double> values(numel);
    if (dtype == 0) {
      if (numel && !is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(numel * sizeof(double))))
        throw CheckpointError(path + ": truncated data for " + name);
    } else {
      for (auto& v : values) v = get<float>(is, "data");
    }
    ck.tensors.add(name, constant(shape, std::move(values)));
  }
  return ck;
}

std::string format_record(const std::vector<std::pair<std::string, double>>& fields) {
  std::string line;
  char buf[64];
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ' ';
    line += fields[i].first;
    line += '=';
    auto res = std::to_chars(buf, buf + sizeof(buf), fields[i].second);
    line.append(buf, res.ptr);
  }
  return line;
}

TrainLog::TrainLog(const std::string& path) : out_(path, std::ios::app) {
  if (!out_) throw std::runtime_error("cannot open log " + path);
}

void TrainLog::record(const std::vector<std::pair<std::string, double>>& fields) {
  out_ << format_record(fields) << '\n';
  out_.flush();
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw CheckpointError("invalid RNG state");
}

}  // namespace objgan::train
