#include "lostgan/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "lostgan/error.hpp"
#include "lostgan/ops.hpp"

namespace lostgan {

using nlohmann::json;
namespace fs = std::filesystem;

double hinge_d_term(double s, bool is_real) noexcept { return std::max(0.0, is_real ? 1.0 - s : 1.0 + s); }

ag::Var hinge_d_term(const ag::Var& s, bool is_real) {
  return ag::mean(ag::relu(ag::add_scalar(is_real ? ag::scale(s, -1.0) : s, 1.0)));
}

json LossReport::to_json() const {
  return {{"d_loss_real_img", d_loss_real_img}, {"d_loss_fake_img", d_loss_fake_img},
          {"d_loss_real_obj", d_loss_real_obj}, {"d_loss_fake_obj", d_loss_fake_obj},
          {"d_total", d_total},                 {"g_loss_img", g_loss_img},
          {"g_loss_obj", g_loss_obj},           {"g_total", g_total}};
}

ScoreRecord ScoreRecord::from(const DiscriminatorScores& scores) {
  auto copy = [](const ag::Var& v) { return std::vector<double>(v.value().values().begin(), v.value().values().end()); };
  return {copy(scores.s_img), copy(scores.s_obj), copy(scores.s_obj_each), scores.object_sample};
}

namespace {

double hinge_mean(const std::vector<double>& s, bool is_real) {
  if (s.empty()) throw Error(ErrorCode::kInvalidArgument, "empty score vector");
  double total = 0.0;
  for (double v : s) total += hinge_d_term(v, is_real);
  return total / static_cast<double>(s.size());
}

double plain_mean(const std::vector<double>& s) {
  if (s.empty()) throw Error(ErrorCode::kInvalidArgument, "empty score vector");
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

std::vector<double> head(const Tensor& t, std::int64_t from, std::int64_t count) {
  return {t.data() + from, t.data() + from + count};
}

// Hinge objective over a concatenated [real; fake] pass: s_img and s_obj hold
// 2n per-sample scores with the real half first.
ag::Var combined_d_objective(const ag::Var& s_img, const ag::Var& s_obj, std::int64_t n, double lambda) {
  double value = 0.0;
  for (std::int64_t i = 0; i < 2 * n; ++i) {
    const bool real = i < n;
    value += (hinge_d_term(s_img.value()[i], real) + lambda * hinge_d_term(s_obj.value()[i], real)) / static_cast<double>(n);
  }
  return ag::make_result(Tensor::scalar(value), {s_img, s_obj}, [n, lambda](ag::Node& self) {
    const double g = self.grad[0] / static_cast<double>(n);
    for (std::size_t k = 0; k < 2; ++k) {
      if (!self.inputs[k]->requires_grad) continue;
      const double weight = k == 0 ? 1.0 : lambda;
      Tensor& gs = self.inputs[k]->grad_buffer();
      const Tensor& s = self.inputs[k]->value;
      for (std::int64_t i = 0; i < 2 * n; ++i) {
        const bool real = i < n;
        if (real && 1.0 - s[i] > 0.0) gs[i] -= weight * g;
        if (!real && 1.0 + s[i] > 0.0) gs[i] += weight * g;
      }
    }
  });
}

}  // namespace

LossReport d_losses_from_scores(const std::vector<double>& real_img, const std::vector<double>& real_obj,
                                const std::vector<double>& fake_img, const std::vector<double>& fake_obj,
                                double lambda) {
  LossReport r;
  r.d_loss_real_img = hinge_mean(real_img, true);
  r.d_loss_fake_img = hinge_mean(fake_img, false);
  r.d_loss_real_obj = hinge_mean(real_obj, true);
  r.d_loss_fake_obj = hinge_mean(fake_obj, false);
  r.d_total = r.d_loss_real_img + r.d_loss_fake_img;
  if (lambda != 0.0) r.d_total += lambda * (r.d_loss_real_obj + r.d_loss_fake_obj);
  return r;
}

LossReport g_losses_from_scores(const std::vector<double>& fake_img, const std::vector<double>& fake_obj,
                                double lambda) {
  LossReport r;
  r.g_loss_img = -plain_mean(fake_img);
  r.g_loss_obj = -plain_mean(fake_obj);
  r.g_total = r.g_loss_img;
  if (lambda != 0.0) r.g_total += lambda * r.g_loss_obj;
  return r;
}

Adam::Adam(const ParameterSet& params, AdamConfig config) : params_(params.parameters), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& var = params_[k].var;
    if (!var.has_grad()) continue;
    const Tensor g = var.grad();
    Tensor& w = var.mutable_value();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      w[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

std::map<std::string, Tensor*> Adam::state() {
  std::map<std::string, Tensor*> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out["m/" + params_[k].name] = &m_[k];
    out["v/" + params_[k].name] = &v_[k];
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::kInvalidArgument, "lambda must be >= 0");
  if (!(g_lr > 0.0) || !(d_lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rates must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw Error(ErrorCode::kInvalidArgument, "Adam moments must lie in [0, 1)");
  if (batch_size < 1 || total_steps < 0 || checkpoint_every < 0 || sample_every < 0 || log_every < 0 || eval_every < 0 ||
      eval_layouts < 1) {
    throw Error(ErrorCode::kInvalidArgument, "train config counts must be non-negative");
  }
}

json TrainConfig::to_json() const {
  return {{"lambda", lambda},
          {"g_lr", g_lr},
          {"d_lr", d_lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"batch_size", batch_size},
          {"total_steps", total_steps},
          {"checkpoint_every", checkpoint_every},
          {"sample_every", sample_every},
          {"log_every", log_every},
          {"eval_every", eval_every},
          {"eval_layouts", eval_layouts},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& doc) {
  TrainConfig c;
  try {
    c.lambda = doc.value("lambda", c.lambda);
    c.g_lr = doc.value("g_lr", c.g_lr);
    c.d_lr = doc.value("d_lr", c.d_lr);
    c.beta1 = doc.value("beta1", c.beta1);
    c.beta2 = doc.value("beta2", c.beta2);
    c.adam_eps = doc.value("adam_eps", c.adam_eps);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.total_steps = doc.value("total_steps", c.total_steps);
    c.checkpoint_every = doc.value("checkpoint_every", c.checkpoint_every);
    c.sample_every = doc.value("sample_every", c.sample_every);
    c.log_every = doc.value("log_every", c.log_every);
    c.eval_every = doc.value("eval_every", c.eval_every);
    c.eval_layouts = doc.value("eval_layouts", c.eval_layouts);
    c.seed = doc.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedDocument, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  train.validate();
  generator.validate();
  discriminator.validate();
  if (generator.output_side() != discriminator.lattice) {
    throw Error(ErrorCode::kInvalidArgument, "generator output side " + std::to_string(generator.output_side()) +
                                                 " differs from discriminator lattice " + std::to_string(discriminator.lattice));
  }
  if (generator.num_classes != discriminator.num_classes) {
    throw Error(ErrorCode::kInvalidArgument, "generator and discriminator disagree on num_classes");
  }
}

json ExperimentConfig::to_json() const {
  return {{"train", train.to_json()}, {"generator", generator.to_json()}, {"discriminator", discriminator.to_json()}};
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kMalformedDocument, "config must be an object");
  ExperimentConfig c;
  c.train = TrainConfig::from_json(doc.value("train", json::object()));
  c.generator = GeneratorConfig::from_json(doc.value("generator", json::object()));
  c.discriminator = DiscriminatorConfig::from_json(doc.value("discriminator", json::object()));
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMalformedDocument, "cannot read config " + path.string());
  try {
    return from_json(json::parse(in, nullptr, true, true));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedDocument, path.string() + ": " + e.what());
  }
}

ExperimentConfig experiment_preset(const std::string& name, int num_classes) {
  ExperimentConfig c;
  auto& g = c.generator;
  auto& d = c.discriminator;
  if (name == "desk32" || name == "desk64") {
    const bool small = name == "desk32";
    g.ch = small ? 8 : 16;
    g.n_blocks = small ? 3 : 4;
    g.d_noise = g.d_obj_noise = g.d_e = 32;
    g.mask_size = 16;
    g.mask_channels = 16;
    d.ch = g.ch;
    d.n_backbone_blocks = g.n_blocks;
    c.train.batch_size = 16;
    c.train.total_steps = small ? 6000 : 2000;
    c.train.eval_every = 250;
  } else if (name == "coco64" || name == "coco128") {
    g.n_blocks = name == "coco64" ? 4 : 5;
    d.n_backbone_blocks = g.n_blocks;
    c.train.batch_size = 128;
    c.train.total_steps = 200000;
    c.train.checkpoint_every = 5000;
    c.train.sample_every = 5000;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown preset '" + name + "'");
  }
  d.lattice = g.output_side();
  g.num_classes = d.num_classes = num_classes;
  c.validate();
  return c;
}

std::vector<std::string> experiment_preset_names() { return {"desk32", "desk64", "coco64", "coco128"}; }

namespace {

constexpr char kMagic[8] = {'L', 'O', 'S', 'T', 'G', 'A', 'N', 'C'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw Error(ErrorCode::kCheckpointIOError, "truncated checkpoint");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kVersion);
  const std::string meta = metadata.dump();
  put<std::uint64_t>(out, meta.size());
  out.insert(out.end(), meta.begin(), meta.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, t] : arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::int64_t>(out, d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    out.insert(out.end(), p, p + t.numel() * static_cast<std::int64_t>(sizeof(double)));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (bytes.size() < sizeof(kMagic) || std::memcmp(in.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kCheckpointIOError, "not a checkpoint (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) throw Error(ErrorCode::kCheckpointIOError, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const auto meta_len = in.get<std::uint64_t>();
  const auto* meta = in.take(static_cast<std::size_t>(meta_len));
  try {
    ckpt.metadata = json::parse(meta, meta + meta_len);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kCheckpointIOError, std::string("checkpoint metadata: ") + e.what());
  }
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t a = 0; a < count; ++a) {
    const auto name_len = in.get<std::uint32_t>();
    const auto* name = in.take(name_len);
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw Error(ErrorCode::kCheckpointIOError, "implausible array rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(in.get<std::int64_t>());
      if (shape.back() < 0) throw Error(ErrorCode::kCheckpointIOError, "negative dimension");
    }
    Tensor t(shape);
    const auto bytes_needed = static_cast<std::size_t>(t.numel()) * sizeof(double);
    std::memcpy(t.data(), in.take(bytes_needed), bytes_needed);
    ckpt.arrays.emplace(std::string(reinterpret_cast<const char*>(name), name_len), std::move(t));
  }
  if (!in.done()) throw Error(ErrorCode::kCheckpointIOError, "trailing bytes in checkpoint");
  return ckpt;
}

void Checkpoint::save(const fs::path& path) const {
  const auto bytes = serialize();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::kCheckpointIOError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kCheckpointIOError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kCheckpointIOError, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint Checkpoint::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kCheckpointIOError, "cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::uint64_t Checkpoint::content_hash() const { return fnv1a(serialize()); }

void store_parameters(const ParameterSet& set, Checkpoint& ckpt) {
  for (const auto& p : set.parameters) ckpt.arrays[p.name] = p.var.value();
  for (const auto& b : set.buffers) ckpt.arrays[b.name] = *b.tensor;
}

void restore_parameters(ParameterSet& set, const Checkpoint& ckpt) {
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = ckpt.arrays.find(name);
    if (it == ckpt.arrays.end()) throw Error(ErrorCode::kCheckpointIOError, "checkpoint lacks " + name);
    if (it->second.shape() != shape) {
      throw Error(ErrorCode::kCheckpointIOError, name + " has shape " + shape_string(it->second.shape()) + ", model expects " +
                                                     shape_string(shape));
    }
    return it->second;
  };
  for (auto& p : set.parameters) p.var.mutable_value() = fetch(p.name, p.var.shape());
  for (auto& b : set.buffers) *b.tensor = fetch(b.name, b.tensor->shape());
}

std::vector<StyleState> styles_for_step(const std::vector<Layout>& layouts, const GeneratorConfig& config,
                                        std::uint64_t seed, std::uint64_t step, NoisePurpose purpose) {
  const std::uint64_t base = derive_seed(derive_seed(seed, static_cast<std::uint64_t>(purpose)), step);
  std::vector<StyleState> styles;
  styles.reserve(layouts.size());
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    styles.push_back(sample_style(layouts[i].size(), config.d_noise, config.d_obj_noise, derive_seed(base, i)));
  }
  return styles;
}

Trainer::Trainer(ExperimentConfig config, const LayoutDataset& data)
    : config_(std::move(config)),
      data_(&data),
      batches_(data, config_.train.batch_size, derive_seed(config_.train.seed, 0x42415443ull)),
      generator_(config_.generator),
      discriminator_(config_.discriminator) {
  config_.validate();
  if (data.cats.size() > config_.generator.num_classes) {
    throw Error(ErrorCode::kInvalidArgument, "dataset has " + std::to_string(data.cats.size()) +
                                                 " categories but the model only " + std::to_string(config_.generator.num_classes));
  }
  g_params_ = generator_.parameters();
  d_params_ = discriminator_.parameters();
  g_opt_ = Adam(g_params_, {config_.train.g_lr, config_.train.beta1, config_.train.beta2, config_.train.adam_eps});
  d_opt_ = Adam(d_params_, {config_.train.d_lr, config_.train.beta1, config_.train.beta2, config_.train.adam_eps});
}

void Trainer::check_finite(const LossReport& r, const char* phase) const {
  const double values[] = {r.d_loss_real_img, r.d_loss_fake_img, r.d_loss_real_obj, r.d_loss_fake_obj,
                           r.d_total,         r.g_loss_img,      r.g_loss_obj,      r.g_total};
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNonFiniteLoss,
                  std::string(phase) + " at step " + std::to_string(step_) + " produced " + r.to_json().dump());
    }
  }
}

LossReport Trainer::d_step(const Batch& batch, ScoreRecord* real_out, ScoreRecord* fake_out) {
  const auto n = static_cast<std::int64_t>(batch.layouts.size());
  Tensor fake;
  {
    ag::NoGradGuard no_grad;
    const auto styles = styles_for_step(batch.layouts, config_.generator, config_.train.seed,
                                        static_cast<std::uint64_t>(step_), NoisePurpose::kDiscriminatorStep);
    fake = generator_.generate(batch.layouts, styles, true).image.value();
  }
  Tensor both(Shape{2 * n, batch.images.dim(1), batch.images.dim(2), 3});
  std::copy_n(batch.images.data(), batch.images.numel(), both.data());
  std::copy_n(fake.data(), fake.numel(), both.data() + batch.images.numel());
  std::vector<Layout> layouts = batch.layouts;
  layouts.insert(layouts.end(), batch.layouts.begin(), batch.layouts.end());

  d_params_.set_requires_grad(true);
  d_params_.zero_grad();
  auto scores = discriminator_.score(ag::Var(std::move(both)), layouts, true);
  ag::Var objective = combined_d_objective(scores.s_img, scores.s_obj, n, config_.train.lambda);

  const auto& s_img = scores.s_img.value();
  const auto& s_obj = scores.s_obj.value();
  LossReport report = d_losses_from_scores(head(s_img, 0, n), head(s_obj, 0, n), head(s_img, n, n), head(s_obj, n, n),
                                           config_.train.lambda);
  check_finite(report, "d_step");
  if (real_out || fake_out) {
    const ScoreRecord all = ScoreRecord::from(scores);
    auto split = [&](bool real) {
      ScoreRecord r;
      r.s_img = head(s_img, real ? 0 : n, n);
      r.s_obj = head(s_obj, real ? 0 : n, n);
      for (std::size_t k = 0; k < all.object_sample.size(); ++k) {
        const auto sample = all.object_sample[k];
        if ((sample < n) == real) {
          r.s_obj_each.push_back(all.s_obj_each[k]);
          r.object_sample.push_back(real ? sample : sample - n);
        }
      }
      return r;
    };
    if (real_out) *real_out = split(true);
    if (fake_out) *fake_out = split(false);
  }
  ag::backward(objective);
  d_opt_.step();
  d_params_.zero_grad();
  return report;
}

LossReport Trainer::g_step(const Batch& batch, ScoreRecord* fake_out) {
  const auto styles = styles_for_step(batch.layouts, config_.generator, config_.train.seed,
                                      static_cast<std::uint64_t>(step_), NoisePurpose::kGeneratorStep);
  d_params_.set_requires_grad(false);
  g_params_.zero_grad();
  auto out = generator_.generate(batch.layouts, styles, true);
  // Frozen discriminator: no power-iteration update, no parameter gradients.
  auto scores = discriminator_.score(out.image, batch.layouts, false);
  const double lambda = config_.train.lambda;
  ag::Var objective = ag::scale(ag::mean(scores.s_img), -1.0);
  if (lambda != 0.0) objective = ag::sub(objective, ag::scale(ag::mean(scores.s_obj), lambda));

  const ScoreRecord record = ScoreRecord::from(scores);
  LossReport report = g_losses_from_scores(record.s_img, record.s_obj, lambda);
  check_finite(report, "g_step");
  if (fake_out) *fake_out = record;
  ag::backward(objective);
  g_opt_.step();
  g_params_.zero_grad();
  d_params_.set_requires_grad(true);
  return report;
}

StepResult Trainer::train_step() {
  const Batch batch = batches_.batch_for_step(static_cast<std::uint64_t>(step_));
  StepResult result;
  const LossReport d = d_step(batch, &result.real, &result.fake_d);
  const LossReport g = g_step(batch, &result.fake_g);
  result.losses = d;
  result.losses.g_loss_img = g.g_loss_img;
  result.losses.g_loss_obj = g.g_loss_obj;
  result.losses.g_total = g.g_total;
  ++step_;
  return result;
}

Checkpoint Trainer::checkpoint() {
  Checkpoint ckpt;
  store_parameters(g_params_, ckpt);
  store_parameters(d_params_, ckpt);
  for (auto& [name, t] : g_opt_.state()) ckpt.arrays["opt.g." + name] = *t;
  for (auto& [name, t] : d_opt_.state()) ckpt.arrays["opt.d." + name] = *t;
  json palette = json::array();
  for (const auto& c : data_->palette) palette.push_back({c[0], c[1], c[2]});
  ckpt.metadata = {{"kind", "lostgan.train"},
                   {"step", step_},
                   {"opt_g_steps", g_opt_.steps()},
                   {"opt_d_steps", d_opt_.steps()},
                   {"config", config_.to_json()},
                   {"categories", data_->cats.names()},
                   {"palette", palette},
                   // Noise and batches are pure functions of (seed, step).
                   {"rng", {{"generator", "philox4x32-10"}, {"seed", config_.train.seed}, {"step", step_}}}};
  return ckpt;
}

void Trainer::save_checkpoint(const fs::path& path) { checkpoint().save(path); }

void Trainer::restore(const Checkpoint& ckpt) {
  try {
    const auto saved = ExperimentConfig::from_json(ckpt.metadata.at("config"));
    if (saved.generator.to_json() != config_.generator.to_json() ||
        saved.discriminator.to_json() != config_.discriminator.to_json()) {
      throw Error(ErrorCode::kCheckpointIOError, "checkpoint was written for a different model configuration");
    }
    restore_parameters(g_params_, ckpt);
    restore_parameters(d_params_, ckpt);
    auto restore_opt = [&](Adam& opt, const std::string& prefix, const char* steps_key) {
      for (auto& [name, t] : opt.state()) {
        auto it = ckpt.arrays.find(prefix + name);
        if (it == ckpt.arrays.end() || it->second.shape() != t->shape()) {
          throw Error(ErrorCode::kCheckpointIOError, "optimizer state " + prefix + name + " missing or reshaped");
        }
        *t = it->second;
      }
      opt.set_steps(ckpt.metadata.at(steps_key).get<std::int64_t>());
    };
    restore_opt(g_opt_, "opt.g.", "opt_g_steps");
    restore_opt(d_opt_, "opt.d.", "opt_d_steps");
    step_ = ckpt.metadata.at("step").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCheckpointIOError, std::string("checkpoint metadata: ") + e.what());
  }
}

LoadedModel load_model(const fs::path& checkpoint_path) {
  const Checkpoint ckpt = Checkpoint::load(checkpoint_path);
  LoadedModel model;
  try {
    model.config = ExperimentConfig::from_json(ckpt.metadata.at("config"));
    model.cats = CategorySet(ckpt.metadata.at("categories").get<std::vector<std::string>>());
    for (const auto& c : ckpt.metadata.value("palette", json::array())) {
      model.palette.push_back({c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()});
    }
    model.step = ckpt.metadata.value("step", std::int64_t{0});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCheckpointIOError, std::string("checkpoint metadata: ") + e.what());
  }
  model.generator = std::make_unique<Generator>(model.config.generator);
  ParameterSet params = model.generator->parameters();
  restore_parameters(params, ckpt);
  model.hash = ckpt.content_hash();
  return model;
}

PaletteReport palette_match(Generator& generator, const std::vector<Layout>& layouts, const std::vector<Rgb>& palette,
                            std::uint64_t seed, double tolerance, int batch_size) {
  if (layouts.empty()) throw Error(ErrorCode::kInsufficientData, "no layouts to evaluate");
  ag::NoGradGuard no_grad;
  PaletteReport report;
  std::vector<int> seen(palette.size(), 0), hit(palette.size(), 0);
  const int side = generator.config().output_side();
  for (std::size_t start = 0; start < layouts.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(layouts.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Layout> chunk(layouts.begin() + static_cast<std::ptrdiff_t>(start), layouts.begin() + static_cast<std::ptrdiff_t>(end));
    const auto styles = styles_for_step(chunk, generator.config(), seed, start, NoisePurpose::kEvaluation);
    const Tensor images = generator.generate(chunk, styles, false).image.value();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const Image image = tensor_to_image(images, static_cast<std::int64_t>(i));
      const auto cells = visible_cells(chunk[i], side, side);
      for (std::size_t k = 0; k < cells.size(); ++k) {
        if (std::none_of(cells[k].begin(), cells[k].end(), [](bool b) { return b; })) continue;
        const auto label = static_cast<std::size_t>(chunk[i].objects[k].label);
        if (label >= palette.size()) throw Error(ErrorCode::kUnknownLabel, "label without palette colour");
        const auto mean = mean_color(image, cells[k]);
        bool ok = true;
        for (std::size_t ch = 0; ch < 3; ++ch) ok = ok && std::abs(mean[ch] - palette[label][ch]) <= tolerance;
        ++seen[label];
        ++report.objects;
        if (ok) {
          ++hit[label];
          ++report.matched;
        }
      }
    }
  }
  report.match_rate = report.objects > 0 ? static_cast<double>(report.matched) / report.objects : 0.0;
  for (std::size_t c = 0; c < palette.size(); ++c) {
    report.per_category_rate.push_back(seen[c] > 0 ? static_cast<double>(hit[c]) / seen[c] : 0.0);
  }
  return report;
}

namespace {

std::string step_name(const char* prefix, std::int64_t step, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%06lld%s", prefix, static_cast<long long>(step), suffix);
  return buf;
}

void write_sample_grid(Trainer& trainer, const LayoutDataset& data, const fs::path& path) {
  ag::NoGradGuard no_grad;
  const std::size_t count = std::min<std::size_t>(8, data.size());
  std::vector<Layout> layouts;
  for (std::size_t i = 0; i < count; ++i) layouts.push_back(data.items[i].layout);
  const auto styles = styles_for_step(layouts, trainer.config().generator, trainer.config().train.seed, 0,
                                      NoisePurpose::kSampleGrid);
  const Tensor images = trainer.generator().generate(layouts, styles, false).image.value();
  std::vector<Image> tiles;
  for (std::size_t i = 0; i < count; ++i) {
    tiles.push_back(data.image(i));
    tiles.push_back(tensor_to_image(images, static_cast<std::int64_t>(i)));
  }
  fs::create_directories(path.parent_path());
  write_png(tile_images(tiles, 4), path);
}

std::vector<Layout> eval_layouts(const LayoutDataset& data, int count) {
  std::vector<Layout> out;
  for (std::size_t i = 0; i < data.size() && static_cast<int>(out.size()) < count; ++i) out.push_back(data.items[i].layout);
  return out;
}

}  // namespace

TrainSummary train(const ExperimentConfig& config, const LayoutDataset& data, const TrainOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  Trainer trainer(config, data);
  if (options.resume) trainer.restore(Checkpoint::load(*options.resume));
  fs::create_directories(options.out_dir);
  std::ofstream log(options.out_dir / "metrics.ndjson", options.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw Error(ErrorCode::kCheckpointIOError, "cannot open metric log in " + options.out_dir.string());

  const TrainConfig& tc = config.train;
  TrainSummary summary;
  auto save = [&]() {
    const fs::path path = options.out_dir / step_name("ckpt_", trainer.step(), ".lgc");
    const Checkpoint ckpt = trainer.checkpoint();
    ckpt.save(path);
    ckpt.save(options.out_dir / "latest.lgc");
    summary.last_checkpoint = path;
  };
  auto palette_snapshot = [&]() -> std::optional<PaletteReport> {
    if (data.palette.empty()) return std::nullopt;
    return palette_match(trainer.generator(), eval_layouts(data, tc.eval_layouts), data.palette, tc.seed);
  };

  while (trainer.step() < tc.total_steps) {
    const StepResult result = trainer.train_step();
    const std::int64_t step = trainer.step();
    summary.last = result.losses;
    json record = {{"step", step}, {"losses", result.losses.to_json()}};
    if (tc.eval_every > 0 && step % tc.eval_every == 0) {
      if (auto report = palette_snapshot()) {
        record["metrics"] = {{"palette_match", report->match_rate}};
        summary.palette = report;
      }
    }
    if ((tc.log_every > 0 && step % tc.log_every == 0) || record.contains("metrics") || step == tc.total_steps) {
      log << record.dump() << '\n' << std::flush;
      if (options.verbose) std::cerr << record.dump() << '\n';
    }
    if (tc.sample_every > 0 && step % tc.sample_every == 0) {
      write_sample_grid(trainer, data, options.out_dir / "samples" / step_name("step_", step, ".png"));
    }
    if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0) save();
    if (options.on_step && !options.on_step(trainer, result)) break;
  }
  if (summary.last_checkpoint.empty() || trainer.step() % std::max<std::int64_t>(tc.checkpoint_every, 1) != 0) save();
  summary.final_step = trainer.step();
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return summary;
}

}  // namespace lostgan
