#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lostgan/dataset.hpp"
#include "lostgan/discriminator.hpp"
#include "lostgan/generator.hpp"

namespace lostgan {

// max(0, 1 - s) for real samples, max(0, 1 + s) for fakes.
double hinge_d_term(double s, bool is_real) noexcept;
// Batch mean of the hinge term, differentiable in s.
ag::Var hinge_d_term(const ag::Var& s, bool is_real);

struct LossReport {
  double d_loss_real_img = 0.0;
  double d_loss_fake_img = 0.0;
  double d_loss_real_obj = 0.0;
  double d_loss_fake_obj = 0.0;
  double d_total = 0.0;
  double g_loss_img = 0.0;
  double g_loss_obj = 0.0;
  double g_total = 0.0;

  nlohmann::json to_json() const;
};

// Per-sample scores of one discriminator pass, kept for recomputation.
struct ScoreRecord {
  std::vector<double> s_img;
  std::vector<double> s_obj;
  std::vector<double> s_obj_each;
  std::vector<std::int64_t> object_sample;

  static ScoreRecord from(const DiscriminatorScores& scores);
};

// D-side terms: hinge means over the batch; object terms weighted by lambda.
LossReport d_losses_from_scores(const std::vector<double>& real_img, const std::vector<double>& real_obj,
                                const std::vector<double>& fake_img, const std::vector<double>& fake_obj,
                                double lambda);
// G-side terms: -mean(s_img), -mean(s_obj), total -mean(s_img + lambda s_obj).
LossReport g_losses_from_scores(const std::vector<double>& fake_img, const std::vector<double>& fake_obj,
                                double lambda);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet& params, AdamConfig config);

  // Applies one update from the accumulated gradients.
  void step();
  std::int64_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }

  // First and second moments keyed by parameter name.
  std::map<std::string, Tensor*> state();
  void set_steps(std::int64_t t) noexcept { t_ = t; }

 private:
  std::vector<NamedParameter> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig config_;
  std::int64_t t_ = 0;
};

struct TrainConfig {
  double lambda = 1.0;
  double g_lr = 1e-4;
  double d_lr = 4e-4;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 16;
  std::int64_t total_steps = 2000;
  std::int64_t checkpoint_every = 500;
  std::int64_t sample_every = 500;
  std::int64_t log_every = 10;
  std::int64_t eval_every = 0;  // palette snapshot cadence; 0 disables
  int eval_layouts = 50;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& doc);
};

// Everything needed to build and train a model; the declarative config file.
struct ExperimentConfig {
  TrainConfig train;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& doc);
  static ExperimentConfig load(const std::filesystem::path& path);
};

// Named configurations: "desk32" (CPU fallback, 32x32), "desk64",
// "coco64" and "coco128". num_classes is set to `num_classes`.
ExperimentConfig experiment_preset(const std::string& name, int num_classes);
std::vector<std::string> experiment_preset_names();

// Named f64 arrays plus a metadata document.
//   bytes 0-7   "LOSTGANC"
//   u32         container version
//   u64         metadata length, then UTF-8 JSON metadata
//   u32         array count, then per array:
//                 u32 name length, name, u32 rank, rank x i64 dims, numel x f64
// Integers and doubles are little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json metadata;
  std::map<std::string, Tensor> arrays;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  // FNV-1a of the serialized bytes.
  std::uint64_t content_hash() const;
  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);
};

// Copies parameters and buffers into `ckpt` by name.
void store_parameters(const ParameterSet& set, Checkpoint& ckpt);
// Restores every parameter and buffer; missing names or shape changes throw kCheckpointIOError.
void restore_parameters(ParameterSet& set, const Checkpoint& ckpt);

// Per-(seed, step, purpose) style draws; sample i of the batch uses its own derived seed.
enum class NoisePurpose : std::uint64_t { kDiscriminatorStep = 1, kGeneratorStep = 2, kSampleGrid = 3, kEvaluation = 4 };
std::vector<StyleState> styles_for_step(const std::vector<Layout>& layouts, const GeneratorConfig& config,
                                        std::uint64_t seed, std::uint64_t step, NoisePurpose purpose);

struct StepResult {
  LossReport losses;
  ScoreRecord real;
  ScoreRecord fake_d;
  ScoreRecord fake_g;
};

class Trainer {
 public:
  Trainer(ExperimentConfig config, const LayoutDataset& data);

  // One discriminator update on real vs freshly generated images.
  LossReport d_step(const Batch& batch, ScoreRecord* real = nullptr, ScoreRecord* fake = nullptr);
  // One generator update; the discriminator is frozen.
  LossReport g_step(const Batch& batch, ScoreRecord* fake = nullptr);
  // Batch for the current step, d_step then g_step, advance the counter.
  StepResult train_step();

  std::int64_t step() const noexcept { return step_; }
  const ExperimentConfig& config() const noexcept { return config_; }
  Generator& generator() { return generator_; }
  Discriminator& discriminator() { return discriminator_; }
  const BatchIterator& batches() const noexcept { return batches_; }

  Checkpoint checkpoint();
  void save_checkpoint(const std::filesystem::path& path);
  // Restores model, optimizer and step; the config must describe the same model.
  void restore(const Checkpoint& ckpt);

 private:
  void check_finite(const LossReport& report, const char* phase) const;

  ExperimentConfig config_;
  const LayoutDataset* data_;
  BatchIterator batches_;
  Generator generator_;
  Discriminator discriminator_;
  ParameterSet g_params_, d_params_;
  Adam g_opt_, d_opt_;
  std::int64_t step_ = 0;
};

// Generator, categories and palette recovered from a training checkpoint.
struct LoadedModel {
  std::unique_ptr<Generator> generator;
  CategorySet cats;
  std::vector<Rgb> palette;
  ExperimentConfig config;
  std::uint64_t hash = 0;
  std::int64_t step = 0;
};
LoadedModel load_model(const std::filesystem::path& checkpoint_path);

// Share of objects whose generated visible-cell mean colour lies within
// `tolerance` (0..255, every channel) of their category's palette colour.
struct PaletteReport {
  double match_rate = 0.0;
  int objects = 0;
  int matched = 0;
  std::vector<double> per_category_rate;
};
PaletteReport palette_match(Generator& generator, const std::vector<Layout>& layouts, const std::vector<Rgb>& palette,
                            std::uint64_t seed, double tolerance = 25.0, int batch_size = 16);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  // Called after every step; returning false stops training early.
  std::function<bool(const Trainer&, const StepResult&)> on_step;
  bool verbose = true;
};

struct TrainSummary {
  std::int64_t final_step = 0;
  LossReport last;
  std::filesystem::path last_checkpoint;
  std::optional<PaletteReport> palette;
  double seconds = 0.0;
};

// Runs until total_steps, writing metrics.ndjson, checkpoints
// (ckpt_<step>.lgc and latest.lgc) and sample grids under out_dir.
TrainSummary train(const ExperimentConfig& config, const LayoutDataset& data, const TrainOptions& options);

}  // namespace lostgan
