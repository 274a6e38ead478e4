#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lostgan/dataset.hpp"
#include "lostgan/generator.hpp"
#include "lostgan/image.hpp"
#include "lostgan/tensor.hpp"
#include "lostgan/training.hpp"

namespace lostgan {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// n x K rows of p(y|x). Per split: exp(mean_x KL(p(y|x) || p(y))); returns
// mean and population std over splits. Rows must be distributions.
MeanStd inception_score(const Tensor& probs, int n_splits = 10);

struct GaussianSummary {
  Tensor mean;  // F
  Tensor cov;   // F x F, unbiased (n - 1)
};

// Summary of n x F feature rows; n >= 2.
GaussianSummary summarize(const Tensor& features);

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), square roots by
// symmetric eigendecomposition with negative eigenvalues clipped to 0.
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);

enum class Provenance { kPretrained, kDeskOracle };
std::string provenance_name(Provenance p);

// Image -> feature rows, optionally image -> class probabilities.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual Provenance provenance() const = 0;
  // Rows compared by the diversity score (distance = mean squared difference).
  virtual Tensor features(const std::vector<Image>& images) const = 0;
  // Rows summarised for the Frechet distance; defaults to features().
  virtual Tensor pooled_features(const std::vector<Image>& images) const { return features(images); }
  // n x K class probabilities; throws kEmbedderFailure when unsupported.
  virtual Tensor probabilities(const std::vector<Image>& images) const;
};

// Pixels scaled to [0, 1], flattened.
class IdentityEmbedder : public Embedder {
 public:
  std::string name() const override { return "identity"; }
  Provenance provenance() const override { return Provenance::kDeskOracle; }
  Tensor features(const std::vector<Image>& images) const override;
};

// Mean over pairs of the embedder's feature distance; >= 1 pair.
MeanStd diversity_score(const std::vector<std::pair<Image, Image>>& pairs, const Embedder& embedder);

// Fixed-size object crops (box region resized to size x size).
Image crop_object(const Image& image, const BBox& box, int size);
struct LabeledCrops {
  std::vector<Image> images;
  std::vector<int> labels;
};
LabeledCrops object_crops(const LayoutDataset& data, int size, std::size_t limit = 0);

class CropClassifier {
 public:
  virtual ~CropClassifier() = default;
  virtual std::vector<int> predict(const std::vector<Image>& crops) const = 0;
};

class ClassifierTrainer {
 public:
  virtual ~ClassifierTrainer() = default;
  virtual std::unique_ptr<CropClassifier> train(const LabeledCrops& data, int num_classes) const = 0;
};

// Always predicts the most frequent training label (lowest label on ties).
class MajorityClassTrainer : public ClassifierTrainer {
 public:
  std::unique_ptr<CropClassifier> train(const LabeledCrops& data, int num_classes) const override;
};

struct ConvClassifierConfig {
  int crop_size = 16;
  int width = 16;  // channels of the first stage; the second has 2x
  int steps = 300;
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 11;
};

// conv3-relu-pool, conv3-relu-pool, global average, linear.
class ConvClassifier : public CropClassifier, public Embedder {
 public:
  ConvClassifier(int num_classes, ConvClassifierConfig config);

  void fit(const LabeledCrops& data);
  double accuracy(const LabeledCrops& data) const;

  std::vector<int> predict(const std::vector<Image>& crops) const override;

  std::string name() const override { return "desk-classifier"; }
  Provenance provenance() const override { return Provenance::kDeskOracle; }
  // Second-stage maps with every spatial feature vector scaled to unit length.
  Tensor features(const std::vector<Image>& images) const override;
  Tensor pooled_features(const std::vector<Image>& images) const override;
  // Probabilities over object crops resized to crop_size.
  Tensor probabilities(const std::vector<Image>& images) const override;

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<ConvClassifier> load(const std::filesystem::path& path);

  int num_classes() const noexcept { return num_classes_; }
  const ConvClassifierConfig& config() const noexcept { return config_; }

 private:
  struct Activations;
  Activations run(const Tensor& batch) const;
  Tensor batch_of(const std::vector<Image>& images, bool resize_to_crop) const;

  int num_classes_;
  ConvClassifierConfig config_;
  ag::Var w1_, b1_, w2_, b2_, w3_, b3_;
};

class ConvClassifierTrainer : public ClassifierTrainer {
 public:
  explicit ConvClassifierTrainer(ConvClassifierConfig config = {}) : config_(config) {}
  std::unique_ptr<CropClassifier> train(const LabeledCrops& data, int num_classes) const override;

 private:
  ConvClassifierConfig config_;
};

double accuracy_of(const CropClassifier& classifier, const LabeledCrops& data);

// Trains on object crops cut from `samples_per_layout` generated images per
// layout, then reports top-1 accuracy on the real crops.
double classification_accuracy_score(Generator& generator, const std::vector<Layout>& layouts,
                                     const LabeledCrops& real_eval, const ClassifierTrainer& trainer, int num_classes,
                                     std::uint64_t seed, int samples_per_layout = 5, int crop_size = 16);

struct EvaluationOptions {
  std::vector<std::string> metrics = {"is", "fid", "diversity", "cas"};
  std::string embedder = "desk";  // "desk" or "identity"
  std::optional<std::filesystem::path> embedder_checkpoint;
  int layouts = 100;
  int is_splits = 10;
  int diversity_pairs = 1;  // image pairs per layout
  int cas_samples_per_layout = 5;
  std::uint64_t seed = 0;
};

// Report document: {"checkpoint", "embedder": {name, provenance}, "metrics": {...}}
// where every metric entry carries its own provenance tag.
nlohmann::json evaluate_model(const LoadedModel& model, const LayoutDataset& data, const EvaluationOptions& options);

}  // namespace lostgan
