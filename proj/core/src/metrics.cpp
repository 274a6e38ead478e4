#include "lostgan/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "lostgan/error.hpp"
#include "lostgan/layers.hpp"
#include "lostgan/ops.hpp"
#include "lostgan/training.hpp"

namespace lostgan {

namespace {

using nlohmann::json;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Matrix>;

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(var / static_cast<double>(values.size()));
  return out;
}

}  // namespace

MeanStd inception_score(const Tensor& probs, int n_splits) {
  if (probs.rank() != 2 || probs.dim(0) == 0 || probs.dim(1) == 0) {
    throw Error(ErrorCode::kDegenerateInput, "inception_score needs a non-empty n x K matrix");
  }
  const std::int64_t n = probs.dim(0), k = probs.dim(1);
  if (n_splits < 1 || n_splits > n) {
    throw Error(ErrorCode::kInvalidArgument, "n_splits must lie in [1, " + std::to_string(n) + "]");
  }
  for (std::int64_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      const double p = probs[i * k + j];
      if (!(p >= 0.0) || !std::isfinite(p)) throw Error(ErrorCode::kDegenerateInput, "negative or non-finite probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) throw Error(ErrorCode::kDegenerateInput, "row " + std::to_string(i) + " does not sum to 1");
  }
  std::vector<double> scores;
  for (int s = 0; s < n_splits; ++s) {
    const std::int64_t lo = n * s / n_splits, hi = n * (s + 1) / n_splits;
    std::vector<double> marginal(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t i = lo; i < hi; ++i)
      for (std::int64_t j = 0; j < k; ++j) marginal[static_cast<std::size_t>(j)] += probs[i * k + j];
    for (auto& m : marginal) m /= static_cast<double>(hi - lo);
    double kl = 0.0;
    for (std::int64_t i = lo; i < hi; ++i)
      for (std::int64_t j = 0; j < k; ++j) {
        const double p = probs[i * k + j];
        if (p > 0.0) kl += p * (std::log(p) - std::log(marginal[static_cast<std::size_t>(j)]));
      }
    scores.push_back(std::exp(kl / static_cast<double>(hi - lo)));
  }
  return mean_std(scores);
}

GaussianSummary summarize(const Tensor& features) {
  if (features.rank() != 2 || features.dim(0) < 2) {
    throw Error(ErrorCode::kInsufficientData, "a Gaussian summary needs at least 2 feature rows");
  }
  const std::int64_t n = features.dim(0), f = features.dim(1);
  ConstMap x(features.data(), n, f);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Matrix centered = x.rowwise() - mu;
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  cov = 0.5 * (cov + cov.transpose()).eval();
  GaussianSummary out{Tensor({f}), Tensor({f, f})};
  std::copy_n(mu.data(), f, out.mean.data());
  std::copy_n(cov.data(), f * f, out.cov.data());
  return out;
}

namespace {

Matrix psd_sqrt(const Matrix& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  if (eig.info() != Eigen::Success) throw Error(ErrorCode::kNonConvergedSqrt, std::string("eigendecomposition failed for ") + what);
  Eigen::VectorXd values = eig.eigenvalues();
  if (!values.allFinite()) throw Error(ErrorCode::kNonConvergedSqrt, std::string("non-finite eigenvalues in ") + what);
  values = values.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

void check_psd(const Matrix& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw Error(ErrorCode::kNonConvergedSqrt, std::string("eigendecomposition failed for ") + what);
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-8 * scale) {
    throw Error(ErrorCode::kDegenerateInput, std::string(what) + " is not positive semi-definite");
  }
}

}  // namespace

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  const std::int64_t f = a.mean.numel();
  if (b.mean.numel() != f || a.cov.shape() != Shape{f, f} || b.cov.shape() != Shape{f, f}) {
    throw Error(ErrorCode::kDimensionMismatch, "summaries of dimension " + std::to_string(f) + " and " +
                                                   std::to_string(b.mean.numel()));
  }
  const Matrix sa = ConstMap(a.cov.data(), f, f), sb = ConstMap(b.cov.data(), f, f);
  check_psd(sa, "first covariance");
  check_psd(sb, "second covariance");
  double mean_term = 0.0;
  for (std::int64_t i = 0; i < f; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  const Matrix root_a = psd_sqrt(sa, "first covariance");
  Matrix inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose()).eval();
  const Matrix cross = psd_sqrt(inner, "covariance product");
  const double value = mean_term + sa.trace() + sb.trace() - 2.0 * cross.trace();
  if (!std::isfinite(value)) throw Error(ErrorCode::kNonConvergedSqrt, "non-finite Frechet distance");
  return value;
}

std::string provenance_name(Provenance p) { return p == Provenance::kPretrained ? "pretrained" : "desk-oracle"; }

Tensor Embedder::probabilities(const std::vector<Image>&) const {
  throw Error(ErrorCode::kEmbedderFailure, "embedder '" + name() + "' has no classification head");
}

Tensor IdentityEmbedder::features(const std::vector<Image>& images) const {
  if (images.empty()) throw Error(ErrorCode::kEmbedderFailure, "no images");
  const auto f = static_cast<std::int64_t>(images.front().pixels.size());
  Tensor out({static_cast<std::int64_t>(images.size()), f});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (static_cast<std::int64_t>(images[i].pixels.size()) != f) throw Error(ErrorCode::kEmbedderFailure, "images differ in size");
    for (std::int64_t j = 0; j < f; ++j) out[static_cast<std::int64_t>(i) * f + j] = images[i].pixels[static_cast<std::size_t>(j)] / 255.0;
  }
  return out;
}

MeanStd diversity_score(const std::vector<std::pair<Image, Image>>& pairs, const Embedder& embedder) {
  if (pairs.empty()) throw Error(ErrorCode::kInsufficientData, "diversity needs at least one pair");
  std::vector<Image> first, second;
  for (const auto& [a, b] : pairs) {
    first.push_back(a);
    second.push_back(b);
  }
  const Tensor fa = embedder.features(first), fb = embedder.features(second);
  if (fa.shape() != fb.shape() || fa.rank() != 2 || fa.dim(0) != static_cast<std::int64_t>(pairs.size())) {
    throw Error(ErrorCode::kEmbedderFailure, "embedder returned inconsistent feature shapes");
  }
  const std::int64_t f = fa.dim(1);
  std::vector<double> distances;
  for (std::int64_t i = 0; i < fa.dim(0); ++i) {
    double d = 0.0;
    for (std::int64_t j = 0; j < f; ++j) {
      const double diff = fa[i * f + j] - fb[i * f + j];
      d += diff * diff;
    }
    distances.push_back(d / static_cast<double>(f));
  }
  if (!std::all_of(distances.begin(), distances.end(), [](double d) { return std::isfinite(d); })) {
    throw Error(ErrorCode::kEmbedderFailure, "non-finite feature distance");
  }
  return mean_std(distances);
}

Image crop_object(const Image& image, const BBox& box, int size) {
  const int x0 = std::clamp(static_cast<int>(std::floor(box.x * image.width + 0.5)), 0, image.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(box.y * image.height + 0.5)), 0, image.height - 1);
  const int x1 = std::clamp(static_cast<int>(std::floor((box.x + box.w) * image.width + 0.5)), x0 + 1, image.width);
  const int y1 = std::clamp(static_cast<int>(std::floor((box.y + box.h) * image.height + 0.5)), y0 + 1, image.height);
  Image region(y1 - y0, x1 - x0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) region.set(y - y0, x - x0, image.at(y, x));
  return resize_image(region, size, size);
}

LabeledCrops object_crops(const LayoutDataset& data, int size, std::size_t limit) {
  LabeledCrops out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Image image = data.image(i);
    for (const auto& obj : data.items[i].layout.objects) {
      out.images.push_back(crop_object(image, obj.bbox, size));
      out.labels.push_back(obj.label);
      if (limit > 0 && out.images.size() >= limit) return out;
    }
  }
  return out;
}

namespace {

class MajorityClassifier : public CropClassifier {
 public:
  explicit MajorityClassifier(int label) : label_(label) {}
  std::vector<int> predict(const std::vector<Image>& crops) const override {
    return std::vector<int>(crops.size(), label_);
  }

 private:
  int label_;
};

}  // namespace

std::unique_ptr<CropClassifier> MajorityClassTrainer::train(const LabeledCrops& data, int num_classes) const {
  if (data.labels.empty()) throw Error(ErrorCode::kInsufficientData, "no training crops");
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int l : data.labels) {
    if (l < 0 || l >= num_classes) throw Error(ErrorCode::kUnknownLabel, "label " + std::to_string(l));
    ++counts[static_cast<std::size_t>(l)];
  }
  const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
  return std::make_unique<MajorityClassifier>(static_cast<int>(best));
}

struct ConvClassifier::Activations {
  ag::Var stage2;  // N x h x w x 2W
  ag::Var pooled;  // N x 2W
  ag::Var logits;  // N x K
};

ConvClassifier::ConvClassifier(int num_classes, ConvClassifierConfig config)
    : num_classes_(num_classes), config_(config) {
  if (num_classes < 1 || config.crop_size < 4 || config.width < 1 || config.batch_size < 1 || config.steps < 0) {
    throw Error(ErrorCode::kInvalidArgument, "invalid classifier configuration");
  }
  PhiloxStream rng(config_.seed, 0x434c53ull);
  const int w = config_.width;
  w1_ = ag::Var(orthogonal({3, 3, 3, w}, rng, std::sqrt(2.0)), true);
  b1_ = ag::Var(Tensor({w}), true);
  w2_ = ag::Var(orthogonal({3, 3, w, 2 * w}, rng, std::sqrt(2.0)), true);
  b2_ = ag::Var(Tensor({2 * w}), true);
  w3_ = ag::Var(orthogonal({2 * w, num_classes}, rng), true);
  b3_ = ag::Var(Tensor({num_classes}), true);
}

Tensor ConvClassifier::batch_of(const std::vector<Image>& images, bool resize_to_crop) const {
  if (images.empty()) throw Error(ErrorCode::kEmbedderFailure, "no images");
  const int h = resize_to_crop ? config_.crop_size : images.front().height;
  const int w = resize_to_crop ? config_.crop_size : images.front().width;
  Tensor batch({static_cast<std::int64_t>(images.size()), h, w, 3});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!resize_to_crop && (images[i].height != h || images[i].width != w)) {
      throw Error(ErrorCode::kEmbedderFailure, "images differ in size");
    }
    image_to_tensor(resize_to_crop ? resize_image(images[i], h, w) : images[i], batch, static_cast<std::int64_t>(i));
  }
  return batch;
}

ConvClassifier::Activations ConvClassifier::run(const Tensor& batch) const {
  if (batch.dim(1) % 4 != 0 || batch.dim(2) % 4 != 0) throw Error(ErrorCode::kEmbedderFailure, "image sides must be multiples of 4");
  Activations a;
  ag::Var h = ag::avg_pool2x(ag::relu(ag::conv2d(ag::Var(batch), w1_, b1_, 1)));
  a.stage2 = ag::avg_pool2x(ag::relu(ag::conv2d(h, w2_, b2_, 1)));
  a.pooled = ag::global_avg_pool(a.stage2);
  a.logits = ag::linear(a.pooled, w3_, b3_);
  return a;
}

void ConvClassifier::fit(const LabeledCrops& data) {
  if (data.images.empty() || data.images.size() != data.labels.size()) {
    throw Error(ErrorCode::kInsufficientData, "classifier needs labelled crops");
  }
  for (int l : data.labels)
    if (l < 0 || l >= num_classes_) throw Error(ErrorCode::kUnknownLabel, "label " + std::to_string(l));
  ParameterSet params;
  params.add("w1", w1_);
  params.add("b1", b1_);
  params.add("w2", w2_);
  params.add("b2", b2_);
  params.add("w3", w3_);
  params.add("b3", b3_);
  Adam opt(params, {config_.lr, 0.9, 0.999, 1e-8});
  const std::size_t n = data.images.size();
  std::vector<std::size_t> order;
  for (int step = 0; step < config_.steps; ++step) {
    std::vector<Image> crops;
    std::vector<std::int64_t> labels;
    for (int b = 0; b < config_.batch_size; ++b) {
      const std::uint64_t position = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(config_.batch_size) + static_cast<std::uint64_t>(b);
      if (position % n == 0) order = permutation(n, config_.seed, position / n);
      const std::size_t idx = order.empty() ? position % n : order[position % n];
      crops.push_back(data.images[idx]);
      labels.push_back(data.labels[idx]);
    }
    params.zero_grad();
    ag::Var loss = ag::softmax_cross_entropy(run(batch_of(crops, true)).logits, labels);
    ag::backward(loss);
    opt.step();
  }
  params.zero_grad();
}

std::vector<int> ConvClassifier::predict(const std::vector<Image>& crops) const {
  if (crops.empty()) return {};
  const Tensor p = probabilities(crops);
  std::vector<int> out;
  for (std::int64_t i = 0; i < p.dim(0); ++i) {
    const double* row = p.data() + i * num_classes_;
    out.push_back(static_cast<int>(std::max_element(row, row + num_classes_) - row));
  }
  return out;
}

double ConvClassifier::accuracy(const LabeledCrops& data) const { return accuracy_of(*this, data); }

Tensor ConvClassifier::features(const std::vector<Image>& images) const {
  ag::NoGradGuard no_grad;
  Tensor maps = run(batch_of(images, false)).stage2.value();
  const std::int64_t c = maps.shape().back();
  for (std::int64_t cell = 0; cell < maps.numel() / c; ++cell) {
    double* v = maps.data() + cell * c;
    double norm = 0.0;
    for (std::int64_t j = 0; j < c; ++j) norm += v[j] * v[j];
    norm = std::sqrt(norm) + 1e-10;
    for (std::int64_t j = 0; j < c; ++j) v[j] /= norm;
  }
  return maps.reshaped({maps.dim(0), maps.numel() / maps.dim(0)});
}

Tensor ConvClassifier::pooled_features(const std::vector<Image>& images) const {
  ag::NoGradGuard no_grad;
  return run(batch_of(images, false)).pooled.value();
}

Tensor ConvClassifier::probabilities(const std::vector<Image>& images) const {
  ag::NoGradGuard no_grad;
  Tensor p = run(batch_of(images, true)).logits.value();
  const std::int64_t k = num_classes_;
  for (std::int64_t i = 0; i < p.dim(0); ++i) {
    double* row = p.data() + i * k;
    const double top = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::int64_t j = 0; j < k; ++j) total += row[j] = std::exp(row[j] - top);
    for (std::int64_t j = 0; j < k; ++j) row[j] /= total;
  }
  return p;
}

void ConvClassifier::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.metadata = {{"kind", "lostgan.classifier"},
                   {"num_classes", num_classes_},
                   {"crop_size", config_.crop_size},
                   {"width", config_.width},
                   {"steps", config_.steps},
                   {"batch_size", config_.batch_size},
                   {"lr", config_.lr},
                   {"seed", config_.seed}};
  ckpt.arrays = {{"w1", w1_.value()}, {"b1", b1_.value()}, {"w2", w2_.value()},
                 {"b2", b2_.value()}, {"w3", w3_.value()}, {"b3", b3_.value()}};
  ckpt.save(path);
}

std::unique_ptr<ConvClassifier> ConvClassifier::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.metadata.value("kind", std::string()) != "lostgan.classifier") {
    throw Error(ErrorCode::kCheckpointIOError, path.string() + " is not a classifier checkpoint");
  }
  ConvClassifierConfig config;
  int num_classes = 0;
  try {
    num_classes = ckpt.metadata.at("num_classes").get<int>();
    config.crop_size = ckpt.metadata.at("crop_size").get<int>();
    config.width = ckpt.metadata.at("width").get<int>();
    config.steps = ckpt.metadata.at("steps").get<int>();
    config.batch_size = ckpt.metadata.at("batch_size").get<int>();
    config.lr = ckpt.metadata.at("lr").get<double>();
    config.seed = ckpt.metadata.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointIOError, std::string("classifier metadata: ") + e.what());
  }
  auto model = std::make_unique<ConvClassifier>(num_classes, config);
  ParameterSet params;
  params.add("w1", model->w1_);
  params.add("b1", model->b1_);
  params.add("w2", model->w2_);
  params.add("b2", model->b2_);
  params.add("w3", model->w3_);
  params.add("b3", model->b3_);
  restore_parameters(params, ckpt);
  return model;
}

std::unique_ptr<CropClassifier> ConvClassifierTrainer::train(const LabeledCrops& data, int num_classes) const {
  auto model = std::make_unique<ConvClassifier>(num_classes, config_);
  model->fit(data);
  return model;
}

double accuracy_of(const CropClassifier& classifier, const LabeledCrops& data) {
  if (data.images.empty()) throw Error(ErrorCode::kInsufficientData, "no evaluation crops");
  const auto predicted = classifier.predict(data.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.images.size());
}

double classification_accuracy_score(Generator& generator, const std::vector<Layout>& layouts,
                                     const LabeledCrops& real_eval, const ClassifierTrainer& trainer, int num_classes,
                                     std::uint64_t seed, int samples_per_layout, int crop_size) {
  if (layouts.empty() || samples_per_layout < 1) throw Error(ErrorCode::kInsufficientData, "no layouts to generate from");
  if (real_eval.images.empty()) throw Error(ErrorCode::kInsufficientData, "no real evaluation crops");
  ag::NoGradGuard no_grad;
  LabeledCrops generated;
  constexpr std::size_t kChunk = 16;
  for (int sample = 0; sample < samples_per_layout; ++sample) {
    for (std::size_t start = 0; start < layouts.size(); start += kChunk) {
      const std::size_t end = std::min(layouts.size(), start + kChunk);
      std::vector<Layout> chunk(layouts.begin() + static_cast<std::ptrdiff_t>(start), layouts.begin() + static_cast<std::ptrdiff_t>(end));
      const auto styles = styles_for_step(chunk, generator.config(), derive_seed(seed, static_cast<std::uint64_t>(sample)),
                                          start, NoisePurpose::kEvaluation);
      const Tensor images = generator.generate(chunk, styles, false).image.value();
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        const Image image = tensor_to_image(images, static_cast<std::int64_t>(i));
        for (const auto& obj : chunk[i].objects) {
          generated.images.push_back(crop_object(image, obj.bbox, crop_size));
          generated.labels.push_back(obj.label);
        }
      }
    }
  }
  const auto classifier = trainer.train(generated, num_classes);
  return accuracy_of(*classifier, real_eval);
}

json evaluate_model(const LoadedModel& model, const LayoutDataset& data, const EvaluationOptions& options) {
  if (data.size() == 0) throw Error(ErrorCode::kInsufficientData, "empty dataset");
  for (const auto& m : options.metrics) {
    if (m != "is" && m != "fid" && m != "diversity" && m != "cas") throw Error(ErrorCode::kInvalidArgument, "unknown metric '" + m + "'");
  }
  auto wants = [&](const char* m) { return std::find(options.metrics.begin(), options.metrics.end(), m) != options.metrics.end(); };
  Generator& generator = *model.generator;
  const int side = generator.config().output_side();
  const int num_classes = model.cats.size();

  std::unique_ptr<ConvClassifier> desk;
  const Embedder* embedder = nullptr;
  IdentityEmbedder identity;
  if (options.embedder == "identity") {
    embedder = &identity;
  } else if (options.embedder == "desk") {
    if (options.embedder_checkpoint) {
      desk = ConvClassifier::load(*options.embedder_checkpoint);
    } else {
      desk = std::make_unique<ConvClassifier>(num_classes, ConvClassifierConfig{});
      desk->fit(object_crops(data, desk->config().crop_size));
    }
    embedder = desk.get();
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown embedder '" + options.embedder + "'");
  }

  std::vector<Layout> layouts;
  std::vector<Image> real;
  for (std::size_t i = 0; i < data.size() && static_cast<int>(layouts.size()) < options.layouts; ++i) {
    layouts.push_back(data.items[i].layout);
    real.push_back(resize_image(data.image(i), side, side));
  }

  auto render = [&](std::uint64_t draw) {
    ag::NoGradGuard no_grad;
    std::vector<Image> out;
    constexpr std::size_t kChunk = 16;
    for (std::size_t start = 0; start < layouts.size(); start += kChunk) {
      const std::size_t end = std::min(layouts.size(), start + kChunk);
      std::vector<Layout> chunk(layouts.begin() + static_cast<std::ptrdiff_t>(start), layouts.begin() + static_cast<std::ptrdiff_t>(end));
      const auto styles = styles_for_step(chunk, generator.config(), derive_seed(options.seed, draw), start, NoisePurpose::kEvaluation);
      const Tensor images = generator.generate(chunk, styles, false).image.value();
      for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(tensor_to_image(images, static_cast<std::int64_t>(i)));
    }
    return out;
  };
  const std::vector<Image> generated = render(0);
  const std::string provenance = provenance_name(embedder->provenance());

  json metrics = json::object();
  if (wants("is")) {
    std::vector<Image> crops;
    for (std::size_t i = 0; i < layouts.size(); ++i)
      for (const auto& obj : layouts[i].objects) crops.push_back(crop_object(generated[i], obj.bbox, 16));
    try {
      const auto score = inception_score(embedder->probabilities(crops), std::min<int>(options.is_splits, static_cast<int>(crops.size())));
      metrics["is"] = {{"mean", score.mean}, {"std", score.std}, {"splits", options.is_splits}, {"inputs", "object crops"},
                       {"provenance", provenance}};
    } catch (const Error& e) {
      metrics["is"] = {{"error", e.name()}, {"message", e.what()}, {"provenance", provenance}};
    }
  }
  if (wants("fid")) {
    const double fid = frechet_distance(summarize(embedder->pooled_features(real)), summarize(embedder->pooled_features(generated)));
    metrics["fid"] = {{"value", fid}, {"real", real.size()}, {"generated", generated.size()}, {"provenance", provenance}};
  }
  if (wants("diversity")) {
    std::vector<std::pair<Image, Image>> pairs;
    for (int p = 0; p < options.diversity_pairs; ++p) {
      const auto a = render(100 + 2 * static_cast<std::uint64_t>(p));
      const auto b = render(101 + 2 * static_cast<std::uint64_t>(p));
      for (std::size_t i = 0; i < a.size(); ++i) pairs.emplace_back(a[i], b[i]);
    }
    const auto score = diversity_score(pairs, *embedder);
    metrics["diversity"] = {{"mean", score.mean}, {"std", score.std}, {"pairs", pairs.size()}, {"provenance", provenance}};
  }
  if (wants("cas")) {
    LabeledCrops real_crops;
    for (std::size_t i = 0; i < layouts.size(); ++i) {
      for (const auto& obj : layouts[i].objects) {
        real_crops.images.push_back(crop_object(real[i], obj.bbox, 16));
        real_crops.labels.push_back(obj.label);
      }
    }
    const double cas = classification_accuracy_score(generator, layouts, real_crops, ConvClassifierTrainer{}, num_classes,
                                                     derive_seed(options.seed, 0x434153ull), options.cas_samples_per_layout);
    metrics["cas"] = {{"accuracy", cas}, {"classifier", "desk-classifier"}, {"samples_per_layout", options.cas_samples_per_layout},
                      {"provenance", "desk-oracle"}};
  }
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(model.hash));
  return {{"checkpoint", {{"hash", hash}, {"step", model.step}}},
          {"layouts", layouts.size()},
          {"embedder", {{"name", embedder->name()}, {"provenance", provenance}}},
          {"metrics", metrics}};
}

}  // namespace lostgan
