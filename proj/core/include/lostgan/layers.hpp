#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lostgan/autograd.hpp"
#include "lostgan/rng.hpp"

namespace lostgan {

struct NamedParameter {
  std::string name;
  ag::Var var;
};

// Non-trainable state that still belongs in a checkpoint (running statistics,
// power-iteration vectors).
struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

struct ParameterSet {
  std::vector<NamedParameter> parameters;
  std::vector<NamedBuffer> buffers;

  void add(std::string name, const ag::Var& var) { parameters.push_back({std::move(name), var}); }
  void add_buffer(std::string name, Tensor* tensor) { buffers.push_back({std::move(name), tensor}); }
  void zero_grad();
  void set_requires_grad(bool flag);
  // Order-sensitive FNV-1a hash of every parameter value.
  std::uint64_t value_hash() const;
  std::int64_t parameter_count() const;
};

// Orthogonal initialisation of a weight viewed as (numel / last) x last.
Tensor orthogonal(const Shape& shape, PhiloxStream& rng, double gain = 1.0);

struct Linear {
  ag::Var weight;  // in x out
  ag::Var bias;    // out
  bool spectral = false;
  Tensor u;

  Linear() = default;
  Linear(int in, int out, PhiloxStream& rng, bool with_bias = true, bool spectral_norm = false);

  ag::Var effective_weight(bool training);
  ag::Var forward(const ag::Var& x, bool training);
  void collect(ParameterSet& set, const std::string& prefix);
};

struct Conv2d {
  ag::Var weight;  // k x k x in x out
  ag::Var bias;
  int kernel = 3;
  bool spectral = false;
  Tensor u;

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, PhiloxStream& rng, bool spectral_norm = false);

  ag::Var forward(const ag::Var& x, bool training);
  void collect(ParameterSet& set, const std::string& prefix);
};

// Embedding table with optional spectral normalisation of the whole table.
struct Embedding {
  ag::Var table;  // vocabulary x dim
  bool spectral = false;
  Tensor u;

  Embedding() = default;
  Embedding(int vocabulary, int dim, PhiloxStream& rng, bool spectral_norm = false);

  ag::Var effective_table(bool training);
  ag::Var lookup(const std::vector<std::int64_t>& rows, bool training);
  void collect(ParameterSet& set, const std::string& prefix);
};

// Tracked statistics for batch-statistics normalisation.
struct RunningStats {
  Tensor mean;
  Tensor var;
  double momentum = 0.1;

  RunningStats() = default;
  explicit RunningStats(int channels, double momentum = 0.1);
  // Blends in biased batch statistics; the variance is stored unbiased.
  void update(const Tensor& batch_mean, const Tensor& batch_var, std::int64_t count);
};

inline constexpr double kNormEpsilon = 1e-5;

// Batch normalisation (training) or tracked-statistics normalisation (eval).
ag::Var normalize_features(const ag::Var& x, RunningStats& stats, bool training, double eps = kNormEpsilon);

// Plain batch norm with a learned per-channel affine.
struct BatchNorm {
  ag::Var gamma;
  ag::Var beta;
  RunningStats stats;

  BatchNorm() = default;
  explicit BatchNorm(int channels);
  ag::Var forward(const ag::Var& x, bool training);
  void collect(ParameterSet& set, const std::string& prefix);
};

}  // namespace lostgan
