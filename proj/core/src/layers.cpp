#include "lostgan/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

#include "lostgan/error.hpp"
#include "lostgan/ops.hpp"

namespace lostgan {
namespace {

Tensor unit_vector(std::int64_t n, PhiloxStream& rng) {
  Tensor u({n});
  double norm = 0.0;
  for (auto& v : u.values()) {
    v = rng.normal();
    norm += v * v;
  }
  u.scale_(1.0 / std::sqrt(norm));
  return u;
}

}  // namespace

void ParameterSet::zero_grad() {
  for (auto& p : parameters) p.var.zero_grad();
}

void ParameterSet::set_requires_grad(bool flag) {
  for (auto& p : parameters) p.var.set_requires_grad(flag);
}

std::uint64_t ParameterSet::value_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& p : parameters) {
    mix(p.name.data(), p.name.size());
    mix(p.var.value().data(), static_cast<std::size_t>(p.var.value().numel()) * sizeof(double));
  }
  return h;
}

std::int64_t ParameterSet::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters) n += p.var.value().numel();
  return n;
}

Tensor orthogonal(const Shape& shape, PhiloxStream& rng, double gain) {
  Tensor out(shape);
  const std::int64_t cols = shape.back();
  const std::int64_t rows = out.numel() / cols;
  const bool tall = rows >= cols;
  const std::int64_t r = tall ? rows : cols;
  const std::int64_t c = tall ? cols : rows;
  Eigen::MatrixXd a(r, c);
  for (std::int64_t j = 0; j < c; ++j)
    for (std::int64_t i = 0; i < r; ++i) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
  const Eigen::MatrixXd rmat = qr.matrixQR().topLeftCorner(c, c);
  for (std::int64_t j = 0; j < c; ++j)
    if (rmat(j, j) < 0) q.col(j) *= -1.0;
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) out[i * cols + j] = gain * (tall ? q(i, j) : q(j, i));
  return out;
}

Linear::Linear(int in, int out, PhiloxStream& rng, bool with_bias, bool spectral_norm)
    : weight(orthogonal({in, out}, rng), true), spectral(spectral_norm) {
  if (with_bias) bias = ag::Var(Tensor({out}), true);
  if (spectral) u = unit_vector(out, rng);
}

ag::Var Linear::effective_weight(bool training) {
  return spectral ? ag::spectral_normalize(weight, u, training && ag::grad_enabled()) : weight;
}

ag::Var Linear::forward(const ag::Var& x, bool training) {
  return ag::linear(x, effective_weight(training), bias);
}

void Linear::collect(ParameterSet& set, const std::string& prefix) {
  set.add(prefix + ".weight", weight);
  if (bias.defined()) set.add(prefix + ".bias", bias);
  if (spectral) set.add_buffer(prefix + ".u", &u);
}

Conv2d::Conv2d(int in, int out, int kernel_size, PhiloxStream& rng, bool spectral_norm)
    : weight(orthogonal({kernel_size, kernel_size, in, out}, rng), true),
      bias(Tensor({out}), true),
      kernel(kernel_size),
      spectral(spectral_norm) {
  if (spectral) u = unit_vector(out, rng);
}

ag::Var Conv2d::forward(const ag::Var& x, bool training) {
  ag::Var w = spectral ? ag::spectral_normalize(weight, u, training && ag::grad_enabled()) : weight;
  return ag::conv2d(x, w, bias, (kernel - 1) / 2);
}

void Conv2d::collect(ParameterSet& set, const std::string& prefix) {
  set.add(prefix + ".weight", weight);
  set.add(prefix + ".bias", bias);
  if (spectral) set.add_buffer(prefix + ".u", &u);
}

Embedding::Embedding(int vocabulary, int dim, PhiloxStream& rng, bool spectral_norm)
    : table(orthogonal({vocabulary, dim}, rng), true), spectral(spectral_norm) {
  if (spectral) u = unit_vector(dim, rng);
}

ag::Var Embedding::effective_table(bool training) {
  return spectral ? ag::spectral_normalize(table, u, training && ag::grad_enabled()) : table;
}

ag::Var Embedding::lookup(const std::vector<std::int64_t>& rows, bool training) {
  return ag::gather_rows(effective_table(training), rows);
}

void Embedding::collect(ParameterSet& set, const std::string& prefix) {
  set.add(prefix + ".table", table);
  if (spectral) set.add_buffer(prefix + ".u", &u);
}

RunningStats::RunningStats(int channels, double momentum_)
    : mean(Tensor({channels}, 0.0)), var(Tensor({channels}, 1.0)), momentum(momentum_) {}

void RunningStats::update(const Tensor& batch_mean, const Tensor& batch_var, std::int64_t count) {
  const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
  for (std::int64_t c = 0; c < mean.numel(); ++c) {
    mean[c] = (1.0 - momentum) * mean[c] + momentum * batch_mean[c];
    var[c] = (1.0 - momentum) * var[c] + momentum * batch_var[c] * unbias;
  }
}

ag::Var normalize_features(const ag::Var& x, RunningStats& stats, bool training, double eps) {
  if (x.shape().back() != stats.mean.numel()) {
    throw Error(ErrorCode::kShapeMismatch, "normalisation expects " + std::to_string(stats.mean.numel()) +
                                               " channels, got " + shape_string(x.shape()));
  }
  if (!training) return ag::normalize_with(x, stats.mean, stats.var, eps);
  Tensor mu, var;
  ag::Var out = ag::batch_normalize(x, eps, &mu, &var);
  stats.update(mu, var, x.value().numel() / x.shape().back());
  return out;
}

BatchNorm::BatchNorm(int channels)
    : gamma(Tensor({channels}, 1.0), true), beta(Tensor({channels}, 0.0), true), stats(channels) {}

ag::Var BatchNorm::forward(const ag::Var& x, bool training) {
  return ag::add_bias(ag::mul_channel(normalize_features(x, stats, training), gamma), beta);
}

void BatchNorm::collect(ParameterSet& set, const std::string& prefix) {
  set.add(prefix + ".gamma", gamma);
  set.add(prefix + ".beta", beta);
  set.add_buffer(prefix + ".running_mean", &stats.mean);
  set.add_buffer(prefix + ".running_var", &stats.var);
}

}  // namespace lostgan
