#pragma once

#include <cstdint>
#include <vector>

#include "lostgan/autograd.hpp"

// Differentiable building blocks. Feature maps are N x H x W x C.
namespace lostgan::ag {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);

// x[..., C] + b[C]
Var add_bias(const Var& x, const Var& b);
// x[..., C] * g[C]
Var mul_channel(const Var& x, const Var& g);

Var matmul(const Var& a, const Var& b);
// x[M, in] * w[in, out] (+ b[out] when defined)
Var linear(const Var& x, const Var& w, const Var& b);

Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);

Var reshape(const Var& x, Shape shape);

// Stride-1 convolution with zero padding `pad`. w is kh x kw x Cin x Cout.
Var conv2d(const Var& x, const Var& w, const Var& b, int pad);
// Bilinear x2 upsampling with half-pixel centres (edge-clamped).
Var upsample2x(const Var& x);
Var avg_pool2x(const Var& x);
// N x H x W x C -> N x C
Var global_avg_pool(const Var& x);

Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& x, std::int64_t start, std::int64_t count);
Var gather_rows(const Var& table, const std::vector<std::int64_t>& rows);
// Sum over the last axis of a*b for two M x D matrices -> [M]
Var rows_dot(const Var& a, const Var& b);
// out[s] = mean of x[k] over k with segment[k] == s. Every segment must be non-empty.
Var segment_mean(const Var& x, const std::vector<std::int64_t>& segment, std::int64_t segments);

Var sum(const Var& x);
Var mean(const Var& x);

// Mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(const Var& logits, const std::vector<std::int64_t>& labels);

// Per-channel (x - mean) / sqrt(var + eps) with statistics over every axis but
// the last. Biased batch statistics are written to batch_mean / batch_var
// when non-null.
Var batch_normalize(const Var& x, double eps, Tensor* batch_mean = nullptr, Tensor* batch_var = nullptr);
// Same normalisation with fixed statistics (evaluation mode).
Var normalize_with(const Var& x, const Tensor& mean, const Tensor& var, double eps);

// W / sigma(W) where the weight is viewed as a (numel / Cout) x Cout matrix and
// sigma is estimated by power iteration on `u` (length Cout). When `update` is
// set, one iteration refreshes `u` in place before sigma is computed. u and
// the derived v are treated as constants in the backward pass.
Var spectral_normalize(const Var& w, Tensor& u, bool update);

}  // namespace lostgan::ag
