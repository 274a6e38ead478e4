#include "lostgan/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "lostgan/error.hpp"

namespace lostgan::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + shape_string(a.shape()) +
                                               " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Var& x, int rank, const char* op) {
  if (x.value().rank() != rank) {
    throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) +
                                               ", got " + shape_string(x.shape()));
  }
}

bool wants(const Node& n, std::size_t i) { return n.inputs[i] && n.inputs[i]->requires_grad; }

struct Geometry {
  std::int64_t n, h, w, c;
};

Geometry nhwc(const Var& x, const char* op) {
  require_rank(x, 4, op);
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

// Rows of the im2col matrix are output pixels; columns are (ky, kx, cin).
void im2col(const double* x, const Geometry& g, int k, int pad, double* cols) {
  const std::int64_t patch = static_cast<std::int64_t>(k) * k * g.c;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t y = 0; y < g.h; ++y) {
      for (std::int64_t xo = 0; xo < g.w; ++xo) {
        double* row = cols + ((n * g.h + y) * g.w + xo) * patch;
        for (int ky = 0; ky < k; ++ky) {
          const std::int64_t sy = y + ky - pad;
          for (int kx = 0; kx < k; ++kx) {
            const std::int64_t sx = xo + kx - pad;
            double* dst = row + (static_cast<std::int64_t>(ky) * k + kx) * g.c;
            if (sy < 0 || sy >= g.h || sx < 0 || sx >= g.w) {
              std::fill(dst, dst + g.c, 0.0);
            } else {
              const double* src = x + ((n * g.h + sy) * g.w + sx) * g.c;
              std::copy(src, src + g.c, dst);
            }
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const Geometry& g, int k, int pad, double* dx) {
  const std::int64_t patch = static_cast<std::int64_t>(k) * k * g.c;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t y = 0; y < g.h; ++y) {
      for (std::int64_t xo = 0; xo < g.w; ++xo) {
        const double* row = cols + ((n * g.h + y) * g.w + xo) * patch;
        for (int ky = 0; ky < k; ++ky) {
          const std::int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= g.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const std::int64_t sx = xo + kx - pad;
            if (sx < 0 || sx >= g.w) continue;
            const double* src = row + (static_cast<std::int64_t>(ky) * k + kx) * g.c;
            double* dst = dx + ((n * g.h + sy) * g.w + sx) * g.c;
            for (std::int64_t c = 0; c < g.c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  const Tensor& in = x.value();
  for (std::int64_t i = 0; i < in.numel(); ++i) out[i] = fwd(in[i]);
  return make_result(std::move(out), {x}, [deriv](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    const Tensor& xin = self.inputs[0]->value;
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[i] * deriv(xin[i], self.value[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.add_(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (wants(self, i)) self.inputs[i]->grad_buffer().add_(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->grad_buffer().add_(self.grad);
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (wants(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  out.scale_(factor);
  return make_result(std::move(out), {a}, [factor](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += factor * self.grad[i];
  });
}

Var add_scalar(const Var& a, double offset) {
  Tensor out = a.value();
  for (auto& v : out.values()) v += offset;
  return make_result(std::move(out), {a}, [](Node& self) { self.inputs[0]->grad_buffer().add_(self.grad); });
}

Var add_bias(const Var& x, const Var& b) {
  const std::int64_t c = b.value().numel();
  if (x.value().rank() == 0 || x.shape().back() != c) {
    throw Error(ErrorCode::kShapeMismatch, "add_bias: " + shape_string(x.shape()) + " + " + shape_string(b.shape()));
  }
  Tensor out = x.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i % c];
  return make_result(std::move(out), {x, b}, [c](Node& self) {
    if (wants(self, 0)) self.inputs[0]->grad_buffer().add_(self.grad);
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[i % c] += self.grad[i];
    }
  });
}

Var mul_channel(const Var& x, const Var& gvar) {
  const std::int64_t c = gvar.value().numel();
  if (x.value().rank() == 0 || x.shape().back() != c) {
    throw Error(ErrorCode::kShapeMismatch, "mul_channel: " + shape_string(x.shape()) + " * " + shape_string(gvar.shape()));
  }
  Tensor out = x.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= gvar.value()[i % c];
  return make_result(std::move(out), {x, gvar}, [c](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& gv = self.inputs[1]->value;
    if (wants(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * gv[i % c];
    }
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[i % c] += self.grad[i] * xv[i];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw Error(ErrorCode::kDimensionMismatch, "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  MatMap(out.data(), m, n).noalias() = ConstMatMap(a.value().data(), m, k) * ConstMatMap(b.value().data(), k, n);
  return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
    ConstMatMap dout(self.grad.data(), m, n);
    if (wants(self, 0)) {
      MatMap(self.inputs[0]->grad_buffer().data(), m, k).noalias() +=
          dout * ConstMatMap(self.inputs[1]->value.data(), k, n).transpose();
    }
    if (wants(self, 1)) {
      MatMap(self.inputs[1]->grad_buffer().data(), k, n).noalias() +=
          ConstMatMap(self.inputs[0]->value.data(), m, k).transpose() * dout;
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double out) { return 1.0 - out * out; });
}

Var sigmoid(const Var& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int pad) {
  const Geometry g = nhwc(x, "conv2d");
  require_rank(w, 4, "conv2d weight");
  const int k = static_cast<int>(w.dim(0));
  if (w.dim(1) != k || w.dim(2) != g.c) {
    throw Error(ErrorCode::kShapeMismatch, "conv2d: input " + shape_string(x.shape()) + " weight " + shape_string(w.shape()));
  }
  if (2 * pad != k - 1) throw Error(ErrorCode::kInvalidArgument, "conv2d supports same-size padding only");
  const std::int64_t cout = w.dim(3);
  const std::int64_t rows = g.n * g.h * g.w;
  const std::int64_t patch = static_cast<std::int64_t>(k) * k * g.c;

  Tensor out({g.n, g.h, g.w, cout});
  ConstMatMap wmat(w.value().data(), patch, cout);
  if (k == 1) {
    MatMap(out.data(), rows, cout).noalias() = ConstMatMap(x.value().data(), rows, patch) * wmat;
  } else {
    std::vector<double> cols(static_cast<std::size_t>(rows * patch));
    im2col(x.value().data(), g, k, pad, cols.data());
    MatMap(out.data(), rows, cout).noalias() = ConstMatMap(cols.data(), rows, patch) * wmat;
  }
  if (b.defined()) {
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i % cout];
  }

  std::vector<Var> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(std::move(out), std::move(inputs), [g, k, pad, cout, rows, patch](Node& self) {
    ConstMatMap dout(self.grad.data(), rows, cout);
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& wv = self.inputs[1]->value;
    std::vector<double> cols;
    const double* col_ptr = xv.data();
    if (k != 1 && wants(self, 1)) {
      cols.resize(static_cast<std::size_t>(rows * patch));
      im2col(xv.data(), g, k, pad, cols.data());
      col_ptr = cols.data();
    }
    if (wants(self, 1)) {
      MatMap(self.inputs[1]->grad_buffer().data(), patch, cout).noalias() +=
          ConstMatMap(col_ptr, rows, patch).transpose() * dout;
    }
    if (self.inputs.size() > 2 && wants(self, 2)) {
      Tensor& gb = self.inputs[2]->grad_buffer();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) gb[i % cout] += self.grad[i];
    }
    if (wants(self, 0)) {
      Tensor& gx = self.inputs[0]->grad_buffer();
      if (k == 1) {
        MatMap(gx.data(), rows, patch).noalias() += dout * ConstMatMap(wv.data(), patch, cout).transpose();
      } else {
        std::vector<double> dcols(static_cast<std::size_t>(rows * patch));
        MatMap(dcols.data(), rows, patch).noalias() = dout * ConstMatMap(wv.data(), patch, cout).transpose();
        col2im(dcols.data(), g, k, pad, gx.data());
      }
    }
  });
}

namespace {

// Source taps for one output coordinate of x2 bilinear upsampling.
struct Taps {
  std::int64_t lo, hi;
  double w_lo, w_hi;
};

std::vector<Taps> upsample_taps(std::int64_t in) {
  std::vector<Taps> taps(static_cast<std::size_t>(2 * in));
  for (std::int64_t o = 0; o < 2 * in; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    std::int64_t lo = static_cast<std::int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::int64_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    taps[static_cast<std::size_t>(o)] = {lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

Var upsample2x(const Var& x) {
  const Geometry g = nhwc(x, "upsample2x");
  const auto ty = upsample_taps(g.h);
  const auto tx = upsample_taps(g.w);
  const std::int64_t oh = 2 * g.h, ow = 2 * g.w;
  Tensor out({g.n, oh, ow, g.c});
  const double* in = x.value().data();
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t y = 0; y < oh; ++y) {
      const Taps& a = ty[static_cast<std::size_t>(y)];
      for (std::int64_t xo = 0; xo < ow; ++xo) {
        const Taps& b = tx[static_cast<std::size_t>(xo)];
        double* dst = out.data() + ((n * oh + y) * ow + xo) * g.c;
        const double* p00 = in + ((n * g.h + a.lo) * g.w + b.lo) * g.c;
        const double* p01 = in + ((n * g.h + a.lo) * g.w + b.hi) * g.c;
        const double* p10 = in + ((n * g.h + a.hi) * g.w + b.lo) * g.c;
        const double* p11 = in + ((n * g.h + a.hi) * g.w + b.hi) * g.c;
        const double w00 = a.w_lo * b.w_lo, w01 = a.w_lo * b.w_hi, w10 = a.w_hi * b.w_lo, w11 = a.w_hi * b.w_hi;
        for (std::int64_t c = 0; c < g.c; ++c) dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  }
  return make_result(std::move(out), {x}, [g, ty, tx, oh, ow](Node& self) {
    double* gin = self.inputs[0]->grad_buffer().data();
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t y = 0; y < oh; ++y) {
        const Taps& a = ty[static_cast<std::size_t>(y)];
        for (std::int64_t xo = 0; xo < ow; ++xo) {
          const Taps& b = tx[static_cast<std::size_t>(xo)];
          const double* src = self.grad.data() + ((n * oh + y) * ow + xo) * g.c;
          double* p00 = gin + ((n * g.h + a.lo) * g.w + b.lo) * g.c;
          double* p01 = gin + ((n * g.h + a.lo) * g.w + b.hi) * g.c;
          double* p10 = gin + ((n * g.h + a.hi) * g.w + b.lo) * g.c;
          double* p11 = gin + ((n * g.h + a.hi) * g.w + b.hi) * g.c;
          const double w00 = a.w_lo * b.w_lo, w01 = a.w_lo * b.w_hi, w10 = a.w_hi * b.w_lo, w11 = a.w_hi * b.w_hi;
          for (std::int64_t c = 0; c < g.c; ++c) {
            p00[c] += w00 * src[c];
            p01[c] += w01 * src[c];
            p10[c] += w10 * src[c];
            p11[c] += w11 * src[c];
          }
        }
      }
    }
  });
}

Var avg_pool2x(const Var& x) {
  const Geometry g = nhwc(x, "avg_pool2x");
  if (g.h % 2 || g.w % 2) throw Error(ErrorCode::kShapeMismatch, "avg_pool2x needs even spatial size");
  const std::int64_t oh = g.h / 2, ow = g.w / 2;
  Tensor out({g.n, oh, ow, g.c});
  const double* in = x.value().data();
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xo = 0; xo < ow; ++xo) {
        double* dst = out.data() + ((n * oh + y) * ow + xo) * g.c;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const double* src = in + ((n * g.h + 2 * y + dy) * g.w + 2 * xo + dx) * g.c;
            for (std::int64_t c = 0; c < g.c; ++c) dst[c] += 0.25 * src[c];
          }
      }
  return make_result(std::move(out), {x}, [g, oh, ow](Node& self) {
    double* gin = self.inputs[0]->grad_buffer().data();
    for (std::int64_t n = 0; n < g.n; ++n)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xo = 0; xo < ow; ++xo) {
          const double* src = self.grad.data() + ((n * oh + y) * ow + xo) * g.c;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              double* dst = gin + ((n * g.h + 2 * y + dy) * g.w + 2 * xo + dx) * g.c;
              for (std::int64_t c = 0; c < g.c; ++c) dst[c] += 0.25 * src[c];
            }
        }
  });
}

Var global_avg_pool(const Var& x) {
  const Geometry g = nhwc(x, "global_avg_pool");
  const std::int64_t hw = g.h * g.w;
  Tensor out({g.n, g.c});
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t p = 0; p < hw; ++p)
      for (std::int64_t c = 0; c < g.c; ++c) out[n * g.c + c] += x.value()[(n * hw + p) * g.c + c] / static_cast<double>(hw);
  return make_result(std::move(out), {x}, [g, hw](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    for (std::int64_t n = 0; n < g.n; ++n)
      for (std::int64_t p = 0; p < hw; ++p)
        for (std::int64_t c = 0; c < g.c; ++c) gx[(n * hw + p) * g.c + c] += self.grad[n * g.c + c] / static_cast<double>(hw);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  const std::int64_t m = a.dim(0), ka = a.dim(1), kb = b.dim(1);
  if (b.dim(0) != m) throw Error(ErrorCode::kDimensionMismatch, "concat_cols row mismatch");
  Tensor out({m, ka + kb});
  for (std::int64_t i = 0; i < m; ++i) {
    std::copy_n(a.value().data() + i * ka, ka, out.data() + i * (ka + kb));
    std::copy_n(b.value().data() + i * kb, kb, out.data() + i * (ka + kb) + ka);
  }
  return make_result(std::move(out), {a, b}, [m, ka, kb](Node& self) {
    for (std::int64_t i = 0; i < m; ++i) {
      const double* row = self.grad.data() + i * (ka + kb);
      if (wants(self, 0)) {
        double* ga = self.inputs[0]->grad_buffer().data() + i * ka;
        for (std::int64_t j = 0; j < ka; ++j) ga[j] += row[j];
      }
      if (wants(self, 1)) {
        double* gb = self.inputs[1]->grad_buffer().data() + i * kb;
        for (std::int64_t j = 0; j < kb; ++j) gb[j] += row[ka + j];
      }
    }
  });
}

Var slice_cols(const Var& x, std::int64_t start, std::int64_t count) {
  require_rank(x, 2, "slice_cols");
  const std::int64_t m = x.dim(0), k = x.dim(1);
  if (start < 0 || count < 0 || start + count > k) throw Error(ErrorCode::kIndexOutOfRange, "slice_cols");
  Tensor out({m, count});
  for (std::int64_t i = 0; i < m; ++i) std::copy_n(x.value().data() + i * k + start, count, out.data() + i * count);
  return make_result(std::move(out), {x}, [m, k, start, count](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < count; ++j) g[i * k + start + j] += self.grad[i * count + j];
  });
}

Var gather_rows(const Var& table, const std::vector<std::int64_t>& rows) {
  require_rank(table, 2, "gather_rows");
  const std::int64_t v = table.dim(0), d = table.dim(1);
  const auto m = static_cast<std::int64_t>(rows.size());
  Tensor out({m, d});
  for (std::int64_t i = 0; i < m; ++i) {
    const std::int64_t r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= v) throw Error(ErrorCode::kUnknownLabel, "row " + std::to_string(r) + " outside table of " + std::to_string(v));
    std::copy_n(table.value().data() + r * d, d, out.data() + i * d);
  }
  return make_result(std::move(out), {table}, [rows, d](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::int64_t j = 0; j < d; ++j) g[rows[i] * d + j] += self.grad[static_cast<std::int64_t>(i) * d + j];
  });
}

Var rows_dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "rows_dot");
  require_rank(a, 2, "rows_dot");
  const std::int64_t m = a.dim(0), d = a.dim(1);
  Tensor out({m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < d; ++j) out[i] += a.value()[i * d + j] * b.value()[i * d + j];
  return make_result(std::move(out), {a, b}, [m, d](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (wants(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i] * bv[i * d + j];
    }
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i] * av[i * d + j];
    }
  });
}

Var segment_mean(const Var& x, const std::vector<std::int64_t>& segment, std::int64_t segments) {
  if (x.value().numel() != static_cast<std::int64_t>(segment.size())) {
    throw Error(ErrorCode::kShapeMismatch, "segment_mean: segment ids do not match input length");
  }
  std::vector<double> counts(static_cast<std::size_t>(segments), 0.0);
  for (auto s : segment) {
    if (s < 0 || s >= segments) throw Error(ErrorCode::kIndexOutOfRange, "segment id");
    counts[static_cast<std::size_t>(s)] += 1.0;
  }
  for (double c : counts)
    if (c == 0.0) throw Error(ErrorCode::kEmptyObjectSet, "segment_mean over an empty segment");
  Tensor out({segments});
  for (std::size_t k = 0; k < segment.size(); ++k) out[segment[k]] += x.value()[static_cast<std::int64_t>(k)];
  for (std::int64_t s = 0; s < segments; ++s) out[s] /= counts[static_cast<std::size_t>(s)];
  return make_result(std::move(out), {x}, [segment, counts](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t k = 0; k < segment.size(); ++k)
      g[static_cast<std::int64_t>(k)] += self.grad[segment[k]] / counts[static_cast<std::size_t>(segment[k])];
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return make_result(Tensor::scalar(total), {x}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const double d = self.grad[0];
    for (auto& v : g.values()) v += d;
  });
}

Var mean(const Var& x) {
  const auto n = static_cast<double>(x.value().numel());
  if (n == 0) throw Error(ErrorCode::kDegenerateInput, "mean of an empty tensor");
  return scale(sum(x), 1.0 / n);
}

Var softmax_cross_entropy(const Var& logits, const std::vector<std::int64_t>& labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n || n == 0) {
    throw Error(ErrorCode::kShapeMismatch, "softmax_cross_entropy: label count");
  }
  Tensor probs({n, k});
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = logits.value().data() + i * k;
    const double top = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(row[j] - top);
    for (std::int64_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - top) / z;
    const std::int64_t y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw Error(ErrorCode::kUnknownLabel, "class label outside logits");
    loss -= (row[y] - top) - std::log(z);
  }
  loss /= static_cast<double>(n);
  return make_result(Tensor::scalar(loss), {logits}, [probs, labels, n, k](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const double d = self.grad[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < k; ++j) {
        const double target = (labels[static_cast<std::size_t>(i)] == j) ? 1.0 : 0.0;
        g[i * k + j] += d * (probs[i * k + j] - target);
      }
  });
}

Var batch_normalize(const Var& x, double eps, Tensor* batch_mean, Tensor* batch_var) {
  if (x.value().rank() < 2) throw Error(ErrorCode::kShapeMismatch, "batch_normalize needs rank >= 2");
  const std::int64_t c = x.shape().back();
  const std::int64_t count = x.value().numel() / c;
  Tensor mu({c}), var({c});
  const Tensor& xv = x.value();
  for (std::int64_t i = 0; i < xv.numel(); ++i) mu[i % c] += xv[i];
  for (std::int64_t j = 0; j < c; ++j) mu[j] /= static_cast<double>(count);
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    const double d = xv[i] - mu[i % c];
    var[i % c] += d * d;
  }
  for (std::int64_t j = 0; j < c; ++j) var[j] /= static_cast<double>(count);
  Tensor inv_std({c});
  for (std::int64_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i) out[i] = (xv[i] - mu[i % c]) * inv_std[i % c];
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;
  return make_result(std::move(out), {x}, [inv_std, c, count](Node& self) {
    Tensor& gx = self.inputs[0]->grad_buffer();
    const Tensor& xhat = self.value;
    std::vector<double> mean_g(static_cast<std::size_t>(c), 0.0), mean_gx(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t i = 0; i < xhat.numel(); ++i) {
      mean_g[static_cast<std::size_t>(i % c)] += self.grad[i];
      mean_gx[static_cast<std::size_t>(i % c)] += self.grad[i] * xhat[i];
    }
    for (std::int64_t j = 0; j < c; ++j) {
      mean_g[static_cast<std::size_t>(j)] /= static_cast<double>(count);
      mean_gx[static_cast<std::size_t>(j)] /= static_cast<double>(count);
    }
    for (std::int64_t i = 0; i < xhat.numel(); ++i) {
      const auto j = static_cast<std::size_t>(i % c);
      gx[i] += inv_std[i % c] * (self.grad[i] - mean_g[j] - xhat[i] * mean_gx[j]);
    }
  });
}

Var normalize_with(const Var& x, const Tensor& mean_stat, const Tensor& var_stat, double eps) {
  const std::int64_t c = x.shape().back();
  if (mean_stat.numel() != c || var_stat.numel() != c) throw Error(ErrorCode::kShapeMismatch, "normalize_with stats");
  Tensor inv_std({c});
  for (std::int64_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var_stat[j] + eps);
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = (x.value()[i] - mean_stat[i % c]) * inv_std[i % c];
  return make_result(std::move(out), {x}, [inv_std, c](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * inv_std[i % c];
  });
}

Var spectral_normalize(const Var& w, Tensor& u, bool update) {
  const std::int64_t cols = w.shape().back();
  const std::int64_t rows = w.value().numel() / cols;
  if (u.numel() != cols) throw Error(ErrorCode::kShapeMismatch, "spectral_normalize: u length");
  ConstMatMap m(w.value().data(), rows, cols);
  Eigen::Map<Eigen::VectorXd> uvec(u.data(), cols);
  constexpr double kTiny = 1e-12;
  if (update) {
    Eigen::VectorXd v = m * uvec;
    v /= std::max(v.norm(), kTiny);
    Eigen::VectorXd un = m.transpose() * v;
    uvec = un / std::max(un.norm(), kTiny);
  }
  Eigen::VectorXd v = m * uvec;
  const double sigma_raw = v.norm();
  v /= std::max(sigma_raw, kTiny);
  const double sigma = std::max(sigma_raw, kTiny);
  Tensor out = w.value();
  out.scale_(1.0 / sigma);
  Tensor ucopy = u;
  std::vector<double> vcopy(v.data(), v.data() + v.size());
  return make_result(std::move(out), {w}, [rows, cols, sigma, ucopy, vcopy](Node& self) {
    ConstMatMap gout(self.grad.data(), rows, cols);
    ConstMatMap wsn(self.value.data(), rows, cols);
    const double inner = (gout.array() * wsn.array()).sum();
    MatMap gw(self.inputs[0]->grad_buffer().data(), rows, cols);
    Eigen::Map<const Eigen::VectorXd> vv(vcopy.data(), rows);
    Eigen::Map<const Eigen::VectorXd> uu(ucopy.data(), cols);
    gw += gout / sigma;
    gw.noalias() -= (inner / sigma) * (vv * uu.transpose());
  });
}

}  // namespace lostgan::ag
