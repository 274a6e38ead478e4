#include "lostgan/roi_align.hpp"

#include <cmath>

#include "lostgan/error.hpp"

namespace lostgan {
namespace {

struct Sample {
  std::int64_t offset[4];  // pixel offsets (y * W + x) within the sample
  double weight[4];
  bool valid;
};

Sample bilinear_sample(double y, double x, std::int64_t height, std::int64_t width) {
  Sample s{};
  if (y < -1.0 || y > static_cast<double>(height) || x < -1.0 || x > static_cast<double>(width)) {
    s.valid = false;
    return s;
  }
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  auto y_lo = static_cast<std::int64_t>(y);
  auto x_lo = static_cast<std::int64_t>(x);
  std::int64_t y_hi, x_hi;
  if (y_lo >= height - 1) {
    y_hi = y_lo = height - 1;
    y = static_cast<double>(y_lo);
  } else {
    y_hi = y_lo + 1;
  }
  if (x_lo >= width - 1) {
    x_hi = x_lo = width - 1;
    x = static_cast<double>(x_lo);
  } else {
    x_hi = x_lo + 1;
  }
  const double ly = y - static_cast<double>(y_lo), lx = x - static_cast<double>(x_lo);
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  s.offset[0] = y_lo * width + x_lo;
  s.offset[1] = y_lo * width + x_hi;
  s.offset[2] = y_hi * width + x_lo;
  s.offset[3] = y_hi * width + x_hi;
  s.weight[0] = hy * hx;
  s.weight[1] = hy * lx;
  s.weight[2] = ly * hx;
  s.weight[3] = ly * lx;
  s.valid = true;
  return s;
}

}  // namespace

ag::Var roi_align(const ag::Var& features, const std::vector<isla::ObjectPlacement>& rois, int output_size,
                  int sampling_ratio) {
  if (features.value().rank() != 4) throw Error(ErrorCode::kShapeMismatch, "roi_align expects N x H x W x C");
  if (output_size < 1 || sampling_ratio < 1) throw Error(ErrorCode::kInvalidArgument, "roi_align sizes");
  const std::int64_t n = features.dim(0), h = features.dim(1), w = features.dim(2), c = features.dim(3);
  const auto r = static_cast<std::int64_t>(rois.size());
  const int k = output_size;
  const double inv_count = 1.0 / (static_cast<double>(sampling_ratio) * sampling_ratio);

  // Sampling plan shared by forward and backward: per roi, per bin, the samples.
  std::vector<Sample> plan(static_cast<std::size_t>(r * k * k * sampling_ratio * sampling_ratio));
  std::vector<std::int64_t> base(static_cast<std::size_t>(r));
  std::size_t idx = 0;
  for (std::int64_t i = 0; i < r; ++i) {
    const auto& roi = rois[static_cast<std::size_t>(i)];
    if (roi.sample < 0 || roi.sample >= n) throw Error(ErrorCode::kIndexOutOfRange, "roi sample index");
    const double bw = roi.bbox.w * static_cast<double>(w);
    const double bh = roi.bbox.h * static_cast<double>(h);
    if (!(bw > 0.0) || !(bh > 0.0)) throw Error(ErrorCode::kDegenerateBox, "roi with zero extent");
    base[static_cast<std::size_t>(i)] = roi.sample * h * w;
    const double x0 = roi.bbox.x * static_cast<double>(w) - 0.5;
    const double y0 = roi.bbox.y * static_cast<double>(h) - 0.5;
    const double bin_w = bw / k, bin_h = bh / k;
    for (int py = 0; py < k; ++py)
      for (int px = 0; px < k; ++px)
        for (int iy = 0; iy < sampling_ratio; ++iy)
          for (int ix = 0; ix < sampling_ratio; ++ix) {
            const double yy = y0 + py * bin_h + (iy + 0.5) * bin_h / sampling_ratio;
            const double xx = x0 + px * bin_w + (ix + 0.5) * bin_w / sampling_ratio;
            plan[idx++] = bilinear_sample(yy, xx, h, w);
          }
  }

  const std::int64_t per_bin = static_cast<std::int64_t>(sampling_ratio) * sampling_ratio;
  Tensor out({r, k, k, c});
  const double* f = features.value().data();
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t bin = 0; bin < k * k; ++bin) {
      double* dst = out.data() + (i * k * k + bin) * c;
      for (std::int64_t s = 0; s < per_bin; ++s) {
        const Sample& smp = plan[static_cast<std::size_t>((i * k * k + bin) * per_bin + s)];
        if (!smp.valid) continue;
        for (int q = 0; q < 4; ++q) {
          const double wq = smp.weight[q] * inv_count;
          const double* src = f + (base[static_cast<std::size_t>(i)] + smp.offset[q]) * c;
          for (std::int64_t ch = 0; ch < c; ++ch) dst[ch] += wq * src[ch];
        }
      }
    }
  }

  return ag::make_result(std::move(out), {features}, [plan, base, r, k, c, per_bin, inv_count](ag::Node& self) {
    double* g = self.inputs[0]->grad_buffer().data();
    for (std::int64_t i = 0; i < r; ++i) {
      for (std::int64_t bin = 0; bin < k * k; ++bin) {
        const double* src = self.grad.data() + (i * k * k + bin) * c;
        for (std::int64_t s = 0; s < per_bin; ++s) {
          const Sample& smp = plan[static_cast<std::size_t>((i * k * k + bin) * per_bin + s)];
          if (!smp.valid) continue;
          for (int q = 0; q < 4; ++q) {
            const double wq = smp.weight[q] * inv_count;
            double* dst = g + (base[static_cast<std::size_t>(i)] + smp.offset[q]) * c;
            for (std::int64_t ch = 0; ch < c; ++ch) dst[ch] += wq * src[ch];
          }
        }
      }
    }
  });
}

}  // namespace lostgan
