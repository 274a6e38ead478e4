#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "lostgan/isla_norm.hpp"
#include "test_support.hpp"

namespace lostgan::testing {

using isla::AffineMaps;
using isla::OverlapRule;

// Reference composition written cell by cell.
struct Footprint {
  int y0, y1, x0, x1;
  bool has(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

inline int nearest_boundary(double v, int size) {
  const double r = std::floor(v * size + 0.5);
  return static_cast<int>(std::min<double>(std::max<double>(r, 0.0), size));
}

inline Footprint footprint(const BBox& b, int h, int w) {
  return {nearest_boundary(b.y, h), nearest_boundary(b.y + b.h, h), nearest_boundary(b.x, w),
          nearest_boundary(b.x + b.w, w)};
}

// Mask value at a cell, interpolating the s x s mask stretched over the extent
// with half-pixel centres and edge clamping.
inline double stretched_mask(const Tensor& masks, int object, int s, const Footprint& f, int y, int x) {
  auto coord = [s](int local, int extent) {
    double c = (local + 0.5) * s / extent - 0.5;
    return std::min(std::max(c, 0.0), s - 1.0);
  };
  const double cy = coord(y - f.y0, f.y1 - f.y0), cx = coord(x - f.x0, f.x1 - f.x0);
  const int y_lo = static_cast<int>(std::floor(cy)), x_lo = static_cast<int>(std::floor(cx));
  const int y_hi = std::min(y_lo + 1, s - 1), x_hi = std::min(x_lo + 1, s - 1);
  const double ty = cy - y_lo, tx = cx - x_lo;
  auto m = [&](int yy, int xx) { return masks[(static_cast<std::int64_t>(object) * s + yy) * s + xx]; };
  return (1 - ty) * ((1 - tx) * m(y_lo, x_lo) + tx * m(y_lo, x_hi)) + ty * ((1 - tx) * m(y_hi, x_lo) + tx * m(y_hi, x_hi));
}

inline AffineMaps oracle_compose(const Tensor& gamma, const Tensor& beta, const Tensor& masks, const Layout& layout, int h,
                          int w, OverlapRule rule) {
  const int m = layout.size();
  const int c = static_cast<int>(gamma.dim(1));
  const int s = static_cast<int>(masks.dim(1));
  AffineMaps out{Tensor({h, w, c}), Tensor({h, w, c}), std::vector<int>(static_cast<std::size_t>(h * w), 0), {}};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int count = 0;
      double weight_sum = 0.0;
      std::vector<double> g(c, 0.0), b(c, 0.0);
      for (int i = 0; i < m; ++i) {
        const auto f = footprint(layout.objects[i].bbox, h, w);
        if (!f.has(y, x)) continue;
        const double wi = stretched_mask(masks, i, s, f, y, x);
        ++count;
        weight_sum += wi;
        for (int k = 0; k < c; ++k) {
          g[k] += wi * gamma.at({i, k});
          b[k] += wi * beta.at({i, k});
        }
      }
      out.coverage[static_cast<std::size_t>(y * w + x)] = count;
      const double denom = rule == OverlapRule::kCoverageCount ? count : std::max(weight_sum, 1e-12);
      for (int k = 0; k < c; ++k) {
        out.gamma.at({y, x, k}) = count ? g[k] / denom : 1.0;
        out.beta.at({y, x, k}) = count ? b[k] / denom : 0.0;
      }
    }
  return out;
}

struct RandomInstance {
  Layout layout;
  Tensor gamma, beta, masks;
  int h, w;
};

inline RandomInstance random_instance(PhiloxStream& rng) {
  RandomInstance r;
  r.h = 1 + static_cast<int>(rng.below(16));
  r.w = 1 + static_cast<int>(rng.below(16));
  const int m = 1 + static_cast<int>(rng.below(5));
  const int c = 1 + static_cast<int>(rng.below(6));
  const int s = 2 + static_cast<int>(rng.below(15));
  r.layout = random_layout(rng, m, 16, 4, 0.05, 0.9);
  r.gamma = random_tensor({m, c}, rng);
  r.beta = random_tensor({m, c}, rng);
  r.masks = uniform_tensor({m, s, s}, rng, 0.0, 1.0);
  return r;
}


}  // namespace lostgan::testing
