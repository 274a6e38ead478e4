#include <gtest/gtest.h>

#include <cmath>

#include "lostgan/error.hpp"
#include "lostgan/ops.hpp"
#include "lostgan/roi_align.hpp"
#include "test_support.hpp"

using namespace lostgan;
using lostgan::testing::grad_check;
using lostgan::testing::random_tensor;

namespace {

double sample_map(const Tensor& f, std::int64_t n, double y, double x, std::int64_t c) {
  const auto h = f.dim(1), w = f.dim(2);
  if (y < -1.0 || y > h || x < -1.0 || x > w) return 0.0;
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::int64_t>(std::floor(y)), x0 = static_cast<std::int64_t>(std::floor(x));
  const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double ty = y - y0, tx = x - x0;
  return (1 - ty) * (1 - tx) * f.at({n, y0, x0, c}) + (1 - ty) * tx * f.at({n, y0, x1, c}) +
         ty * (1 - tx) * f.at({n, y1, x0, c}) + ty * tx * f.at({n, y1, x1, c});
}

Tensor oracle(const Tensor& f, const std::vector<isla::ObjectPlacement>& rois, int k, int ratio) {
  const auto h = f.dim(1), w = f.dim(2), c = f.dim(3);
  Tensor out({static_cast<std::int64_t>(rois.size()), k, k, c});
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto& b = rois[r].bbox;
    for (int py = 0; py < k; ++py)
      for (int px = 0; px < k; ++px)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int iy = 0; iy < ratio; ++iy)
            for (int ix = 0; ix < ratio; ++ix) {
              const double y = (b.y + b.h * (py + (iy + 0.5) / ratio) / k) * h - 0.5;
              const double x = (b.x + b.w * (px + (ix + 0.5) / ratio) / k) * w - 0.5;
              acc += sample_map(f, rois[r].sample, y, x, ch);
            }
          out.at({static_cast<std::int64_t>(r), py, px, ch}) = acc / (ratio * ratio);
        }
  }
  return out;
}

}  // namespace

TEST(RoiAlign, MatchesSamplingOracle) {
  PhiloxStream rng(8, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 2 + static_cast<int>(rng.below(15)), w = 2 + static_cast<int>(rng.below(15));
    const Tensor f = random_tensor({3, h, w, 2}, rng);
    std::vector<isla::ObjectPlacement> rois;
    for (int r = 0; r < 4; ++r) {
      const double bw = rng.uniform(0.05, 1.0), bh = rng.uniform(0.05, 1.0);
      rois.push_back({static_cast<std::int64_t>(rng.below(3)), {rng.uniform() * (1 - bw), rng.uniform() * (1 - bh), bw, bh}});
    }
    const int k = 1 + static_cast<int>(rng.below(8)), ratio = 1 + static_cast<int>(rng.below(3));
    const Tensor got = roi_align(ag::Var(f), rois, k, ratio).value();
    ASSERT_EQ(got.shape(), (Shape{4, k, k, 2}));
    ASSERT_LT(max_abs_diff(got, oracle(f, rois, k, ratio)), 1e-12) << "trial " << trial;
  }
}

TEST(RoiAlign, LinearRampGivesBinCentres) {
  Tensor f({1, 16, 16, 1});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) f.at({0, y, x, 0}) = 2.0 * y - 3.0 * x;
  const BBox box{0.25, 0.125, 0.5, 0.625};
  const Tensor got = roi_align(ag::Var(f), {{0, box}}, 4, 2).value();
  for (int py = 0; py < 4; ++py)
    for (int px = 0; px < 4; ++px) {
      const double cy = (box.y + box.h * (py + 0.5) / 4) * 16 - 0.5;
      const double cx = (box.x + box.w * (px + 0.5) / 4) * 16 - 0.5;
      EXPECT_NEAR(got.at({0, py, px, 0}), 2.0 * cy - 3.0 * cx, 1e-12);
    }
}

TEST(RoiAlign, RejectsBadInput) {
  const ag::Var f(Tensor({1, 4, 4, 1}));
  EXPECT_THROW(roi_align(f, {{0, {0.1, 0.1, 0.0, 0.5}}}, 2, 2), Error);
  EXPECT_THROW(roi_align(f, {{1, {0.1, 0.1, 0.5, 0.5}}}, 2, 2), Error);
}

TEST(GradCheck, RoiAlign) {
  PhiloxStream rng(9, 0);
  ag::Var f(random_tensor({2, 6, 7, 3}, rng), true);
  const std::vector<isla::ObjectPlacement> rois = {
      {0, {0.1, 0.2, 0.5, 0.6}}, {1, {0.0, 0.0, 1.0, 1.0}}, {1, {0.33, 0.41, 0.27, 0.3}}};
  const Tensor weights = random_tensor({3, 4, 4, 3}, rng);
  const auto r = grad_check([&] { return ag::sum(ag::mul(roi_align(f, rois, 4, 2), ag::Var(weights))); }, {f}, 84);
  EXPECT_TRUE(r.ok()) << r.first_failure;
}
