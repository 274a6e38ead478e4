#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "lostgan/error.hpp"
#include "lostgan/isla_norm.hpp"
#include "lostgan/ops.hpp"
#include "isla_oracle.hpp"
#include "test_support.hpp"

using namespace lostgan;
using namespace lostgan::isla;
using namespace lostgan::testing;

TEST(ComposeAffineMaps, MatchesCellOracleOnRandomInstances) {
  PhiloxStream rng(2024, 0);
  const auto start = std::chrono::steady_clock::now();
  int overlapping = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = random_instance(rng);
    const auto got = compose_affine_maps(inst.gamma, inst.beta, inst.masks, inst.layout, inst.h, inst.w);
    const auto want =
        oracle_compose(inst.gamma, inst.beta, inst.masks, inst.layout, inst.h, inst.w, OverlapRule::kCoverageCount);
    ASSERT_LE(max_abs_diff(got.gamma, want.gamma), 1e-10) << "trial " << trial;
    ASSERT_LE(max_abs_diff(got.beta, want.beta), 1e-10) << "trial " << trial;
    ASSERT_EQ(got.coverage, want.coverage) << "trial " << trial;
    for (int c : want.coverage) overlapping += c > 1;
  }
  EXPECT_GT(overlapping, 0);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 60.0);
}

TEST(ComposeAffineMaps, MaskWeightSumRuleMatchesOracle) {
  PhiloxStream rng(7, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto inst = random_instance(rng);
    const auto got = compose_affine_maps(inst.gamma, inst.beta, inst.masks, inst.layout, inst.h, inst.w,
                                         OverlapRule::kMaskWeightSum);
    const auto want =
        oracle_compose(inst.gamma, inst.beta, inst.masks, inst.layout, inst.h, inst.w, OverlapRule::kMaskWeightSum);
    ASSERT_LE(max_abs_diff(got.gamma, want.gamma), 1e-9) << "trial " << trial;
    ASSERT_LE(max_abs_diff(got.beta, want.beta), 1e-9) << "trial " << trial;
  }
}

TEST(ComposeAffineMaps, UncoveredCellsAreIdentity) {
  // Box too thin to cover any cell centre at 4x4.
  Layout layout{{16, 16}, {{0, {0.3, 0.3, 0.05, 0.05}}}};
  const auto maps = compose_affine_maps(Tensor({1, 2}, 3.0), Tensor({1, 2}, 4.0), Tensor({1, 4, 4}, 0.5), layout, 4, 4);
  for (double v : maps.gamma.values()) EXPECT_EQ(v, 1.0);
  for (double v : maps.beta.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(maps.degenerate, (std::vector<std::int64_t>{0}));
}

TEST(ComposeAffineMaps, FullBoxUnitMask) {
  Layout layout{{8, 8}, {{0, {0.0, 0.0, 1.0, 1.0}}}};
  const Tensor gamma({1, 3}, std::vector<double>{0.5, 1.5, -2.0}), beta({1, 3}, std::vector<double>{0.1, 0.2, 0.3});
  const auto maps = compose_affine_maps(gamma, beta, Tensor({1, 16, 16}, 1.0), layout, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(maps.gamma.at({y, x, c}), gamma.at({0, c}));
        EXPECT_EQ(maps.beta.at({y, x, c}), beta.at({0, c}));
      }
}

TEST(ComposeAffineMaps, OverlapAveragesConstantMasks) {
  Layout layout{{8, 8}, {{0, {0.0, 0.0, 0.75, 0.75}}, {1, {0.25, 0.25, 0.75, 0.75}}}};
  const double a = 0.8, b = 0.3;
  Tensor masks({2, 4, 4});
  for (int k = 0; k < 16; ++k) {
    masks[k] = a;
    masks[16 + k] = b;
  }
  const Tensor gamma({2, 1}, std::vector<double>{2.0, 5.0}), beta({2, 1}, std::vector<double>{1.0, -1.0});
  const auto maps = compose_affine_maps(gamma, beta, masks, layout, 8, 8);
  EXPECT_NEAR(maps.gamma.at({4, 4, 0}), (a * 2.0 + b * 5.0) / 2, 1e-15);
  EXPECT_NEAR(maps.beta.at({4, 4, 0}), (a * 1.0 - b * 1.0) / 2, 1e-15);
  EXPECT_NEAR(maps.gamma.at({0, 0, 0}), a * 2.0, 1e-15);
  EXPECT_NEAR(maps.gamma.at({7, 7, 0}), b * 5.0, 1e-15);
  EXPECT_EQ(maps.coverage[4 * 8 + 4], 2);
}

TEST(EmbedInstances, ShapesAndRows) {
  PhiloxStream rng(1, 0);
  const ag::Var table(random_tensor({171, 128}, rng));
  Tensor z = random_tensor({4, 128}, rng);
  for (int k = 0; k < 128; ++k) z.at({1, k}) = z.at({0, k});
  for (int k = 0; k < 128; ++k) z.at({3, k}) = 0.0;
  const auto e = embed_instances(table, {5, 5, 9, 2}, ag::Var(z)).value();
  ASSERT_EQ(e.shape(), (Shape{4, 256}));
  for (int k = 0; k < 256; ++k) EXPECT_EQ(e.at({0, k}), e.at({1, k}));
  for (int k = 0; k < 128; ++k) {
    EXPECT_EQ(e.at({3, k}), table.value().at({2, k}));
    EXPECT_EQ(e.at({3, 128 + k}), 0.0);
  }
  EXPECT_THROW(embed_instances(table, {171}, ag::Var(Tensor({1, 128}))), Error);
}

TEST(ProjectAffine, IdentityInitialisationAndOracle) {
  const ag::Var emb(Tensor({2, 4}, 0.7));
  Tensor bias({6}, 0.0);
  for (int k = 0; k < 3; ++k) bias[k] = 1.0;
  const auto id = project_affine(emb, ag::Var(Tensor({4, 6}, 0.0)), ag::Var(bias));
  ASSERT_EQ(id.gamma.shape(), (Shape{2, 3}));
  ASSERT_EQ(id.beta.shape(), (Shape{2, 3}));
  for (double v : id.gamma.value().values()) EXPECT_EQ(v, 1.0);
  for (double v : id.beta.value().values()) EXPECT_EQ(v, 0.0);

  const double e[2] = {0.5, -1.0};
  const double w[2][4] = {{1.0, 2.0, -3.0, 0.25}, {0.5, -1.5, 4.0, 2.0}};
  const double bb[4] = {0.1, 0.2, 0.3, 0.4};
  const auto r = project_affine(ag::Var(Tensor({1, 2}, std::vector<double>(e, e + 2))),
                                ag::Var(Tensor({2, 4}, std::vector<double>(&w[0][0], &w[0][0] + 8))),
                                ag::Var(Tensor({4}, std::vector<double>(bb, bb + 4))));
  for (int j = 0; j < 4; ++j) {
    const double expected = e[0] * w[0][j] + e[1] * w[1][j] + bb[j];
    const double got = j < 2 ? r.gamma.value()[j] : r.beta.value()[j - 2];
    EXPECT_NEAR(got, expected, 1e-12);
  }
  EXPECT_THROW(project_affine(ag::Var(Tensor({1, 3})), ag::Var(Tensor({2, 4})), ag::Var()), Error);
}

TEST(MaskNet, ShapeRangeDeterminism) {
  PhiloxStream rng(3, 0);
  MaskNet net(24, 8, 16, rng);
  PhiloxStream in(4, 0);
  const ag::Var emb(random_tensor({5, 24}, in, 3.0));
  const Tensor a = net.forward(emb).value();
  ASSERT_EQ(a.shape(), (Shape{5, 16, 16}));
  for (double v : a.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(a, net.forward(emb).value());
}

TEST(IslaNormalize, WorkedExample) {
  const Tensor x({1, 2, 2, 1}, std::vector<double>{1, 2, 3, 5});
  RunningStats stats(1);
  const auto y = isla_normalize(ag::Var(x), ag::Var(Tensor({1, 2, 2, 1}, 2.0)), ag::Var(Tensor({1, 2, 2, 1}, 0.5)),
                                stats, true, 1e-5)
                     .value();
  const double mean = (1 + 2 + 3 + 5) / 4.0;
  double var = 0;
  for (double v : {1.0, 2.0, 3.0, 5.0}) var += (v - mean) * (v - mean) / 4.0;
  const double values[] = {1, 2, 3, 5};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(y[i], 2.0 * (values[i] - mean) / std::sqrt(var + 1e-5) + 0.5, 1e-6);
  EXPECT_NEAR(y[0], 2.0 * (1 - 2.75) / std::sqrt(2.1875 + 1e-5) + 0.5, 1e-6);
}

TEST(IslaNormalize, BatchStatistics) {
  PhiloxStream rng(11, 0);
  Tensor x = random_tensor({8, 16, 16, 32}, rng, 2.5);
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] += static_cast<double>(i % 32) - 10.0;
  RunningStats stats(32);
  const auto y = isla_normalize(ag::Var(x), ag::Var(Tensor({8, 16, 16, 32}, 1.0)),
                                ag::Var(Tensor({8, 16, 16, 32}, 0.0)), stats, true)
                     .value();
  const double n = 8 * 16 * 16;
  for (int c = 0; c < 32; ++c) {
    double s = 0, s2 = 0;
    for (std::int64_t i = c; i < y.numel(); i += 32) s += y[i];
    const double mean = s / n;
    for (std::int64_t i = c; i < y.numel(); i += 32) s2 += (y[i] - mean) * (y[i] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-4) << "channel " << c;
    EXPECT_NEAR(std::sqrt(s2 / n), 1.0, 1e-3) << "channel " << c;
  }
}

TEST(IslaNormalize, ConstantInputGivesBeta) {
  const Tensor x({2, 2, 2, 1}, 3.0);
  RunningStats stats(1);
  const Tensor beta({2, 2, 2, 1}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  const auto y = isla_normalize(ag::Var(x), ag::Var(Tensor({2, 2, 2, 1}, 1.7)), ag::Var(beta), stats, true).value();
  EXPECT_LT(max_abs_diff(y, beta), 1e-12);
}

TEST(IslaNormalize, EvaluationUsesTrackedStatistics) {
  RunningStats stats(1);
  stats.mean[0] = 2.0;
  stats.var[0] = 4.0;
  const auto y = isla_normalize(ag::Var(Tensor({1, 1, 1, 1}, 6.0)), ag::Var(Tensor({1, 1, 1, 1}, 1.0)),
                                ag::Var(Tensor({1, 1, 1, 1}, 0.0)), stats, false, 0.0)
                     .value();
  EXPECT_DOUBLE_EQ(y[0], 2.0);
}

TEST(IslaNorm, BackgroundCellsEqualNormalizedInput) {
  PhiloxStream rng(5, 0);
  IslaNorm norm(10, 4, rng);
  const Layout layout{{8, 8}, {{0, {0.0, 0.0, 0.5, 0.5}}}};
  const auto objects = placements_for({layout});
  const ag::Var x(random_tensor({1, 8, 8, 4}, rng));
  const ag::Var emb(random_tensor({1, 10}, rng));
  const ag::Var masks(uniform_tensor({1, 4, 4}, rng, 0.1, 0.9));
  const auto out = norm.forward(x, emb, masks, objects, true);
  const Tensor xhat = ag::batch_normalize(x, kNormEpsilon).value();
  for (int y = 4; y < 8; ++y)
    for (int xx = 0; xx < 8; ++xx)
      for (int c = 0; c < 4; ++c) EXPECT_EQ(out.y.value().at({0, y, xx, c}), xhat.at({0, y, xx, c}));
}

namespace {

// Affine maps of a small ISLA site driven by a label table, z_obj and a mask net.
struct SiteFixture {
  PhiloxStream rng{31, 0};
  ag::Var table;
  MaskNet masks;
  IslaNorm norm;
  int d_e = 6, d_noise = 5, channels = 3;

  SiteFixture() {
    table = ag::Var(random_tensor({4, d_e}, rng), true);
    masks = MaskNet(d_e + d_noise, 4, 8, rng);
    norm = IslaNorm(d_e + d_noise, channels, rng, 1.0);
  }

  AffineMapVars maps(const Layout& layout, const Tensor& z_obj, int h, int w) {
    std::vector<std::int64_t> labels;
    for (const auto& o : layout.objects) labels.push_back(o.label);
    const auto emb = embed_instances(table, labels, ag::Var(z_obj));
    const auto aff = project_affine(emb, norm.weight, norm.bias);
    return compose_affine_maps(aff.gamma, aff.beta, masks.forward(emb), placements_for({layout}), 1, h, w);
  }
};

void expect_equal_outside(const AffineMapVars& a, const AffineMapVars& b, const std::vector<Footprint>& allowed, int h,
                          int w, int c, int& changed_inside) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool inside = false;
      for (const auto& f : allowed) inside = inside || f.has(y, x);
      for (int k = 0; k < c; ++k) {
        const double ga = a.gamma.value().at({0, y, x, k}), gb = b.gamma.value().at({0, y, x, k});
        const double ba = a.beta.value().at({0, y, x, k}), bb = b.beta.value().at({0, y, x, k});
        if (inside) {
          changed_inside += ga != gb || ba != bb;
        } else {
          ASSERT_EQ(ga, gb) << "cell " << y << "," << x;
          ASSERT_EQ(ba, bb) << "cell " << y << "," << x;
        }
      }
    }
}

}  // namespace

TEST(Locality, ResamplingOneStyleStaysInsideItsBox) {
  SiteFixture site;
  PhiloxStream rng(77, 0);
  int changed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(5));
    const int side = 4 << rng.below(3);
    const auto layout = random_layout(rng, m, 16, 4, 0.1, 0.6);
    Tensor z = random_tensor({m, site.d_noise}, rng);
    const auto before = site.maps(layout, z, side, side);
    const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
    for (int k = 0; k < site.d_noise; ++k) z.at({i, k}) = rng.normal();
    const auto after = site.maps(layout, z, side, side);
    expect_equal_outside(before, after, {footprint(layout.objects[i].bbox, side, side)}, side, side, site.channels,
                         changed);
  }
  EXPECT_GT(changed, 0);
}

TEST(Locality, MovingOneBoxStaysInsideOldAndNewBoxes) {
  SiteFixture site;
  PhiloxStream rng(78, 0);
  int changed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(5));
    const int side = 4 << rng.below(3);
    auto layout = random_layout(rng, m, 16, 4, 0.1, 0.6);
    const Tensor z = random_tensor({m, site.d_noise}, rng);
    const auto before = site.maps(layout, z, side, side);
    const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
    const BBox old_box = layout.objects[i].bbox;
    const double w = rng.uniform(0.1, 0.6), h = rng.uniform(0.1, 0.6);
    layout.objects[i].bbox = {rng.uniform() * (1 - w), rng.uniform() * (1 - h), w, h};
    const auto after = site.maps(layout, z, side, side);
    expect_equal_outside(before, after,
                         {footprint(old_box, side, side), footprint(layout.objects[i].bbox, side, side)}, side, side,
                         site.channels, changed);
  }
  EXPECT_GT(changed, 0);
}

TEST(SemanticMap, MatchesArgmaxOracle) {
  PhiloxStream rng(12, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(5));
    const int h = 4 + static_cast<int>(rng.below(13)), w = 4 + static_cast<int>(rng.below(13));
    const auto layout = random_layout(rng, m, 16, 6, 0.1, 0.8);
    const Tensor masks = uniform_tensor({m, 8, 8}, rng, 0.0, 1.0);
    const auto got = semantic_map(masks, layout, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int best = -1;
        double best_w = -1.0;
        for (int i = 0; i < m; ++i) {
          const auto f = footprint(layout.objects[i].bbox, h, w);
          if (!f.has(y, x)) continue;
          const double wi = stretched_mask(masks, i, 8, f, y, x);
          if (wi > best_w) {
            best_w = wi;
            best = i;
          }
        }
        const int expected = best < 0 ? kBackgroundLabel : layout.objects[best].label;
        ASSERT_EQ(got[static_cast<std::size_t>(y * w + x)], expected);
      }
  }
}

TEST(SemanticMap, HigherWeightWinsAndTiesGoLow) {
  Layout layout{{8, 8}, {{2, {0.0, 0.0, 1.0, 1.0}}, {5, {0.0, 0.0, 0.5, 0.5}}}};
  Tensor masks({2, 2, 2});
  for (int k = 0; k < 4; ++k) {
    masks[k] = 0.2;
    masks[4 + k] = 0.9;
  }
  auto map = semantic_map(masks, layout, 8, 8);
  EXPECT_EQ(map[0], 5);
  EXPECT_EQ(map[63], 2);
  for (int k = 0; k < 4; ++k) masks[4 + k] = 0.2;
  map = semantic_map(masks, layout, 8, 8);
  EXPECT_EQ(map[0], 2);
}

TEST(GradCheck, NormalizeComposeProjectEmbed) {
  SiteFixture site;
  PhiloxStream rng(90, 0);
  const Layout layout{{8, 8}, {{1, {0.0, 0.1, 0.6, 0.5}}, {3, {0.3, 0.25, 0.7, 0.75}}, {1, {0.5, 0.0, 0.5, 0.4}}}};
  const auto objects = placements_for({layout, layout});
  const Tensor z = random_tensor({6, site.d_noise}, rng);
  const ag::Var x(random_tensor({2, 8, 8, site.channels}, rng), true);
  const Tensor weights = random_tensor({2, 8, 8, site.channels}, rng);
  const std::vector<std::int64_t> labels = {1, 3, 1, 1, 3, 1};
  auto loss = [&] {
    const auto emb = embed_instances(site.table, labels, ag::Var(z));
    const auto out = site.norm.forward(x, emb, site.masks.forward(emb), objects, true);
    return ag::sum(ag::mul(out.y, ag::Var(weights)));
  };
  std::vector<ag::Var> leaves = {site.table, site.norm.weight, site.norm.bias, x};
  ParameterSet mask_params;
  site.masks.collect(mask_params, "mask");
  for (const auto& p : mask_params.parameters) leaves.push_back(p.var);
  for (auto& leaf : leaves) leaf.set_requires_grad(true);
  const auto r = grad_check(loss, leaves, 16);
  EXPECT_TRUE(r.ok()) << r.first_failure << " (" << r.failed << " of " << r.checked << ")";
}

TEST(GradCheck, MaskWeightSumRule) {
  PhiloxStream rng(91, 0);
  const Layout layout{{8, 8}, {{0, {0.0, 0.0, 0.75, 0.75}}, {0, {0.25, 0.25, 0.75, 0.75}}}};
  ag::Var gamma(random_tensor({2, 2}, rng), true), beta(random_tensor({2, 2}, rng), true);
  ag::Var masks(uniform_tensor({2, 4, 4}, rng, 0.2, 0.9), true);
  const Tensor weights = random_tensor({1, 8, 8, 2}, rng);
  const auto objects = placements_for({layout});
  const auto r = grad_check(
      [&] {
        const auto maps = compose_affine_maps(gamma, beta, masks, objects, 1, 8, 8, OverlapRule::kMaskWeightSum);
        return ag::add(ag::sum(ag::mul(maps.gamma, ag::Var(weights))), ag::sum(ag::mul(maps.beta, maps.beta)));
      },
      {gamma, beta, masks});
  EXPECT_TRUE(r.ok()) << r.first_failure;
}
