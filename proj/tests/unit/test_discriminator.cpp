#include <gtest/gtest.h>

#include <cmath>

#include "lostgan/discriminator.hpp"
#include "lostgan/error.hpp"
#include "lostgan/ops.hpp"
#include "lostgan/roi_align.hpp"
#include "test_support.hpp"

using namespace lostgan;
using lostgan::testing::random_layout;
using lostgan::testing::uniform_tensor;

namespace {

DiscriminatorConfig small_config(int lattice, int blocks) {
  DiscriminatorConfig c;
  c.ch = 4;
  c.lattice = lattice;
  c.n_backbone_blocks = blocks;
  c.num_classes = 6;
  return c;
}

}  // namespace

TEST(Discriminator, FiniteScoresPerSample) {
  for (int lattice : {32, 64}) {
    Discriminator d(small_config(lattice, lattice == 64 ? 4 : 3));
    PhiloxStream rng(lattice, 0);
    const std::vector<Layout> layouts = {random_layout(rng, 3, lattice, 6), random_layout(rng, 1, lattice, 6),
                                         random_layout(rng, 8, lattice, 6)};
    const auto s = d.score(ag::Var(uniform_tensor({3, lattice, lattice, 3}, rng, -1, 1)), layouts, true);
    ASSERT_EQ(s.s_img.shape(), (Shape{3}));
    ASSERT_EQ(s.s_obj.shape(), (Shape{3}));
    ASSERT_EQ(s.s_obj_each.shape(), (Shape{12}));
    EXPECT_TRUE(all_finite(s.s_img.value()));
    EXPECT_TRUE(all_finite(s.s_obj.value()));
  }
}

TEST(Discriminator, ObjectScoresAreProjectionOfPooledRoiFeatures) {
  Discriminator d(small_config(32, 3));
  PhiloxStream rng(3, 0);
  const std::vector<Layout> layouts = {random_layout(rng, 2, 32, 6), random_layout(rng, 3, 32, 6)};
  const ag::Var image(uniform_tensor({2, 32, 32, 3}, rng, -1, 1));
  const auto s = d.score(image, layouts, false);

  const Tensor stage = d.backbone(image, false).roi_stage.value();
  EXPECT_EQ(stage.dim(1), 8);
  const Tensor crops = roi_align(ag::Var(stage), isla::placements_for(layouts), d.config().roi_size,
                                 d.config().sampling_ratio)
                           .value();
  const Tensor w = d.object_fc().effective_weight(false).value();
  const Tensor table = d.label_embedding().effective_table(false).value();
  const auto c = crops.dim(3), k = crops.dim(1);
  ASSERT_EQ(table.dim(1), c);
  std::vector<double> per_sample(2, 0.0);
  std::int64_t r = 0;
  for (std::size_t n = 0; n < layouts.size(); ++n) {
    for (const auto& obj : layouts[n].objects) {
      double score = d.object_fc().bias.defined() ? d.object_fc().bias.value()[0] : 0.0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double f = 0.0;
        for (std::int64_t i = 0; i < k * k; ++i) f += crops[(r * k * k + i) * c + ch];
        f /= static_cast<double>(k * k);
        score += f * (w[ch] + table.at({obj.label, ch}));
      }
      EXPECT_NEAR(s.s_obj_each.value()[r], score, 1e-10);
      per_sample[n] += score / layouts[n].size();
      ++r;
    }
    EXPECT_NEAR(s.s_obj.value()[static_cast<std::int64_t>(n)], per_sample[n], 1e-10);
  }
}

TEST(Discriminator, EvaluationLeavesPowerIterationState) {
  Discriminator d(small_config(32, 3));
  PhiloxStream rng(4, 0);
  const std::vector<Layout> layouts = {random_layout(rng, 2, 32, 6)};
  const ag::Var image(uniform_tensor({1, 32, 32, 3}, rng, -1, 1));
  const Tensor u = d.blocks()[0].conv1.u;
  d.score(image, layouts, false);
  EXPECT_EQ(d.blocks()[0].conv1.u, u);
  d.score(image, layouts, true);
  EXPECT_NE(d.blocks()[0].conv1.u, u);
}

TEST(Discriminator, RejectsMismatchedInput) {
  Discriminator d(small_config(32, 3));
  PhiloxStream rng(5, 0);
  const ag::Var image(uniform_tensor({2, 32, 32, 3}, rng, -1, 1));
  EXPECT_THROW(d.score(image, {random_layout(rng, 2, 32, 6)}, false), Error);
  try {
    d.score(image, {random_layout(rng, 2, 32, 6), Layout{{32, 32}, {}}}, false);
    FAIL() << "expected EmptyObjectSet";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyObjectSet);
  }
}
