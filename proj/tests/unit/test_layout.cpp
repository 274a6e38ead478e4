#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "lostgan/error.hpp"
#include "lostgan/layout.hpp"
#include "lostgan/rng.hpp"

using namespace lostgan;

namespace {

CategorySet three_cats() { return CategorySet({"sky", "grass", "tree"}); }

Layout three_object_layout() {
  return {{64, 64}, {{0, {0.0, 0.0, 1.0, 0.4}}, {1, {0.0, 0.6, 1.0, 0.4}}, {2, {0.3, 0.2, 0.25, 0.6}}}};
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(CategorySet, IndexAndText) {
  const auto cats = three_cats();
  EXPECT_EQ(cats.size(), 3);
  EXPECT_EQ(cats.index_of("grass"), 1);
  EXPECT_FALSE(cats.index_of("road"));
  EXPECT_EQ(CategorySet::parse(cats.to_text()), cats);
  EXPECT_EQ(code_of([] { CategorySet({"a", "a"}); }), ErrorCode::kMalformedDocument);
}

TEST(ValidateLayout, EmptyLayout) {
  Layout empty{{64, 64}, {}};
  EXPECT_EQ(code_of([&] { validate_layout(empty, three_cats(), {1, 8}); }), ErrorCode::kEmptyLayout);
}

TEST(ValidateLayout, ThreeObjectsAcceptedUnderCocoLimits) {
  const auto layout = three_object_layout();
  EXPECT_EQ(validate_layout(layout, three_cats(), LayoutLimits::coco()), layout);
}

TEST(ValidateLayout, BoxPastRightEdge) {
  Layout layout{{64, 64}, {{0, {0.8, 0.1, 0.4, 0.2}}}};
  EXPECT_EQ(code_of([&] { validate_layout(layout, three_cats(), {1, 8}); }), ErrorCode::kBoxOutOfLattice);
}

TEST(ValidateLayout, OtherInvariants) {
  const auto cats = three_cats();
  Layout bad_label{{64, 64}, {{3, {0.1, 0.1, 0.2, 0.2}}}};
  EXPECT_EQ(code_of([&] { validate_layout(bad_label, cats, {1, 8}); }), ErrorCode::kUnknownLabel);
  Layout zero_width{{64, 64}, {{0, {0.1, 0.1, 0.0, 0.2}}}};
  EXPECT_EQ(code_of([&] { validate_layout(zero_width, cats, {1, 8}); }), ErrorCode::kBoxOutOfLattice);
  Layout negative{{64, 64}, {{0, {-0.1, 0.1, 0.2, 0.2}}}};
  EXPECT_EQ(code_of([&] { validate_layout(negative, cats, {1, 8}); }), ErrorCode::kBoxOutOfLattice);
  Layout not_pow2{{48, 64}, {{0, {0.1, 0.1, 0.2, 0.2}}}};
  EXPECT_EQ(code_of([&] { validate_layout(not_pow2, cats, {1, 8}); }), ErrorCode::kInvalidLattice);
  Layout many{{64, 64}, std::vector<ObjectSpec>(9, {0, {0.1, 0.1, 0.2, 0.2}})};
  EXPECT_EQ(code_of([&] { validate_layout(many, cats, {1, 8}); }), ErrorCode::kTooManyObjects);
  Layout few{{64, 64}, std::vector<ObjectSpec>(2, {0, {0.1, 0.1, 0.2, 0.2}})};
  EXPECT_EQ(code_of([&] { validate_layout(few, cats, LayoutLimits::coco()); }), ErrorCode::kTooFewObjects);
  Layout overlapping{{64, 64}, std::vector<ObjectSpec>(2, {0, {0.1, 0.1, 0.5, 0.5}})};
  EXPECT_NO_THROW(validate_layout(overlapping, cats, {1, 8}));
}

TEST(SampleStyle, ShapesAndDeterminism) {
  const auto a = sample_style(3, 128, 7);
  EXPECT_EQ(a.z_img.size(), 128u);
  ASSERT_EQ(a.z_obj.size(), 3u);
  for (const auto& row : a.z_obj) EXPECT_EQ(row.size(), 128u);
  EXPECT_EQ(a.seed, 7u);
  EXPECT_EQ(a, sample_style(3, 128, 7));
  EXPECT_NE(a, sample_style(3, 128, 8));
  EXPECT_EQ(a.z_img, normal_vector(7, 0, 128));
  EXPECT_EQ(a.z_obj[2], normal_vector(7, 3, 128));
}

TEST(SampleStyle, PooledMoments) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto s = sample_style(7, 128, seed);
    auto add = [&](const std::vector<double>& v) {
      for (double x : v) {
        sum += x;
        sum_sq += x * x;
        ++n;
      }
    };
    add(s.z_img);
    for (const auto& row : s.z_obj) add(row);
  }
  ASSERT_GE(n, 1000000u);
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(sum_sq / n - mean * mean, 1.0, 0.02);
}

TEST(ValidateStyle, Mismatches) {
  auto s = sample_style(2, 4, 1);
  EXPECT_NO_THROW(validate_style(s, 2, 4));
  EXPECT_EQ(code_of([&] { validate_style(s, 3, 4); }), ErrorCode::kStyleMismatch);
  EXPECT_EQ(code_of([&] { validate_style(s, 2, 5); }), ErrorCode::kStyleMismatch);
  s.z_obj[1][0] = std::nan("");
  EXPECT_EQ(code_of([&] { validate_style(s, 2, 4); }), ErrorCode::kStyleMismatch);
}

TEST(LayoutDocument, RoundTripIsExact) {
  const auto cats = three_cats();
  PhiloxStream rng(5, 0);
  for (int trial = 0; trial < 200; ++trial) {
    Layout layout{{32, 64}, {}};
    const int m = 1 + static_cast<int>(rng.below(8));
    for (int i = 0; i < m; ++i) {
      const double w = rng.uniform(0.01, 0.9), h = rng.uniform(0.01, 0.9);
      layout.objects.push_back({static_cast<int>(rng.below(3)), {rng.uniform() * (1 - w), rng.uniform() * (1 - h), w, h}});
    }
    const auto parsed = parse_layout(serialize_layout(layout, cats), cats);
    EXPECT_EQ(parsed.layout, layout);
    EXPECT_FALSE(parsed.style);
  }
}

TEST(LayoutDocument, StyleRoundTripIsBitEqual) {
  const auto cats = three_cats();
  const auto layout = three_object_layout();
  const auto style = sample_style(3, 16, 99);
  const auto parsed = parse_layout(serialize_layout(layout, cats, style), cats);
  ASSERT_TRUE(parsed.style);
  EXPECT_EQ(*parsed.style, style);
}

TEST(LayoutDocument, Errors) {
  const auto cats = three_cats();
  EXPECT_EQ(code_of([&] { parse_layout(R"({"version": 1, "lattice": {"h": 64, "w": 64}})", cats); }),
            ErrorCode::kMalformedDocument);
  EXPECT_EQ(code_of([&] { parse_layout(R"({"version": 2, "lattice": {"h": 64, "w": 64}, "objects": []})", cats); }),
            ErrorCode::kSchemaVersionMismatch);
  EXPECT_EQ(code_of([&] { parse_layout("{not json", cats); }), ErrorCode::kMalformedDocument);
  EXPECT_EQ(code_of([&] {
              parse_layout(R"({"version": 1, "lattice": {"h": 64, "w": 64},
                              "objects": [{"label_name": "road", "bbox": [0, 0, 0.5, 0.5]}]})",
                           cats);
            }),
            ErrorCode::kUnknownLabel);
}
