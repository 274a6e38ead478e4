#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "lostgan/dataset.hpp"
#include "lostgan/error.hpp"

using namespace lostgan;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lostgan_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json annotation(std::int64_t id, std::int64_t image, std::int64_t category, double x, double y, double w, double h) {
  return {{"id", id}, {"image_id", image}, {"category_id", category}, {"bbox", {x, y, w, h}}};
}

// Image 1: four objects, one of them covering 1% of the image.
// Image 2: three objects, two of them too small.
// Image 3: three large objects, no file on disk.
json sample_document() {
  json doc;
  doc["categories"] = {{{"id", 1}, {"name", "person"}}, {{"id", 3}, {"name", "sky"}}, {{"id", 7}, {"name", "grass"}}};
  doc["images"] = {{{"id", 1}, {"file_name", "a.png"}, {"width", 100}, {"height", 100}},
                   {{"id", 2}, {"file_name", "b.png"}, {"width", 200}, {"height", 100}},
                   {{"id", 3}, {"file_name", "missing.png"}, {"width", 100}, {"height", 100}}};
  doc["annotations"] = {annotation(10, 1, 3, 0, 0, 100, 40),   annotation(11, 1, 7, 0, 60, 100, 40),
                        annotation(12, 1, 1, 10, 10, 10, 10),  annotation(13, 1, 1, 50, 50, 20, 20),
                        annotation(20, 2, 3, 0, 0, 200, 50),   annotation(21, 2, 1, 0, 0, 10, 10),
                        annotation(22, 2, 1, 20, 20, 10, 10),  annotation(30, 3, 3, 0, 0, 100, 50),
                        annotation(31, 3, 7, 0, 50, 100, 50),  annotation(32, 3, 1, 20, 20, 30, 30)};
  return doc;
}

fs::path sample_images() {
  const auto dir = temp_dir("ingest_images");
  write_png(Image(100, 100, {10, 20, 30}), dir / "a.png");
  write_png(Image(100, 200, {10, 20, 30}), dir / "b.png");
  return dir;
}

}  // namespace

TEST(Ingest, FiltersSmallObjectsAndObjectCounts) {
  const auto images = sample_images();
  const auto result = ingest_coco_stuff_json(sample_document().dump(), images, {});
  ASSERT_EQ(result.dataset.size(), 1u);
  const auto& layout = result.dataset.items[0].layout;
  EXPECT_EQ(result.dataset.items[0].image, "a.png");
  ASSERT_EQ(layout.size(), 3);
  EXPECT_EQ(result.dataset.cats.names(), (std::vector<std::string>{"person", "sky", "grass"}));
  EXPECT_EQ(layout.objects[0].label, 1);
  EXPECT_EQ(layout.objects[0].bbox, (BBox{0.0, 0.0, 1.0, 0.4}));
  EXPECT_EQ(layout.objects[2].bbox, (BBox{0.5, 0.5, 0.2, 0.2}));
  ASSERT_EQ(result.manifest.size(), 3u);
  EXPECT_EQ(result.manifest[1].reason, "object_count=1");
  EXPECT_EQ(result.manifest[2].reason, "missing_image");
  EXPECT_EQ(result.missing_images, 1);
}

TEST(Ingest, AllowMissingKeepsLayouts) {
  IngestOptions opts;
  opts.require_images = false;
  const auto result = ingest_coco_stuff_json(sample_document().dump(), "/nonexistent", opts);
  EXPECT_EQ(result.dataset.size(), 2u);
  EXPECT_EQ(result.missing_images, 0);
}

TEST(Ingest, AnnotationOrderDoesNotMatter) {
  const auto images = sample_images();
  auto doc = sample_document();
  auto reversed = doc;
  std::reverse(reversed["annotations"].begin(), reversed["annotations"].end());
  std::reverse(reversed["images"].begin(), reversed["images"].end());
  const auto a = ingest_coco_stuff_json(doc.dump(), images, {});
  const auto b = ingest_coco_stuff_json(reversed.dump(), images, {});
  ASSERT_EQ(a.dataset.size(), b.dataset.size());
  for (std::size_t i = 0; i < a.dataset.size(); ++i) EXPECT_EQ(a.dataset.items[i].layout, b.dataset.items[i].layout);
}

TEST(Ingest, EmptyAnnotationListGivesEmptyDataset) {
  json doc = {{"images", json::array()}, {"annotations", json::array()}, {"categories", json::array()}};
  const auto result = ingest_coco_stuff_json(doc.dump(), "/nonexistent", {});
  EXPECT_EQ(result.dataset.size(), 0u);
  EXPECT_TRUE(result.manifest.empty());
}

TEST(Ingest, RemapAndErrors) {
  IngestOptions opts;
  opts.require_images = false;
  opts.category_remap = {{1, -1}};
  const auto result = ingest_coco_stuff_json(sample_document().dump(), "/nonexistent", opts);
  EXPECT_EQ(result.dataset.size(), 0u);
  try {
    ingest_coco_stuff_json(R"({"images": []})", "/nonexistent", {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMalformedAnnotation);
  }
  EXPECT_THROW(ingest_coco_stuff_json("{", "/nonexistent", {}), Error);
}

TEST(Synthetic, SingleFullLatticeObjectIsUniform) {
  auto spec = SyntheticSceneSpec::standard(1, 16);
  spec.cats = CategorySet({"sky"});
  spec.min_objects = spec.max_objects = 1;
  spec.min_side = spec.max_side = 1.0;
  spec.texture_amplitude = 0;
  const auto ds = make_synthetic_corpus(spec, 1, 3);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.items[0].layout.objects[0].bbox, (BBox{0, 0, 1, 1}));
  EXPECT_EQ(ds.images[0], Image(16, 16, spec.palette[0]));
}

TEST(Synthetic, DeterministicAndSeedSensitive) {
  const auto spec = SyntheticSceneSpec::standard(8, 32);
  const auto a = make_synthetic_corpus(spec, 20, 7), b = make_synthetic_corpus(spec, 20, 7);
  const auto c = make_synthetic_corpus(spec, 20, 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.items[i].layout, b.items[i].layout);
    EXPECT_EQ(a.images[i], b.images[i]);
  }
  EXPECT_NE(a.images[0], c.images[0]);
}

TEST(Synthetic, RenderingMatchesLayoutAndPalette) {
  const auto spec = SyntheticSceneSpec::standard(8, 32);
  const auto ds = make_synthetic_corpus(spec, 500, 7);
  ASSERT_EQ(ds.palette, spec.palette);
  std::vector<std::array<double, 3>> sum(8, {0, 0, 0});
  std::vector<double> count(8, 0.0);
  int overlaps = 0;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const auto& layout = ds.items[n].layout;
    EXPECT_NO_THROW(validate_layout(layout, ds.cats, {spec.min_objects, spec.max_objects}));
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        int owner = -1, covering = 0;
        for (int k = 0; k < layout.size(); ++k) {
          const auto& b = layout.objects[k].bbox;
          const double cy = (y + 0.5) / 32, cx = (x + 0.5) / 32;
          if (cy > b.y && cy < b.y + b.h && cx > b.x && cx < b.x + b.w) {
            owner = k;
            ++covering;
          }
        }
        overlaps += covering > 1;
        const Rgb base = owner < 0 ? spec.background : spec.palette[layout.objects[owner].label];
        const Rgb px = ds.images[n].at(y, x);
        for (int c = 0; c < 3; ++c) ASSERT_LE(std::abs(px[c] - base[c]), spec.texture_amplitude);
        if (owner >= 0) {
          const int label = layout.objects[owner].label;
          for (int c = 0; c < 3; ++c) sum[label][c] += px[c];
          count[label] += 1;
        }
      }
  }
  EXPECT_GT(overlaps, 0);
  for (int label = 0; label < 8; ++label) {
    ASSERT_GT(count[label], 0);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(sum[label][c] / count[label], spec.palette[label][c], 2.0);
  }
}

TEST(Synthetic, VisibleCellsAndMeanColour) {
  Layout layout{{4, 4}, {{0, {0.0, 0.0, 0.75, 0.75}}, {1, {0.5, 0.5, 0.5, 0.5}}}};
  const auto cells = visible_cells(layout, 4, 4);
  EXPECT_EQ(std::count(cells[0].begin(), cells[0].end(), true), 8);
  EXPECT_EQ(std::count(cells[1].begin(), cells[1].end(), true), 4);
  EXPECT_FALSE(cells[0][2 * 4 + 2]);
  Image img(4, 4, {0, 0, 0});
  img.set(0, 0, {80, 40, 8});
  const auto mean = mean_color(img, cells[0]);
  EXPECT_DOUBLE_EQ(mean[0], 10.0);
  EXPECT_DOUBLE_EQ(mean[1], 5.0);
  EXPECT_DOUBLE_EQ(mean[2], 1.0);
}

TEST(Batches, PaddingAndValueRange) {
  LayoutDataset ds;
  ds.cats = CategorySet({"a", "b"});
  Image white(4, 4, {255, 255, 255}), black(4, 4, {0, 0, 0});
  ds.items.push_back({"0.png", {{4, 4}, std::vector<ObjectSpec>(3, {1, {0, 0, 0.5, 0.5}})}});
  ds.items.push_back({"1.png", {{4, 4}, std::vector<ObjectSpec>(5, {0, {0, 0, 0.5, 0.5}})}});
  ds.images = {white, black};
  const auto batch = make_batch(ds, {0, 1});
  EXPECT_EQ(batch.max_objects, 5);
  double valid0 = 0, valid1 = 0;
  for (int k = 0; k < 5; ++k) {
    valid0 += batch.valid.at({0, k});
    valid1 += batch.valid.at({1, k});
  }
  EXPECT_EQ(valid0, 3.0);
  EXPECT_EQ(valid1, 5.0);
  EXPECT_EQ(batch.images.at({0, 1, 2, 0}), 1.0);
  EXPECT_EQ(batch.images.at({1, 3, 3, 2}), -1.0);
  EXPECT_EQ(tensor_to_image(batch.images, 0), white);
}

TEST(Batches, EpochCoversEveryItemOnce) {
  const auto ds = make_synthetic_corpus(SyntheticSceneSpec::standard(4, 16), 37, 1);
  BatchIterator it(ds, 8, 99);
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    std::multiset<std::size_t> seen;
    for (const auto& b : it.epoch_batches(epoch)) seen.insert(b.begin(), b.end());
    ASSERT_EQ(seen.size(), 37u);
    for (std::size_t i = 0; i < 37; ++i) EXPECT_EQ(seen.count(i), 1u);
  }
  std::vector<std::size_t> stream;
  for (std::uint64_t step = 0; step < 37; ++step) {
    const auto idx = it.indices_for_step(step);
    stream.insert(stream.end(), idx.begin(), idx.end());
  }
  for (std::uint64_t epoch = 0; epoch < 8; ++epoch) {
    std::set<std::size_t> once(stream.begin() + epoch * 37, stream.begin() + (epoch + 1) * 37);
    EXPECT_EQ(once.size(), 37u);
  }
  EXPECT_EQ(it.indices_for_step(5), BatchIterator(ds, 8, 99).indices_for_step(5));
}

TEST(LayoutDatasetFiles, SaveLoadRoundTrip) {
  const auto dir = temp_dir("dataset_roundtrip");
  auto ds = make_synthetic_corpus(SyntheticSceneSpec::standard(5, 16), 6, 2);
  ds.save(dir);
  auto loaded = LayoutDataset::load(dir);
  ASSERT_EQ(loaded.size(), ds.size());
  EXPECT_EQ(loaded.cats, ds.cats);
  EXPECT_EQ(loaded.palette, ds.palette);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(loaded.items[i].layout, ds.items[i].layout);
    EXPECT_EQ(loaded.image(i), ds.images[i]);
  }
}
