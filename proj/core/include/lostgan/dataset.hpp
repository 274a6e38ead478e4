#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lostgan/image.hpp"
#include "lostgan/layout.hpp"
#include "lostgan/tensor.hpp"

namespace lostgan {

struct DatasetItem {
  std::string image;  // path, relative to the dataset root unless absolute
  Layout layout;
};

struct LayoutDataset {
  std::vector<DatasetItem> items;
  CategorySet cats;
  std::string split = "train";
  std::filesystem::path root;
  // Decoded rasters for in-memory corpora; empty when images live on disk.
  std::vector<Image> images;
  // Fill colour per category for synthetic corpora; empty otherwise.
  std::vector<Rgb> palette;

  std::size_t size() const noexcept { return items.size(); }
  // Raster of item i at its layout's lattice size.
  Image image(std::size_t i) const;
  // Decodes every image into `images`.
  void preload();

  // dataset.json + categories.txt + layouts/ (+ images/ for in-memory rasters)
  void save(const std::filesystem::path& dir) const;
  static LayoutDataset load(const std::filesystem::path& dir);
};

struct ManifestEntry {
  std::string image;
  bool retained = false;
  std::string reason;
  int objects = 0;
};

struct IngestOptions {
  LayoutLimits limits = LayoutLimits::coco();
  double min_area_fraction = 0.02;
  int lattice = 64;
  // Category id remapping (deprecated ids); a negative target drops the object.
  std::map<std::int64_t, std::int64_t> category_remap;
  bool require_images = true;
};

struct IngestResult {
  LayoutDataset dataset;
  std::vector<ManifestEntry> manifest;
  int missing_images = 0;
};

// COCO-style annotation document:
//   {"images": [{"id", "file_name", "width", "height"}],
//    "annotations": [{"id", "image_id", "category_id", "bbox": [x, y, w, h]}],
//    "categories": [{"id", "name"}]}
// Objects whose box covers less than min_area_fraction of the image are
// dropped, then images outside the object-count limits are dropped. Boxes are
// normalised by the image size and objects ordered by annotation id.
IngestResult ingest_coco_stuff(const std::filesystem::path& annotation_file, const std::filesystem::path& image_root,
                               const IngestOptions& options);
IngestResult ingest_coco_stuff_json(const std::string& annotation_document, const std::filesystem::path& image_root,
                                    const IngestOptions& options);

std::string format_manifest(const std::vector<ManifestEntry>& manifest);

struct SyntheticSceneSpec {
  CategorySet cats;
  std::vector<Rgb> palette;                  // one fill colour per category
  std::vector<std::uint64_t> texture_seeds;  // one texture stream per category
  int texture_amplitude = 6;                 // uniform noise in [-a, a] per channel
  Rgb background = {128, 128, 128};
  int lattice = 32;
  int min_objects = 3;
  int max_objects = 6;
  double occlusion_probability = 0.3;
  double min_side = 0.2;
  double max_side = 0.5;

  // `categories` well-separated colours named cat0, cat1, ...
  static SyntheticSceneSpec standard(int categories, int lattice);
  void validate() const;
};

// Boxes are snapped to whole lattice cells; later objects are painted over
// earlier ones; every pixel receives its owner's colour plus texture noise.
LayoutDataset make_synthetic_corpus(const SyntheticSceneSpec& spec, int n_images, std::uint64_t seed);

// For each object, the cells where it is the topmost box (painter's order).
std::vector<std::vector<bool>> visible_cells(const Layout& layout, int height, int width);

// Mean colour (0..255 per channel) of an image over the given cells.
std::array<double, 3> mean_color(const Image& image, const std::vector<bool>& cells);

struct Batch {
  Tensor images;                      // N x H x W x 3, values in [-1, 1]
  std::vector<Layout> layouts;
  std::vector<std::int64_t> labels;   // N x max_objects, 0 in padded slots
  Tensor boxes;                       // N x max_objects x 4
  Tensor valid;                       // N x max_objects, 1 for real objects
  std::vector<std::size_t> indices;   // dataset item of each sample
  std::int64_t max_objects = 0;
};

Batch make_batch(const LayoutDataset& ds, const std::vector<std::size_t>& indices);

// Deterministic stream of batches. Positions are drawn from consecutive
// epoch permutations (Philox stream = epoch), so batch_for_step is a pure
// function of (seed, step) and each epoch covers every item exactly once.
class BatchIterator {
 public:
  BatchIterator(const LayoutDataset& ds, int batch_size, std::uint64_t shuffle_seed, bool shuffle = true);

  // Items of the given training step (wrapping across epochs).
  std::vector<std::size_t> indices_for_step(std::uint64_t step) const;
  Batch batch_for_step(std::uint64_t step) const;

  // One pass over epoch `epoch`; the last batch may be short.
  std::vector<std::vector<std::size_t>> epoch_batches(std::uint64_t epoch) const;

 private:
  std::size_t item_at(std::uint64_t position) const;

  const LayoutDataset* ds_;
  int batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
};

}  // namespace lostgan
