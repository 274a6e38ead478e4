#include "lostgan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "lostgan/error.hpp"
#include "lostgan/isla_norm.hpp"
#include "lostgan/layout_json.hpp"
#include "lostgan/rng.hpp"

namespace lostgan {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path, ErrorCode code) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(code, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kCheckpointIOError, "cannot write " + path.string());
  out << text;
}

fs::path resolve(const fs::path& root, const std::string& image) {
  fs::path p(image);
  return p.is_absolute() ? p : root / p;
}

}  // namespace

Image LayoutDataset::image(std::size_t i) const {
  const auto& lattice = items.at(i).layout.lattice;
  if (i < images.size()) return resize_image(images[i], lattice.height, lattice.width);
  return resize_image(read_image(resolve(root, items[i].image)), lattice.height, lattice.width);
}

void LayoutDataset::preload() {
  if (images.size() == items.size()) return;
  std::vector<Image> loaded;
  loaded.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) loaded.push_back(image(i));
  images = std::move(loaded);
}

void LayoutDataset::save(const fs::path& dir) const {
  fs::create_directories(dir / "layouts");
  const bool write_images = !images.empty();
  if (write_images) fs::create_directories(dir / "images");
  cats.save(dir / "categories.txt");
  json index;
  index["version"] = 1;
  index["split"] = split;
  if (!palette.empty()) {
    json colours = json::array();
    for (const auto& c : palette) colours.push_back({c[0], c[1], c[2]});
    index["palette"] = std::move(colours);
  }
  json entries = json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu", i);
    const std::string layout_rel = std::string("layouts/") + name + ".json";
    write_text(dir / layout_rel, serialize_layout(items[i].layout, cats));
    std::string image_rel = items[i].image;
    if (write_images) {
      image_rel = std::string("images/") + name + ".png";
      write_png(images[i], dir / image_rel);
    } else if (!fs::path(image_rel).is_absolute()) {
      image_rel = fs::absolute(root / image_rel).string();
    }
    entries.push_back({{"image", image_rel}, {"layout", layout_rel}});
  }
  index["items"] = std::move(entries);
  write_text(dir / "dataset.json", index.dump(2));
}

LayoutDataset LayoutDataset::load(const fs::path& dir) {
  LayoutDataset ds;
  ds.root = dir;
  ds.cats = CategorySet::load(dir / "categories.txt");
  json index;
  try {
    index = json::parse(read_text(dir / "dataset.json", ErrorCode::kMalformedDocument));
    ds.split = index.value("split", std::string("train"));
    if (index.contains("palette")) {
      for (const auto& c : index.at("palette")) ds.palette.push_back({c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()});
      if (static_cast<int>(ds.palette.size()) != ds.cats.size()) throw Error(ErrorCode::kMalformedDocument, "palette size differs from category count");
    }
    for (const auto& entry : index.at("items")) {
      DatasetItem item;
      item.image = entry.at("image").get<std::string>();
      const auto layout_doc = read_text(dir / entry.at("layout").get<std::string>(), ErrorCode::kMalformedDocument);
      item.layout = parse_layout(layout_doc, ds.cats).layout;
      ds.items.push_back(std::move(item));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedDocument, std::string("dataset.json: ") + e.what());
  }
  return ds;
}

IngestResult ingest_coco_stuff(const fs::path& annotation_file, const fs::path& image_root,
                               const IngestOptions& options) {
  return ingest_coco_stuff_json(read_text(annotation_file, ErrorCode::kMalformedAnnotation), image_root, options);
}

IngestResult ingest_coco_stuff_json(const std::string& annotation_document, const fs::path& image_root,
                                    const IngestOptions& options) {
  json doc;
  try {
    doc = json::parse(annotation_document);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedAnnotation, e.what());
  }
  if (!doc.is_object() || !doc.contains("images") || !doc.contains("annotations") || !doc.contains("categories")) {
    throw Error(ErrorCode::kMalformedAnnotation, "expected 'images', 'annotations' and 'categories'");
  }

  struct ImageInfo {
    std::int64_t id;
    std::string file;
    double width, height;
  };
  struct Annotation {
    std::int64_t id;
    std::int64_t category;
    double x, y, w, h;
  };

  IngestResult result;
  std::vector<std::pair<std::int64_t, std::string>> categories;
  std::map<std::int64_t, ImageInfo> images;
  std::map<std::int64_t, std::vector<Annotation>> by_image;
  try {
    for (const auto& c : doc.at("categories")) categories.emplace_back(c.at("id").get<std::int64_t>(), c.at("name").get<std::string>());
    for (const auto& im : doc.at("images")) {
      ImageInfo info{im.at("id").get<std::int64_t>(), im.at("file_name").get<std::string>(),
                     im.at("width").get<double>(), im.at("height").get<double>()};
      if (!(info.width > 0) || !(info.height > 0)) throw Error(ErrorCode::kMalformedAnnotation, "image without size");
      images.emplace(info.id, info);
    }
    std::int64_t fallback_id = 0;
    for (const auto& a : doc.at("annotations")) {
      const auto box = a.at("bbox").get<std::vector<double>>();
      if (box.size() != 4) throw Error(ErrorCode::kMalformedAnnotation, "bbox needs 4 numbers");
      Annotation ann{a.contains("id") ? a.at("id").get<std::int64_t>() : fallback_id,
                     a.at("category_id").get<std::int64_t>(), box[0], box[1], box[2], box[3]};
      ++fallback_id;
      by_image[a.at("image_id").get<std::int64_t>()].push_back(ann);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedAnnotation, e.what());
  }

  std::sort(categories.begin(), categories.end());
  std::vector<std::string> names;
  std::map<std::int64_t, int> label_of;
  for (const auto& [id, name] : categories) {
    label_of[id] = static_cast<int>(names.size());
    names.push_back(name);
  }
  if (names.empty()) {
    result.dataset.cats = CategorySet();
    return result;
  }
  result.dataset.cats = CategorySet(names);
  result.dataset.root = image_root;

  for (const auto& [image_id, info] : images) {
    ManifestEntry entry{info.file, false, "", 0};
    auto anns = by_image[image_id];
    std::sort(anns.begin(), anns.end(), [](const Annotation& a, const Annotation& b) {
      return std::tie(a.id, a.category, a.x, a.y, a.w, a.h) < std::tie(b.id, b.category, b.x, b.y, b.w, b.h);
    });
    Layout layout;
    layout.lattice = {options.lattice, options.lattice};
    for (const auto& ann : anns) {
      std::int64_t category = ann.category;
      if (auto it = options.category_remap.find(category); it != options.category_remap.end()) category = it->second;
      if (category < 0) continue;
      auto label = label_of.find(category);
      if (label == label_of.end()) throw Error(ErrorCode::kMalformedAnnotation, "unknown category id " + std::to_string(category));
      const double area_fraction = (ann.w * ann.h) / (info.width * info.height);
      if (area_fraction < options.min_area_fraction) continue;
      BBox box{ann.x / info.width, ann.y / info.height, ann.w / info.width, ann.h / info.height};
      box.x = std::clamp(box.x, 0.0, 1.0);
      box.y = std::clamp(box.y, 0.0, 1.0);
      box.w = std::min(box.w, 1.0 - box.x);
      box.h = std::min(box.h, 1.0 - box.y);
      if (box.w <= 0.0 || box.h <= 0.0) continue;
      layout.objects.push_back({label->second, box});
    }
    entry.objects = layout.size();
    if (layout.size() < options.limits.min_objects || layout.size() > options.limits.max_objects) {
      entry.reason = "object_count=" + std::to_string(layout.size());
      result.manifest.push_back(entry);
      continue;
    }
    if (options.require_images && !fs::exists(resolve(image_root, info.file))) {
      entry.reason = "missing_image";
      ++result.missing_images;
      result.manifest.push_back(entry);
      continue;
    }
    validate_layout(layout, result.dataset.cats, options.limits);
    entry.retained = true;
    result.manifest.push_back(entry);
    result.dataset.items.push_back({info.file, std::move(layout)});
  }
  return result;
}

std::string format_manifest(const std::vector<ManifestEntry>& manifest) {
  std::ostringstream os;
  for (const auto& e : manifest) {
    os << (e.retained ? "retained" : "dropped") << '\t' << e.image << "\tobjects=" << e.objects;
    if (!e.reason.empty()) os << "\treason=" << e.reason;
    os << '\n';
  }
  return os.str();
}

SyntheticSceneSpec SyntheticSceneSpec::standard(int categories, int lattice) {
  static constexpr Rgb kBase[] = {{220, 40, 40},  {40, 190, 60},   {40, 70, 220},  {235, 215, 40},
                                  {200, 50, 200}, {40, 200, 210},  {245, 140, 30}, {60, 35, 20},
                                  {250, 250, 250}, {120, 0, 60},   {0, 100, 70},   {150, 160, 255}};
  SyntheticSceneSpec spec;
  std::vector<std::string> names;
  for (int i = 0; i < categories; ++i) {
    names.push_back("cat" + std::to_string(i));
    if (i < static_cast<int>(std::size(kBase))) {
      spec.palette.push_back(kBase[i]);
    } else {
      // Golden-angle hue walk for larger vocabularies.
      const double hue = std::fmod(i * 137.508, 360.0) / 60.0;
      const double f = hue - std::floor(hue);
      const auto hi = static_cast<std::uint8_t>(230), lo = static_cast<std::uint8_t>(30);
      const auto up = static_cast<std::uint8_t>(30 + 200 * f), down = static_cast<std::uint8_t>(230 - 200 * f);
      switch (static_cast<int>(hue) % 6) {
        case 0: spec.palette.push_back({hi, up, lo}); break;
        case 1: spec.palette.push_back({down, hi, lo}); break;
        case 2: spec.palette.push_back({lo, hi, up}); break;
        case 3: spec.palette.push_back({lo, down, hi}); break;
        case 4: spec.palette.push_back({up, lo, hi}); break;
        default: spec.palette.push_back({hi, lo, down}); break;
      }
    }
    spec.texture_seeds.push_back(derive_seed(0x5445585455524500ull, static_cast<std::uint64_t>(i)));
  }
  spec.cats = CategorySet(names);
  spec.lattice = lattice;
  return spec;
}

void SyntheticSceneSpec::validate() const {
  if (cats.size() < 1 || static_cast<int>(palette.size()) != cats.size() ||
      static_cast<int>(texture_seeds.size()) != cats.size()) {
    throw Error(ErrorCode::kInvalidArgument, "palette and texture seeds must cover every category");
  }
  if (lattice < 1 || (lattice & (lattice - 1)) != 0) throw Error(ErrorCode::kInvalidArgument, "lattice must be a power of two");
  if (min_objects < 1 || max_objects < min_objects) throw Error(ErrorCode::kInvalidArgument, "object count range");
  if (!(min_side > 0.0) || max_side > 1.0 || max_side < min_side) throw Error(ErrorCode::kInvalidArgument, "side range");
  if (texture_amplitude < 0 || texture_amplitude > 127) throw Error(ErrorCode::kInvalidArgument, "texture amplitude");
}

namespace {

std::uint8_t noisy(std::uint8_t base, int noise) {
  return static_cast<std::uint8_t>(std::clamp(static_cast<int>(base) + noise, 0, 255));
}

int sample_noise(PhiloxStream& rng, int amplitude) {
  if (amplitude == 0) return 0;
  return static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * amplitude + 1))) - amplitude;
}

}  // namespace

LayoutDataset make_synthetic_corpus(const SyntheticSceneSpec& spec, int n_images, std::uint64_t seed) {
  spec.validate();
  if (n_images < 1) throw Error(ErrorCode::kInvalidArgument, "n_images must be >= 1");
  LayoutDataset ds;
  ds.cats = spec.cats;
  ds.split = "synthetic";
  ds.palette = spec.palette;
  const int side = spec.lattice;
  const int min_cells = std::max(1, static_cast<int>(std::ceil(spec.min_side * side)));
  const int max_cells = std::max(min_cells, static_cast<int>(std::floor(spec.max_side * side)));

  for (int index = 0; index < n_images; ++index) {
    PhiloxStream rng(seed, static_cast<std::uint64_t>(index));
    Layout layout;
    layout.lattice = {side, side};
    const int count = spec.min_objects + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_objects - spec.min_objects + 1)));
    std::vector<isla::CellExtent> placed;
    for (int k = 0; k < count; ++k) {
      const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.cats.size())));
      const bool may_overlap = rng.uniform() < spec.occlusion_probability;
      isla::CellExtent ext;
      for (int attempt = 0; attempt < 20; ++attempt) {
        const int w = min_cells + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_cells - min_cells + 1)));
        const int h = min_cells + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_cells - min_cells + 1)));
        const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(side - w + 1)));
        const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(side - h + 1)));
        ext = {y0, y0 + h, x0, x0 + w};
        const bool overlaps = std::any_of(placed.begin(), placed.end(), [&](const isla::CellExtent& o) {
          return ext.x0 < o.x1 && o.x0 < ext.x1 && ext.y0 < o.y1 && o.y0 < ext.y1;
        });
        if (may_overlap || !overlaps) break;
      }
      placed.push_back(ext);
      // Whole-cell boxes; dividing by a power of two is exact.
      layout.objects.push_back({label, {static_cast<double>(ext.x0) / side, static_cast<double>(ext.y0) / side,
                                        static_cast<double>(ext.width()) / side, static_cast<double>(ext.height()) / side}});
    }

    Image image(side, side);
    std::vector<int> owner(static_cast<std::size_t>(side) * side, -1);
    for (int k = 0; k < count; ++k)
      for (int y = placed[static_cast<std::size_t>(k)].y0; y < placed[static_cast<std::size_t>(k)].y1; ++y)
        for (int x = placed[static_cast<std::size_t>(k)].x0; x < placed[static_cast<std::size_t>(k)].x1; ++x)
          owner[static_cast<std::size_t>(y) * side + x] = k;
    PhiloxStream background_noise(derive_seed(seed, 0x4247ull), static_cast<std::uint64_t>(index));
    std::vector<PhiloxStream> textures;
    for (int k = 0; k < count; ++k) {
      const auto label = static_cast<std::size_t>(layout.objects[static_cast<std::size_t>(k)].label);
      textures.emplace_back(derive_seed(spec.texture_seeds[label], seed), static_cast<std::uint64_t>(index) * 64 + static_cast<std::uint64_t>(k));
    }
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const int k = owner[static_cast<std::size_t>(y) * side + x];
        const Rgb base = k < 0 ? spec.background : spec.palette[static_cast<std::size_t>(layout.objects[static_cast<std::size_t>(k)].label)];
        PhiloxStream& noise = k < 0 ? background_noise : textures[static_cast<std::size_t>(k)];
        Rgb px;
        for (int ch = 0; ch < 3; ++ch) px[static_cast<std::size_t>(ch)] = noisy(base[static_cast<std::size_t>(ch)], sample_noise(noise, spec.texture_amplitude));
        image.set(y, x, px);
      }

    char name[32];
    std::snprintf(name, sizeof(name), "images/%06d.png", index);
    ds.items.push_back({name, std::move(layout)});
    ds.images.push_back(std::move(image));
  }
  return ds;
}

std::vector<std::vector<bool>> visible_cells(const Layout& layout, int height, int width) {
  std::vector<int> owner(static_cast<std::size_t>(height) * width, -1);
  for (int k = 0; k < layout.size(); ++k) {
    const auto ext = isla::cell_extent(layout.objects[static_cast<std::size_t>(k)].bbox, height, width);
    for (int y = ext.y0; y < ext.y1; ++y)
      for (int x = ext.x0; x < ext.x1; ++x) owner[static_cast<std::size_t>(y) * width + x] = k;
  }
  std::vector<std::vector<bool>> out(static_cast<std::size_t>(layout.size()), std::vector<bool>(owner.size(), false));
  for (std::size_t cell = 0; cell < owner.size(); ++cell)
    if (owner[cell] >= 0) out[static_cast<std::size_t>(owner[cell])][cell] = true;
  return out;
}

std::array<double, 3> mean_color(const Image& image, const std::vector<bool>& cells) {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  std::size_t count = 0;
  for (std::size_t cell = 0; cell < cells.size(); ++cell) {
    if (!cells[cell]) continue;
    for (std::size_t ch = 0; ch < 3; ++ch) sum[ch] += image.pixels[cell * 3 + ch];
    ++count;
  }
  if (count > 0)
    for (auto& s : sum) s /= static_cast<double>(count);
  return sum;
}

Batch make_batch(const LayoutDataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  Batch batch;
  const auto& lattice = ds.items.at(indices.front()).layout.lattice;
  const auto n = static_cast<std::int64_t>(indices.size());
  batch.images = Tensor({n, lattice.height, lattice.width, 3});
  for (auto i : indices) batch.max_objects = std::max<std::int64_t>(batch.max_objects, ds.items.at(i).layout.size());
  batch.labels.assign(static_cast<std::size_t>(n * batch.max_objects), 0);
  batch.boxes = Tensor({n, batch.max_objects, 4});
  batch.valid = Tensor({n, batch.max_objects});
  for (std::int64_t s = 0; s < n; ++s) {
    const std::size_t item = indices[static_cast<std::size_t>(s)];
    const Layout& layout = ds.items[item].layout;
    if (!(layout.lattice == lattice)) throw Error(ErrorCode::kShapeMismatch, "mixed lattices in one batch");
    image_to_tensor(ds.image(item), batch.images, s);
    for (int k = 0; k < layout.size(); ++k) {
      const auto& obj = layout.objects[static_cast<std::size_t>(k)];
      batch.labels[static_cast<std::size_t>(s * batch.max_objects + k)] = obj.label;
      double* box = batch.boxes.data() + (s * batch.max_objects + k) * 4;
      box[0] = obj.bbox.x;
      box[1] = obj.bbox.y;
      box[2] = obj.bbox.w;
      box[3] = obj.bbox.h;
      batch.valid[s * batch.max_objects + k] = 1.0;
    }
    batch.layouts.push_back(layout);
    batch.indices.push_back(item);
  }
  return batch;
}

BatchIterator::BatchIterator(const LayoutDataset& ds, int batch_size, std::uint64_t shuffle_seed, bool shuffle)
    : ds_(&ds), batch_size_(batch_size), seed_(shuffle_seed), shuffle_(shuffle) {
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  if (ds.size() == 0) throw Error(ErrorCode::kInsufficientData, "empty dataset");
}

std::size_t BatchIterator::item_at(std::uint64_t position) const {
  const std::uint64_t n = ds_->size();
  if (!shuffle_) return static_cast<std::size_t>(position % n);
  return permutation(n, seed_, position / n)[position % n];
}

std::vector<std::size_t> BatchIterator::indices_for_step(std::uint64_t step) const {
  const std::uint64_t n = ds_->size();
  const std::uint64_t start = step * static_cast<std::uint64_t>(batch_size_);
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size_));
  std::uint64_t cached_epoch = ~0ull;
  std::vector<std::size_t> perm;
  for (std::uint64_t p = start; p < start + static_cast<std::uint64_t>(batch_size_); ++p) {
    if (!shuffle_) {
      out.push_back(static_cast<std::size_t>(p % n));
      continue;
    }
    if (p / n != cached_epoch) {
      cached_epoch = p / n;
      perm = permutation(n, seed_, cached_epoch);
    }
    out.push_back(perm[p % n]);
  }
  return out;
}

Batch BatchIterator::batch_for_step(std::uint64_t step) const { return make_batch(*ds_, indices_for_step(step)); }

std::vector<std::vector<std::size_t>> BatchIterator::epoch_batches(std::uint64_t epoch) const {
  const std::size_t n = ds_->size();
  std::vector<std::size_t> order;
  if (shuffle_) {
    order = permutation(n, seed_, epoch);
  } else {
    order.resize(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size_)) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + static_cast<std::size_t>(batch_size_))));
  }
  return batches;
}

}  // namespace lostgan
