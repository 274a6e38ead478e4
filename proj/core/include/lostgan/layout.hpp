#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lostgan {

// Ordered category vocabulary; the index of a name is its label.
class CategorySet {
 public:
  CategorySet() = default;
  explicit CategorySet(std::vector<std::string> names);

  // Newline-separated names; blank lines are ignored.
  static CategorySet load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  static CategorySet parse(std::string_view text);
  std::string to_text() const;

  int size() const noexcept { return static_cast<int>(names_.size()); }
  const std::string& name(int label) const;
  std::optional<int> index_of(std::string_view name) const;
  const std::vector<std::string>& names() const noexcept { return names_; }

  bool operator==(const CategorySet& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

// Normalised box, top-left origin.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const noexcept { return w * h; }
  bool operator==(const BBox&) const = default;
};

struct ObjectSpec {
  int label = 0;
  BBox bbox;

  bool operator==(const ObjectSpec&) const = default;
};

struct Lattice {
  int height = 0;
  int width = 0;

  bool operator==(const Lattice&) const = default;
};

struct Layout {
  Lattice lattice;
  std::vector<ObjectSpec> objects;

  int size() const noexcept { return static_cast<int>(objects.size()); }
  bool operator==(const Layout&) const = default;
};

struct StyleState {
  std::vector<double> z_img;
  std::vector<std::vector<double>> z_obj;  // one row per object
  std::optional<std::uint64_t> seed;

  int objects() const noexcept { return static_cast<int>(z_obj.size()); }
  bool operator==(const StyleState&) const = default;
};

struct LayoutLimits {
  int min_objects = 1;
  int max_objects = 8;

  // 3..8 objects as filtered from COCO-Stuff; 3..30 for Visual Genome.
  static constexpr LayoutLimits coco() { return {3, 8}; }
  static constexpr LayoutLimits visual_genome() { return {3, 30}; }
};

inline constexpr double kBoxTolerance = 1e-9;

// Returns the layout unchanged when every invariant holds, otherwise throws
// lostgan::Error with kEmptyLayout, kBoxOutOfLattice, kUnknownLabel,
// kTooManyObjects, kTooFewObjects or kInvalidLattice.
const Layout& validate_layout(const Layout& layout, const CategorySet& cats, const LayoutLimits& limits);

// Checks that the style matches the layout's object count and is finite.
void validate_style(const StyleState& style, int objects, int d_noise);

// z_img comes from Philox stream 0 of `seed`; row i of z_obj from stream i + 1.
StyleState sample_style(int objects, int d_noise, std::uint64_t seed);
// Separate dimensions for z_img and z_obj.
StyleState sample_style(int objects, int d_img, int d_obj, std::uint64_t seed);

inline constexpr int kLayoutSchemaVersion = 1;

// Layout document:
// {
//   "version": 1,
//   "lattice": {"h": 64, "w": 64},
//   "objects": [{"label_name": "sky", "bbox": [x, y, w, h]}, ...],
//   "style": {"seed": 7, "z_img": [...], "z_obj": [[...], ...]}   (optional)
// }
// Numbers are written with round-trip precision, so parse(serialize(x)) == x.
std::string serialize_layout(const Layout& layout, const CategorySet& cats,
                             const std::optional<StyleState>& style = std::nullopt);

struct ParsedLayout {
  Layout layout;
  std::optional<StyleState> style;
};

// Throws kMalformedDocument or kSchemaVersionMismatch; label names must exist
// in `cats` (kUnknownLabel).
ParsedLayout parse_layout(std::string_view document, const CategorySet& cats);

}  // namespace lostgan
