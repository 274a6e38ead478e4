#include "lostgan/layout.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "lostgan/error.hpp"
#include "lostgan/layout_json.hpp"
#include "lostgan/rng.hpp"

namespace lostgan {

using nlohmann::json;

CategorySet::CategorySet(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw Error(ErrorCode::kMalformedDocument, "empty category name");
    if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
      throw Error(ErrorCode::kMalformedDocument, "duplicate category '" + names_[i] + "'");
    }
  }
  if (names_.empty()) throw Error(ErrorCode::kMalformedDocument, "category set is empty");
}

CategorySet CategorySet::parse(std::string_view text) {
  std::vector<std::string> names;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    names.push_back(line.substr(start));
  }
  return CategorySet(std::move(names));
}

CategorySet CategorySet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMalformedDocument, "cannot read category file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

std::string CategorySet::to_text() const {
  std::string out;
  for (const auto& n : names_) out += n + "\n";
  return out;
}

void CategorySet::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kCheckpointIOError, "cannot write " + path.string());
  out << to_text();
}

const std::string& CategorySet::name(int label) const {
  if (label < 0 || label >= size()) throw Error(ErrorCode::kUnknownLabel, "label " + std::to_string(label));
  return names_[static_cast<std::size_t>(label)];
}

std::optional<int> CategorySet::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

namespace {

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

void check_box(const BBox& b, std::size_t i) {
  const bool ok = std::isfinite(b.x) && std::isfinite(b.y) && std::isfinite(b.w) && std::isfinite(b.h) &&
                  b.x >= 0.0 && b.y >= 0.0 && b.w > 0.0 && b.h > 0.0 && b.w <= 1.0 && b.h <= 1.0 &&
                  b.x + b.w <= 1.0 + kBoxTolerance && b.y + b.h <= 1.0 + kBoxTolerance && b.w * b.h > 0.0;
  if (!ok) {
    std::ostringstream os;
    os << "object " << i << " box (" << b.x << ", " << b.y << ", " << b.w << ", " << b.h
       << ") leaves the unit lattice";
    throw Error(ErrorCode::kBoxOutOfLattice, os.str());
  }
}

}  // namespace

const Layout& validate_layout(const Layout& layout, const CategorySet& cats, const LayoutLimits& limits) {
  if (!power_of_two(layout.lattice.height) || !power_of_two(layout.lattice.width)) {
    throw Error(ErrorCode::kInvalidLattice, "lattice " + std::to_string(layout.lattice.height) + "x" +
                                                std::to_string(layout.lattice.width) + " is not a power of two");
  }
  const int m = layout.size();
  if (m == 0) throw Error(ErrorCode::kEmptyLayout, "layout has no objects");
  if (m > limits.max_objects) {
    throw Error(ErrorCode::kTooManyObjects, std::to_string(m) + " objects exceed the limit of " +
                                                std::to_string(limits.max_objects));
  }
  if (m < limits.min_objects) {
    throw Error(ErrorCode::kTooFewObjects, std::to_string(m) + " objects are below the minimum of " +
                                               std::to_string(limits.min_objects));
  }
  for (std::size_t i = 0; i < layout.objects.size(); ++i) {
    const auto& obj = layout.objects[i];
    if (obj.label < 0 || obj.label >= cats.size()) {
      throw Error(ErrorCode::kUnknownLabel, "object " + std::to_string(i) + " has label " +
                                                std::to_string(obj.label) + " outside " +
                                                std::to_string(cats.size()) + " categories");
    }
    check_box(obj.bbox, i);
  }
  return layout;
}

void validate_style(const StyleState& style, int objects, int d_noise) {
  if (style.objects() != objects) {
    throw Error(ErrorCode::kStyleMismatch, "style has " + std::to_string(style.objects()) +
                                               " object codes for " + std::to_string(objects) + " objects");
  }
  auto check = [&](const std::vector<double>& v, const std::string& what) {
    if (d_noise > 0 && static_cast<int>(v.size()) != d_noise) {
      throw Error(ErrorCode::kStyleMismatch, what + " has length " + std::to_string(v.size()) +
                                                 ", expected " + std::to_string(d_noise));
    }
    for (double x : v)
      if (!std::isfinite(x)) throw Error(ErrorCode::kStyleMismatch, what + " is not finite");
  };
  check(style.z_img, "z_img");
  for (std::size_t i = 0; i < style.z_obj.size(); ++i) check(style.z_obj[i], "z_obj[" + std::to_string(i) + "]");
}

StyleState sample_style(int objects, int d_noise, std::uint64_t seed) {
  return sample_style(objects, d_noise, d_noise, seed);
}

StyleState sample_style(int objects, int d_img, int d_obj, std::uint64_t seed) {
  if (objects < 1 || d_img < 1 || d_obj < 1) {
    throw Error(ErrorCode::kInvalidArgument, "sample_style needs objects >= 1 and positive dimensions");
  }
  StyleState style;
  style.seed = seed;
  style.z_img = normal_vector(seed, 0, static_cast<std::size_t>(d_img));
  style.z_obj.reserve(static_cast<std::size_t>(objects));
  for (int i = 0; i < objects; ++i) {
    style.z_obj.push_back(normal_vector(seed, static_cast<std::uint64_t>(i) + 1, static_cast<std::size_t>(d_obj)));
  }
  return style;
}

json style_to_json(const StyleState& style) {
  json s = json::object();
  if (style.seed) s["seed"] = *style.seed;
  s["z_img"] = style.z_img;
  s["z_obj"] = style.z_obj;
  return s;
}

StyleState style_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kMalformedDocument, "style must be an object");
  StyleState style;
  try {
    if (doc.contains("seed")) style.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("z_img")) style.z_img = doc.at("z_img").get<std::vector<double>>();
    if (doc.contains("z_obj")) style.z_obj = doc.at("z_obj").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedDocument, std::string("style: ") + e.what());
  }
  return style;
}

json layout_to_json(const Layout& layout, const CategorySet& cats, const std::optional<StyleState>& style) {
  json doc;
  doc["version"] = kLayoutSchemaVersion;
  doc["lattice"] = {{"h", layout.lattice.height}, {"w", layout.lattice.width}};
  json objects = json::array();
  for (const auto& obj : layout.objects) {
    objects.push_back({{"label_name", cats.name(obj.label)},
                       {"bbox", {obj.bbox.x, obj.bbox.y, obj.bbox.w, obj.bbox.h}}});
  }
  doc["objects"] = std::move(objects);
  if (style) doc["style"] = style_to_json(*style);
  return doc;
}

ParsedLayout layout_from_json(const json& doc, const CategorySet& cats) {
  if (!doc.is_object()) throw Error(ErrorCode::kMalformedDocument, "layout document must be an object");
  if (!doc.contains("version")) throw Error(ErrorCode::kMalformedDocument, "missing 'version'");
  if (!doc.at("version").is_number_integer() || doc.at("version").get<int>() != kLayoutSchemaVersion) {
    throw Error(ErrorCode::kSchemaVersionMismatch, "expected version " + std::to_string(kLayoutSchemaVersion) +
                                                       ", got " + doc.at("version").dump());
  }
  for (const char* key : {"lattice", "objects"}) {
    if (!doc.contains(key)) throw Error(ErrorCode::kMalformedDocument, std::string("missing '") + key + "'");
  }
  ParsedLayout parsed;
  try {
    const auto& lattice = doc.at("lattice");
    parsed.layout.lattice = {lattice.at("h").get<int>(), lattice.at("w").get<int>()};
    const auto& objects = doc.at("objects");
    if (!objects.is_array()) throw Error(ErrorCode::kMalformedDocument, "'objects' must be an array");
    for (const auto& item : objects) {
      const auto name = item.at("label_name").get<std::string>();
      const auto label = cats.index_of(name);
      if (!label) throw Error(ErrorCode::kUnknownLabel, "unknown category '" + name + "'");
      const auto box = item.at("bbox").get<std::vector<double>>();
      if (box.size() != 4) throw Error(ErrorCode::kMalformedDocument, "bbox needs 4 numbers");
      parsed.layout.objects.push_back({*label, {box[0], box[1], box[2], box[3]}});
    }
    if (doc.contains("style") && !doc.at("style").is_null()) parsed.style = style_from_json(doc.at("style"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedDocument, e.what());
  }
  return parsed;
}

std::string serialize_layout(const Layout& layout, const CategorySet& cats, const std::optional<StyleState>& style) {
  return layout_to_json(layout, cats, style).dump(2);
}

ParsedLayout parse_layout(std::string_view document, const CategorySet& cats) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kMalformedDocument, e.what());
  }
  return layout_from_json(doc, cats);
}

}  // namespace lostgan
