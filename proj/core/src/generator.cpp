#include "lostgan/generator.hpp"

#include <algorithm>

#include "lostgan/error.hpp"
#include "lostgan/ops.hpp"

namespace lostgan {

using nlohmann::json;

int GeneratorConfig::block_out_channels(int block) const noexcept {
  return std::max(ch, (16 * ch) >> (block + 1));
}

void GeneratorConfig::validate() const {
  if (ch < 1 || n_blocks < 1 || d_noise < 1 || d_obj_noise < 1 || d_e < 1 || mask_channels < 1 || num_classes < 1) {
    throw Error(ErrorCode::kInvalidArgument, "generator config fields must be positive");
  }
  if (mask_size < 4 || (mask_size & (mask_size - 1)) != 0) {
    throw Error(ErrorCode::kInvalidArgument, "mask_size must be a power of two >= 4");
  }
}

namespace {

std::string overlap_name(isla::OverlapRule rule) {
  return rule == isla::OverlapRule::kCoverageCount ? "coverage_count" : "mask_weight_sum";
}

isla::OverlapRule overlap_from(const std::string& name) {
  if (name == "coverage_count") return isla::OverlapRule::kCoverageCount;
  if (name == "mask_weight_sum") return isla::OverlapRule::kMaskWeightSum;
  throw Error(ErrorCode::kMalformedDocument, "unknown overlap rule '" + name + "'");
}

}  // namespace

json GeneratorConfig::to_json() const {
  return {{"ch", ch},
          {"n_blocks", n_blocks},
          {"d_noise", d_noise},
          {"d_obj_noise", d_obj_noise},
          {"d_e", d_e},
          {"mask_size", mask_size},
          {"mask_channels", mask_channels},
          {"num_classes", num_classes},
          {"projection_gain", projection_gain},
          {"overlap", overlap_name(overlap)},
          {"init_seed", init_seed}};
}

GeneratorConfig GeneratorConfig::from_json(const json& doc) {
  GeneratorConfig c;
  try {
    c.ch = doc.value("ch", c.ch);
    c.n_blocks = doc.value("n_blocks", c.n_blocks);
    c.d_noise = doc.value("d_noise", c.d_noise);
    c.d_obj_noise = doc.value("d_obj_noise", c.d_noise);
    c.d_e = doc.value("d_e", c.d_e);
    c.mask_size = doc.value("mask_size", c.mask_size);
    c.mask_channels = doc.value("mask_channels", c.mask_channels);
    c.num_classes = doc.value("num_classes", c.num_classes);
    c.projection_gain = doc.value("projection_gain", c.projection_gain);
    c.overlap = overlap_from(doc.value("overlap", std::string("coverage_count")));
    c.init_seed = doc.value("init_seed", c.init_seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedDocument, std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

StyleBatch make_style_batch(const std::vector<StyleState>& styles) {
  if (styles.empty()) throw Error(ErrorCode::kInvalidArgument, "empty style batch");
  const auto d_img = static_cast<std::int64_t>(styles.front().z_img.size());
  std::int64_t total = 0, d_obj = -1;
  for (const auto& s : styles) {
    if (static_cast<std::int64_t>(s.z_img.size()) != d_img) throw Error(ErrorCode::kStyleMismatch, "ragged z_img");
    total += s.objects();
    for (const auto& row : s.z_obj) {
      if (d_obj < 0) d_obj = static_cast<std::int64_t>(row.size());
      if (static_cast<std::int64_t>(row.size()) != d_obj) throw Error(ErrorCode::kStyleMismatch, "ragged z_obj");
    }
  }
  StyleBatch batch{Tensor({static_cast<std::int64_t>(styles.size()), d_img}), Tensor({total, std::max<std::int64_t>(d_obj, 0)})};
  std::int64_t row = 0;
  for (std::size_t n = 0; n < styles.size(); ++n) {
    std::copy(styles[n].z_img.begin(), styles[n].z_img.end(), batch.z_img.data() + static_cast<std::int64_t>(n) * d_img);
    for (const auto& z : styles[n].z_obj) std::copy(z.begin(), z.end(), batch.z_obj.data() + (row++) * d_obj);
  }
  return batch;
}

Generator::Generator(GeneratorConfig config) : config_(std::move(config)) {
  config_.validate();
  PhiloxStream rng(config_.init_seed, 0x47454eull);
  const int c0 = 16 * config_.ch;
  const int embed_width = config_.d_e + config_.d_obj_noise;
  fc_ = Linear(config_.d_noise, 16 * c0, rng);
  embedding_ = Embedding(config_.num_classes, config_.d_e, rng);
  mask_net_ = isla::MaskNet(embed_width, config_.mask_channels, config_.mask_size, rng);
  int in = c0;
  for (int b = 0; b < config_.n_blocks; ++b) {
    const int out = config_.block_out_channels(b);
    GeneratorBlock block;
    block.norm1 = isla::IslaNorm(embed_width, in, rng, config_.projection_gain);
    block.norm2 = isla::IslaNorm(embed_width, out, rng, config_.projection_gain);
    block.norm1.rule = block.norm2.rule = config_.overlap;
    block.conv1 = Conv2d(in, out, 3, rng);
    block.conv2 = Conv2d(out, out, 3, rng);
    block.shortcut = Conv2d(in, out, 1, rng);
    blocks_.push_back(std::move(block));
    in = out;
  }
  final_norm_ = BatchNorm(in);
  final_conv_ = Conv2d(in, 3, 3, rng);
}

ag::Var Generator::seed_features(const ag::Var& z_img) {
  if (z_img.value().rank() != 2 || z_img.dim(1) != config_.d_noise) {
    throw Error(ErrorCode::kDimensionMismatch, "z_img " + shape_string(z_img.shape()) + ", expected N x " +
                                                   std::to_string(config_.d_noise));
  }
  return ag::reshape(fc_.forward(z_img, true), {z_img.dim(0), 4, 4, 16 * config_.ch});
}

GeneratorOutput Generator::forward(const std::vector<Layout>& layouts, const StyleBatch& styles, bool training,
                                   bool retain_maps) {
  const auto n = static_cast<std::int64_t>(layouts.size());
  if (n == 0 || styles.z_img.dim(0) != n) throw Error(ErrorCode::kShapeMismatch, "layout/style batch sizes differ");
  std::vector<std::int64_t> labels;
  for (const auto& layout : layouts) {
    if (layout.objects.empty()) throw Error(ErrorCode::kEmptyLayout, "generator needs at least one object per layout");
    for (const auto& obj : layout.objects) labels.push_back(obj.label);
  }
  if (styles.z_obj.dim(0) != static_cast<std::int64_t>(labels.size()) || styles.z_obj.dim(1) != config_.d_obj_noise) {
    throw Error(ErrorCode::kStyleMismatch, "z_obj " + shape_string(styles.z_obj.shape()) + " for " +
                                               std::to_string(labels.size()) + " objects");
  }
  const auto objects = isla::placements_for(layouts);

  ag::Var embedding = isla::embed_instances(embedding_.table, labels, ag::Var(styles.z_obj));
  GeneratorOutput out;
  out.masks = mask_net_.forward(embedding);

  auto keep = [&](const isla::IslaNorm::Output& site) {
    if (!retain_maps) return;
    out.maps.push_back({static_cast<int>(site.y.dim(1)), static_cast<int>(site.y.dim(2)), site.maps.gamma.value(),
                        site.maps.beta.value(), site.maps.coverage});
  };

  ag::Var h = seed_features(ag::Var(styles.z_img));
  for (auto& block : blocks_) {
    auto site1 = block.norm1.forward(h, embedding, out.masks, objects, training);
    keep(site1);
    ag::Var main = ag::upsample2x(ag::relu(site1.y));
    main = block.conv1.forward(main, training);
    auto site2 = block.norm2.forward(main, embedding, out.masks, objects, training);
    keep(site2);
    main = block.conv2.forward(ag::relu(site2.y), training);
    ag::Var skip = block.shortcut.forward(ag::upsample2x(h), training);
    h = ag::add(main, skip);
  }
  h = ag::relu(final_norm_.forward(h, training));
  out.image = ag::tanh(final_conv_.forward(h, training));
  return out;
}

GeneratorOutput Generator::generate(const std::vector<Layout>& layouts, const std::vector<StyleState>& styles,
                                    bool training, bool retain_maps) {
  if (layouts.size() != styles.size()) throw Error(ErrorCode::kStyleMismatch, "one style per layout required");
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    validate_style(styles[i], layouts[i].size(), -1);
    if (static_cast<int>(styles[i].z_img.size()) != config_.d_noise) {
      throw Error(ErrorCode::kStyleMismatch, "z_img length " + std::to_string(styles[i].z_img.size()));
    }
  }
  return forward(layouts, make_style_batch(styles), training, retain_maps);
}

std::vector<GeneratorOutput> Generator::interpolate_object_style(const Layout& layout, const StyleState& style,
                                                                 int object, const std::vector<double>& z_a,
                                                                 const std::vector<double>& z_b, int steps,
                                                                 bool retain_maps) {
  if (object < 0 || object >= layout.size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "object " + std::to_string(object) + " of " + std::to_string(layout.size()));
  }
  if (steps < 2) throw Error(ErrorCode::kInvalidArgument, "interpolation needs at least 2 steps");
  if (static_cast<int>(z_a.size()) != config_.d_obj_noise || z_b.size() != z_a.size()) {
    throw Error(ErrorCode::kStyleMismatch, "interpolation endpoints must have length d_obj_noise");
  }
  std::vector<GeneratorOutput> frames;
  for (int s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / (steps - 1);
    StyleState frame = style;
    auto& z = frame.z_obj[static_cast<std::size_t>(object)];
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = (1.0 - t) * z_a[j] + t * z_b[j];
    frames.push_back(generate({layout}, {frame}, false, retain_maps));
  }
  return frames;
}

ParameterSet Generator::parameters() {
  ParameterSet set;
  fc_.collect(set, "g.fc");
  embedding_.collect(set, "g.embedding");
  mask_net_.collect(set, "g.mask");
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "g.block" + std::to_string(b);
    blocks_[b].norm1.collect(set, p + ".norm1");
    blocks_[b].norm2.collect(set, p + ".norm2");
    blocks_[b].conv1.collect(set, p + ".conv1");
    blocks_[b].conv2.collect(set, p + ".conv2");
    blocks_[b].shortcut.collect(set, p + ".shortcut");
  }
  final_norm_.collect(set, "g.final_norm");
  final_conv_.collect(set, "g.final_conv");
  return set;
}

}  // namespace lostgan
