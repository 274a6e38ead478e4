#include "lostgan/discriminator.hpp"

#include <algorithm>
#include <bit>

#include "lostgan/error.hpp"
#include "lostgan/ops.hpp"
#include "lostgan/roi_align.hpp"

namespace lostgan {

using nlohmann::json;

int DiscriminatorConfig::block_out_channels(int block) const noexcept {
  return std::min(16 * ch, ch << block);
}

int DiscriminatorConfig::resolved_roi_stage() const noexcept {
  if (roi_stage >= 0) return std::min(roi_stage, n_backbone_blocks - 1);
  // Block b outputs lattice / 2^(b+1); lattice / 4 is block 1.
  return std::min(1, n_backbone_blocks - 1);
}

void DiscriminatorConfig::validate() const {
  if (ch < 1 || n_backbone_blocks < 1 || roi_size < 1 || sampling_ratio < 1 || num_classes < 1) {
    throw Error(ErrorCode::kInvalidArgument, "discriminator config fields must be positive");
  }
  if (lattice < 2 || !std::has_single_bit(static_cast<unsigned>(lattice)) || (lattice >> n_backbone_blocks) < 1) {
    throw Error(ErrorCode::kInvalidArgument, "lattice " + std::to_string(lattice) + " cannot be halved " +
                                                 std::to_string(n_backbone_blocks) + " times");
  }
}

json DiscriminatorConfig::to_json() const {
  return {{"ch", ch},
          {"lattice", lattice},
          {"n_backbone_blocks", n_backbone_blocks},
          {"roi_size", roi_size},
          {"sampling_ratio", sampling_ratio},
          {"roi_stage", roi_stage},
          {"num_classes", num_classes},
          {"spectral_norm", spectral_norm},
          {"init_seed", init_seed}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const json& doc) {
  DiscriminatorConfig c;
  try {
    c.ch = doc.value("ch", c.ch);
    c.lattice = doc.value("lattice", c.lattice);
    c.n_backbone_blocks = doc.value("n_backbone_blocks", c.n_backbone_blocks);
    c.roi_size = doc.value("roi_size", c.roi_size);
    c.sampling_ratio = doc.value("sampling_ratio", c.sampling_ratio);
    c.roi_stage = doc.value("roi_stage", c.roi_stage);
    c.num_classes = doc.value("num_classes", c.num_classes);
    c.spectral_norm = doc.value("spectral_norm", c.spectral_norm);
    c.init_seed = doc.value("init_seed", c.init_seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kMalformedDocument, std::string("discriminator config: ") + e.what());
  }
  c.validate();
  return c;
}

Discriminator::Discriminator(DiscriminatorConfig config) : config_(std::move(config)) {
  config_.validate();
  PhiloxStream rng(config_.init_seed, 0x444953ull);
  const bool sn = config_.spectral_norm;
  int in = 3;
  for (int b = 0; b < config_.n_backbone_blocks; ++b) {
    const int out = config_.block_out_channels(b);
    DiscriminatorBlock block;
    block.first = b == 0;
    block.conv1 = Conv2d(in, out, 3, rng, sn);
    block.conv2 = Conv2d(out, out, 3, rng, sn);
    block.shortcut = Conv2d(in, out, 1, rng, sn);
    blocks_.push_back(std::move(block));
    in = out;
  }
  image_block_.downsample = false;
  image_block_.learned_shortcut = false;
  image_block_.conv1 = Conv2d(in, in, 3, rng, sn);
  image_block_.conv2 = Conv2d(in, in, 3, rng, sn);
  image_fc_ = Linear(in, 1, rng, true, sn);
  const int roi_channels = config_.d_e_disc();
  object_fc_ = Linear(roi_channels, 1, rng, true, sn);
  embedding_ = Embedding(config_.num_classes, roi_channels, rng, sn);
}

ag::Var Discriminator::block_forward(DiscriminatorBlock& block, const ag::Var& x, bool training) {
  ag::Var main = block.first ? x : ag::relu(x);
  main = block.conv1.forward(main, training);
  main = block.conv2.forward(ag::relu(main), training);
  if (block.downsample) main = ag::avg_pool2x(main);
  ag::Var skip = x;
  if (block.learned_shortcut) {
    if (block.first) {
      skip = block.shortcut.forward(block.downsample ? ag::avg_pool2x(x) : x, training);
    } else {
      skip = block.shortcut.forward(x, training);
      if (block.downsample) skip = ag::avg_pool2x(skip);
    }
  }
  return ag::add(main, skip);
}

Discriminator::Features Discriminator::backbone(const ag::Var& image, bool training) {
  if (image.value().rank() != 4 || image.dim(1) != config_.lattice || image.dim(2) != config_.lattice ||
      image.dim(3) != 3) {
    throw Error(ErrorCode::kShapeMismatch, "discriminator expects N x " + std::to_string(config_.lattice) + " x " +
                                               std::to_string(config_.lattice) + " x 3, got " +
                                               shape_string(image.shape()));
  }
  Features f;
  const int stage = config_.resolved_roi_stage();
  ag::Var h = image;
  for (int b = 0; b < static_cast<int>(blocks_.size()); ++b) {
    h = block_forward(blocks_[static_cast<std::size_t>(b)], h, training);
    if (b == stage) f.roi_stage = h;
  }
  f.last = h;
  return f;
}

ag::Var Discriminator::object_features(const ag::Var& roi_stage_features,
                                       const std::vector<isla::ObjectPlacement>& objects) {
  ag::Var crops = roi_align(roi_stage_features, objects, config_.roi_size, config_.sampling_ratio);
  return ag::global_avg_pool(crops);
}

DiscriminatorScores Discriminator::score(const ag::Var& image, const std::vector<Layout>& layouts, bool training) {
  const std::int64_t n = image.value().rank() == 4 ? image.dim(0) : -1;
  if (n != static_cast<std::int64_t>(layouts.size())) {
    throw Error(ErrorCode::kShapeMismatch, "one layout per image required");
  }
  std::vector<std::int64_t> labels;
  DiscriminatorScores out;
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    if (layouts[i].objects.empty()) {
      throw Error(ErrorCode::kEmptyObjectSet, "sample " + std::to_string(i) + " has no objects");
    }
    for (const auto& obj : layouts[i].objects) {
      labels.push_back(obj.label);
      out.object_sample.push_back(static_cast<std::int64_t>(i));
    }
  }
  Features f = backbone(image, training);

  ag::Var h = ag::relu(block_forward(image_block_, f.last, training));
  out.s_img = ag::reshape(image_fc_.forward(ag::global_avg_pool(h), training), {n});

  ag::Var feats = object_features(f.roi_stage, isla::placements_for(layouts));
  const auto r = static_cast<std::int64_t>(labels.size());
  ag::Var unconditional = ag::reshape(object_fc_.forward(feats, training), {r});
  ag::Var projection = ag::rows_dot(embedding_.lookup(labels, training), feats);
  out.s_obj_each = ag::add(unconditional, projection);
  out.s_obj = ag::segment_mean(out.s_obj_each, out.object_sample, n);
  return out;
}

ParameterSet Discriminator::parameters() {
  ParameterSet set;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "d.block" + std::to_string(b);
    blocks_[b].conv1.collect(set, p + ".conv1");
    blocks_[b].conv2.collect(set, p + ".conv2");
    blocks_[b].shortcut.collect(set, p + ".shortcut");
  }
  image_block_.conv1.collect(set, "d.image_block.conv1");
  image_block_.conv2.collect(set, "d.image_block.conv2");
  image_fc_.collect(set, "d.image_fc");
  object_fc_.collect(set, "d.object_fc");
  embedding_.collect(set, "d.embedding");
  return set;
}

}  // namespace lostgan
