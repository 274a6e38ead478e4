#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "lostgan/isla_norm.hpp"
#include "lostgan/layers.hpp"
#include "lostgan/layout.hpp"

namespace lostgan {

struct DiscriminatorConfig {
  int ch = 64;
  int lattice = 64;           // input side
  int n_backbone_blocks = 4;  // each halves the resolution
  int roi_size = 8;
  int sampling_ratio = 2;
  int roi_stage = -1;         // backbone block feeding ROI Align; -1 selects lattice / 4
  int num_classes = 171;
  bool spectral_norm = true;
  std::uint64_t init_seed = 2;

  int block_out_channels(int block) const noexcept;
  // Resolved ROI stage index.
  int resolved_roi_stage() const noexcept;
  // Label-embedding width; equals the channel count at the ROI stage.
  int d_e_disc() const noexcept { return block_out_channels(resolved_roi_stage()); }
  void validate() const;

  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& doc);
};

struct DiscriminatorScores {
  ag::Var s_img;         // N
  ag::Var s_obj;         // N, mean over each sample's objects
  ag::Var s_obj_each;    // R, one per object
  std::vector<std::int64_t> object_sample;  // sample index of each object
};

struct DiscriminatorBlock {
  Conv2d conv1, conv2, shortcut;
  bool downsample = true;
  bool first = false;
  bool learned_shortcut = true;
};

class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig config);

  const DiscriminatorConfig& config() const noexcept { return config_; }

  // image: N x lattice x lattice x 3; one layout per sample.
  DiscriminatorScores score(const ag::Var& image, const std::vector<Layout>& layouts, bool training);

  // Intermediate maps for inspection and oracle tests.
  struct Features {
    ag::Var roi_stage;  // N x h x w x C at the ROI stage
    ag::Var last;       // backbone output
  };
  Features backbone(const ag::Var& image, bool training);

  // f_i = global average of ROI-aligned stage features, one row per object.
  ag::Var object_features(const ag::Var& roi_stage_features, const std::vector<isla::ObjectPlacement>& objects);

  ParameterSet parameters();

  std::vector<DiscriminatorBlock>& blocks() { return blocks_; }
  DiscriminatorBlock& image_block() { return image_block_; }
  Linear& image_fc() { return image_fc_; }
  Linear& object_fc() { return object_fc_; }
  Embedding& label_embedding() { return embedding_; }

 private:
  ag::Var block_forward(DiscriminatorBlock& block, const ag::Var& x, bool training);

  DiscriminatorConfig config_;
  std::vector<DiscriminatorBlock> blocks_;
  DiscriminatorBlock image_block_;
  Linear image_fc_;
  Linear object_fc_;
  Embedding embedding_;
};

}  // namespace lostgan
