#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "lostgan/isla_norm.hpp"
#include "lostgan/layers.hpp"
#include "lostgan/layout.hpp"

namespace lostgan {

struct GeneratorConfig {
  int ch = 64;
  int n_blocks = 4;       // output side = 4 * 2^n_blocks
  int d_noise = 128;      // z_img length
  int d_obj_noise = 128;  // z_obj length
  int d_e = 128;          // label embedding width
  int mask_size = 16;
  int mask_channels = 64;
  int num_classes = 171;
  double projection_gain = 0.2;  // orthogonal gain of each ISLA projection
  isla::OverlapRule overlap = isla::OverlapRule::kCoverageCount;
  std::uint64_t init_seed = 1;

  int output_side() const noexcept { return 4 << n_blocks; }
  // 16*ch, then halved per block with a floor at ch.
  int block_out_channels(int block) const noexcept;
  void validate() const;

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& doc);
};

// Batched generator inputs in tensor form.
struct StyleBatch {
  Tensor z_img;  // N x d_noise
  Tensor z_obj;  // total objects x d_obj_noise, grouped by sample
};

StyleBatch make_style_batch(const std::vector<StyleState>& styles);

struct StageMaps {
  int height = 0;
  int width = 0;
  Tensor gamma;  // N x H x W x C
  Tensor beta;
  std::vector<int> coverage;
};

struct GeneratorOutput {
  ag::Var image;  // N x S x S x 3 in [-1, 1]
  ag::Var masks;  // total objects x s x s
  std::vector<StageMaps> maps;  // every ISLA site, when retained
};

struct GeneratorBlock {
  isla::IslaNorm norm1, norm2;
  Conv2d conv1, conv2, shortcut;
};

class Generator {
 public:
  explicit Generator(GeneratorConfig config);

  const GeneratorConfig& config() const noexcept { return config_; }

  // Linear map of z_img to a 4 x 4 x 16ch feature map: N x d_noise -> N x 4 x 4 x 16ch.
  ag::Var seed_features(const ag::Var& z_img);

  GeneratorOutput forward(const std::vector<Layout>& layouts, const StyleBatch& styles, bool training,
                          bool retain_maps = false);
  GeneratorOutput generate(const std::vector<Layout>& layouts, const std::vector<StyleState>& styles,
                           bool training = false, bool retain_maps = false);

  // Frames with z_obj[object] = (1 - t) z_a + t z_b, t evenly spaced in [0, 1].
  std::vector<GeneratorOutput> interpolate_object_style(const Layout& layout, const StyleState& style, int object,
                                                        const std::vector<double>& z_a,
                                                        const std::vector<double>& z_b, int steps,
                                                        bool retain_maps = false);

  ParameterSet parameters();

  Linear& fc() { return fc_; }
  Embedding& label_embedding() { return embedding_; }
  isla::MaskNet& mask_net() { return mask_net_; }
  std::vector<GeneratorBlock>& blocks() { return blocks_; }

 private:
  GeneratorConfig config_;
  Linear fc_;
  Embedding embedding_;
  isla::MaskNet mask_net_;
  std::vector<GeneratorBlock> blocks_;
  BatchNorm final_norm_;
  Conv2d final_conv_;
};

}  // namespace lostgan
