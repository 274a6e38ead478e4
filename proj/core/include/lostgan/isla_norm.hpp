#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lostgan/autograd.hpp"
#include "lostgan/layers.hpp"
#include "lostgan/layout.hpp"

// Instance-specific, layout-aware normalisation: batch-statistics
// normalisation followed by a per-sample, per-pixel affine recalibration
// whose gamma/beta maps are assembled from per-object projections, placed in
// each object's box and weighted by a predicted soft mask.
namespace lostgan::isla {

enum class OverlapRule {
  kCoverageCount,   // divide the weighted sum by the number of covering boxes
  kMaskWeightSum,   // divide by the sum of mask weights at the cell
};

// One object of a batch: which sample it belongs to and where its box is.
struct ObjectPlacement {
  std::int64_t sample = 0;
  BBox bbox;
};

// Integer cell extent [y0, y1) x [x0, x1) of a box at an H x W stage: the
// normalised edges are rounded to the nearest cell boundary and clamped, so a
// cell belongs to the box when its centre lies inside the rounded box.
struct CellExtent {
  int y0 = 0, y1 = 0, x0 = 0, x1 = 0;

  int height() const noexcept { return y1 - y0; }
  int width() const noexcept { return x1 - x0; }
  bool empty() const noexcept { return y1 <= y0 || x1 <= x0; }
  bool contains(int y, int x) const noexcept { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

CellExtent cell_extent(const BBox& box, int height, int width);

std::vector<ObjectPlacement> placements_for(const std::vector<Layout>& layouts);

// Row i = concat(table[label_i], z_obj_i): m x (d_e + d_noise).
ag::Var embed_instances(const ag::Var& table, const std::vector<std::int64_t>& labels, const ag::Var& z_obj);

struct InstanceAffine {
  ag::Var gamma;  // m x C
  ag::Var beta;   // m x C
};

// (gamma | beta) = embedding * weight + bias, split at C = weight.cols / 2.
InstanceAffine project_affine(const ag::Var& embedding, const ag::Var& weight, const ag::Var& bias);

struct AffineMapVars {
  ag::Var gamma;  // N x H x W x C
  ag::Var beta;   // N x H x W x C
  std::vector<int> coverage;        // N x H x W box counts
  std::vector<std::int64_t> degenerate;  // objects whose extent rounds to zero cells
};

// Places every object's (gamma, beta) in its box at the stage resolution,
// weighted by the object's mask bilinearly resized to the box extent. Covered
// cells take the weighted sum divided by the overlap rule's denominator;
// uncovered cells are exactly (1, 0). Differentiable in gamma, beta and masks.
AffineMapVars compose_affine_maps(const ag::Var& gamma, const ag::Var& beta, const ag::Var& masks,
                                  const std::vector<ObjectPlacement>& objects, std::int64_t samples,
                                  int height, int width, OverlapRule rule = OverlapRule::kCoverageCount);

// Mask weight of each object at each cell (0 outside the footprint):
// result[i][y * width + x].
std::vector<std::vector<double>> mask_weights(const Tensor& masks, const std::vector<BBox>& boxes, int height,
                                              int width);

// Single-layout convenience form with plain tensors.
struct AffineMaps {
  Tensor gamma;  // H x W x C
  Tensor beta;   // H x W x C
  std::vector<int> coverage;  // H x W
  std::vector<std::int64_t> degenerate;
};

AffineMaps compose_affine_maps(const Tensor& gamma, const Tensor& beta, const Tensor& masks, const Layout& layout,
                               int height, int width, OverlapRule rule = OverlapRule::kCoverageCount);

// x_hat * Gamma + Beta with x_hat from batch statistics (training) or the
// tracked statistics (evaluation).
ag::Var isla_normalize(const ag::Var& x, const ag::Var& gamma_map, const ag::Var& beta_map, RunningStats& stats,
                       bool training, double eps = kNormEpsilon);

inline constexpr int kBackgroundLabel = -1;

// Per-pixel label of the object with the highest mask weight; ties go to the
// lowest object index; uncovered pixels get kBackgroundLabel. masks: m x s x s.
std::vector<int> semantic_map(const Tensor& masks, const Layout& layout, int height, int width);

// Soft-mask predictor: embedding -> 4x4 map via a linear layer, then
// (x2 bilinear upsample, 3x3 conv, ReLU) stages until s x s, then a 1-channel
// 3x3 conv and a sigmoid.
struct MaskNet {
  Linear seed;
  std::vector<Conv2d> stages;
  Conv2d head;
  int channels = 0;
  int mask_size = 16;

  MaskNet() = default;
  MaskNet(int embed_width, int channels, int mask_size, PhiloxStream& rng);
  // embedding: m x embed_width -> m x s x s, values in (0, 1)
  ag::Var forward(const ag::Var& embedding);
  void collect(ParameterSet& set, const std::string& prefix);
};

// One normalisation site. Every site owns its projection and running
// statistics; label embedding and masks are shared across sites.
struct IslaNorm {
  int channels = 0;
  ag::Var weight;  // (d_e + d_noise) x 2C
  ag::Var bias;    // 2C, initialised to (1..1 | 0..0)
  RunningStats stats;
  OverlapRule rule = OverlapRule::kCoverageCount;

  IslaNorm() = default;
  IslaNorm(int embed_width, int channels, PhiloxStream& rng, double weight_scale = 0.2);

  struct Output {
    ag::Var y;
    AffineMapVars maps;
  };
  Output forward(const ag::Var& x, const ag::Var& embedding, const ag::Var& masks,
                 const std::vector<ObjectPlacement>& objects, bool training);
  void collect(ParameterSet& set, const std::string& prefix);
};

}  // namespace lostgan::isla
