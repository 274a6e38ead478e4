#include "lostgan/isla_norm.hpp"

#include <algorithm>
#include <cmath>

#include "lostgan/error.hpp"
#include "lostgan/ops.hpp"

namespace lostgan::isla {
namespace {

int round_edge(double v, int size) {
  const int cell = static_cast<int>(std::floor(v * size + 0.5));
  return std::clamp(cell, 0, size);
}

// Bilinear taps from one mask (rows x cols) into the cells of an extent.
struct CellTap {
  int cell;                 // y * width + x within the sample
  std::int64_t index[4];    // flat offsets into the object's mask
  double weight[4];
};

struct AxisTap {
  int lo, hi;
  double frac;
};

std::vector<AxisTap> resize_taps(int source, int target) {
  std::vector<AxisTap> taps(static_cast<std::size_t>(target));
  for (int o = 0; o < target; ++o) {
    double src = (o + 0.5) * static_cast<double>(source) / target - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(source - 1));
    int lo = static_cast<int>(std::floor(src));
    lo = std::min(lo, source - 1);
    const int hi = std::min(lo + 1, source - 1);
    taps[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
  }
  return taps;
}

std::vector<CellTap> object_taps(const CellExtent& ext, int mask_rows, int mask_cols, int width) {
  std::vector<CellTap> taps;
  if (ext.empty()) return taps;
  const auto ty = resize_taps(mask_rows, ext.height());
  const auto tx = resize_taps(mask_cols, ext.width());
  taps.reserve(static_cast<std::size_t>(ext.height()) * ext.width());
  for (int r = 0; r < ext.height(); ++r) {
    const AxisTap& a = ty[static_cast<std::size_t>(r)];
    for (int c = 0; c < ext.width(); ++c) {
      const AxisTap& b = tx[static_cast<std::size_t>(c)];
      CellTap t{};
      t.cell = (ext.y0 + r) * width + (ext.x0 + c);
      t.index[0] = static_cast<std::int64_t>(a.lo) * mask_cols + b.lo;
      t.index[1] = static_cast<std::int64_t>(a.lo) * mask_cols + b.hi;
      t.index[2] = static_cast<std::int64_t>(a.hi) * mask_cols + b.lo;
      t.index[3] = static_cast<std::int64_t>(a.hi) * mask_cols + b.hi;
      t.weight[0] = (1.0 - a.frac) * (1.0 - b.frac);
      t.weight[1] = (1.0 - a.frac) * b.frac;
      t.weight[2] = a.frac * (1.0 - b.frac);
      t.weight[3] = a.frac * b.frac;
      taps.push_back(t);
    }
  }
  return taps;
}

double tap_value(const CellTap& t, const double* mask) {
  return t.weight[0] * mask[t.index[0]] + t.weight[1] * mask[t.index[1]] + t.weight[2] * mask[t.index[2]] +
         t.weight[3] * mask[t.index[3]];
}

// Selects x[k] along the leading axis.
ag::Var take_leading(const ag::Var& x, std::int64_t k) {
  Shape inner(x.shape().begin() + 1, x.shape().end());
  const std::int64_t block = numel_of(inner);
  Tensor out(inner);
  std::copy_n(x.value().data() + k * block, block, out.data());
  return ag::make_result(std::move(out), {x}, [k, block](ag::Node& self) {
    double* g = self.inputs[0]->grad_buffer().data() + k * block;
    for (std::int64_t i = 0; i < block; ++i) g[i] += self.grad[i];
  });
}

}  // namespace

CellExtent cell_extent(const BBox& box, int height, int width) {
  return {round_edge(box.y, height), round_edge(box.y + box.h, height), round_edge(box.x, width),
          round_edge(box.x + box.w, width)};
}

std::vector<ObjectPlacement> placements_for(const std::vector<Layout>& layouts) {
  std::vector<ObjectPlacement> out;
  for (std::size_t n = 0; n < layouts.size(); ++n)
    for (const auto& obj : layouts[n].objects) out.push_back({static_cast<std::int64_t>(n), obj.bbox});
  return out;
}

ag::Var embed_instances(const ag::Var& table, const std::vector<std::int64_t>& labels, const ag::Var& z_obj) {
  if (z_obj.value().rank() != 2 || z_obj.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "z_obj " + shape_string(z_obj.shape()) + " for " +
                                                   std::to_string(labels.size()) + " labels");
  }
  for (auto l : labels) {
    if (l < 0 || l >= table.dim(0)) {
      throw Error(ErrorCode::kUnknownLabel, "label " + std::to_string(l) + " outside embedding table of " +
                                                std::to_string(table.dim(0)));
    }
  }
  return ag::concat_cols(ag::gather_rows(table, labels), z_obj);
}

InstanceAffine project_affine(const ag::Var& embedding, const ag::Var& weight, const ag::Var& bias) {
  if (weight.value().rank() != 2 || embedding.value().rank() != 2 || embedding.dim(1) != weight.dim(0) ||
      weight.dim(1) % 2 != 0 || (bias.defined() && bias.value().numel() != weight.dim(1))) {
    throw Error(ErrorCode::kDimensionMismatch, "project_affine: embedding " + shape_string(embedding.shape()) +
                                                   ", weight " + shape_string(weight.shape()));
  }
  const std::int64_t c = weight.dim(1) / 2;
  ag::Var both = ag::linear(embedding, weight, bias);
  return {ag::slice_cols(both, 0, c), ag::slice_cols(both, c, c)};
}

AffineMapVars compose_affine_maps(const ag::Var& gamma, const ag::Var& beta, const ag::Var& masks,
                                  const std::vector<ObjectPlacement>& objects, std::int64_t samples, int height,
                                  int width, OverlapRule rule) {
  const auto m = static_cast<std::int64_t>(objects.size());
  if (height < 1 || width < 1 || samples < 1) throw Error(ErrorCode::kInvalidArgument, "empty stage");
  if (gamma.value().rank() != 2 || gamma.shape() != beta.shape() || gamma.dim(0) != m) {
    throw Error(ErrorCode::kShapeMismatch, "gamma/beta " + shape_string(gamma.shape()) + "/" +
                                               shape_string(beta.shape()) + " for " + std::to_string(m) + " objects");
  }
  if (masks.value().rank() != 3 || masks.dim(0) != m) {
    throw Error(ErrorCode::kShapeMismatch, "masks " + shape_string(masks.shape()) + " for " + std::to_string(m) + " objects");
  }
  const std::int64_t c = gamma.dim(1);
  const int mrows = static_cast<int>(masks.dim(1));
  const int mcols = static_cast<int>(masks.dim(2));
  const std::int64_t mask_block = static_cast<std::int64_t>(mrows) * mcols;
  const std::int64_t cells = static_cast<std::int64_t>(height) * width;

  AffineMapVars result;
  result.coverage.assign(static_cast<std::size_t>(samples * cells), 0);
  std::vector<std::vector<CellTap>> taps(static_cast<std::size_t>(m));
  std::vector<std::vector<double>> weights(static_cast<std::size_t>(m));
  std::vector<double> denom(static_cast<std::size_t>(samples * cells), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    const auto& obj = objects[static_cast<std::size_t>(i)];
    if (obj.sample < 0 || obj.sample >= samples) throw Error(ErrorCode::kIndexOutOfRange, "object sample index");
    const CellExtent ext = cell_extent(obj.bbox, height, width);
    if (ext.empty()) {
      result.degenerate.push_back(i);
      continue;
    }
    auto& t = taps[static_cast<std::size_t>(i)];
    t = object_taps(ext, mrows, mcols, width);
    auto& w = weights[static_cast<std::size_t>(i)];
    w.resize(t.size());
    const double* mask = masks.value().data() + i * mask_block;
    for (std::size_t k = 0; k < t.size(); ++k) {
      w[k] = tap_value(t[k], mask);
      const auto cell = static_cast<std::size_t>(obj.sample * cells + t[k].cell);
      result.coverage[cell] += 1;
      denom[cell] += rule == OverlapRule::kCoverageCount ? 1.0 : w[k];
    }
  }

  if (rule == OverlapRule::kMaskWeightSum) {
    for (std::size_t cell = 0; cell < denom.size(); ++cell)
      if (result.coverage[cell] > 0) denom[cell] = std::max(denom[cell], 1e-12);
  }

  // Combined [2, N, H, W, C]: gamma map then beta map.
  const std::int64_t plane = samples * cells * c;
  Tensor both({2, samples, height, width, c});
  for (std::int64_t i = 0; i < 2 * plane; ++i) both[i] = 0.0;
  const double* g = gamma.value().data();
  const double* b = beta.value().data();
  for (std::int64_t i = 0; i < m; ++i) {
    const auto& t = taps[static_cast<std::size_t>(i)];
    const auto& w = weights[static_cast<std::size_t>(i)];
    const std::int64_t sample = objects[static_cast<std::size_t>(i)].sample;
    for (std::size_t k = 0; k < t.size(); ++k) {
      const std::int64_t cell = sample * cells + t[k].cell;
      const double scale = w[k] / denom[static_cast<std::size_t>(cell)];
      double* gout = both.data() + cell * c;
      double* bout = both.data() + plane + cell * c;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        gout[ch] += scale * g[i * c + ch];
        bout[ch] += scale * b[i * c + ch];
      }
    }
  }
  for (std::int64_t cell = 0; cell < samples * cells; ++cell) {
    if (result.coverage[static_cast<std::size_t>(cell)] == 0) {
      std::fill_n(both.data() + cell * c, c, 1.0);
    }
  }

  std::vector<std::int64_t> sample_of(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) sample_of[static_cast<std::size_t>(i)] = objects[static_cast<std::size_t>(i)].sample;

  ag::Var combined = ag::make_result(
      std::move(both), {gamma, beta, masks},
      [taps, weights, denom, sample_of, rule, c, cells, plane, mask_block](ag::Node& self) {
        const double* dgam = self.grad.data();
        const double* dbet = self.grad.data() + plane;
        const double* gmap = self.value.data();
        const double* bmap = self.value.data() + plane;
        auto& gin = *self.inputs[0];
        auto& bin = *self.inputs[1];
        auto& min = *self.inputs[2];
        const bool want_g = gin.requires_grad, want_b = bin.requires_grad, want_m = min.requires_grad;
        double* gg = want_g ? gin.grad_buffer().data() : nullptr;
        double* gb = want_b ? bin.grad_buffer().data() : nullptr;
        double* gm = want_m ? min.grad_buffer().data() : nullptr;
        const double* gv = gin.value.data();
        const double* bv = bin.value.data();
        for (std::size_t i = 0; i < taps.size(); ++i) {
          const auto& t = taps[i];
          const auto& w = weights[i];
          const auto oi = static_cast<std::int64_t>(i);
          for (std::size_t k = 0; k < t.size(); ++k) {
            const std::int64_t cell = sample_of[i] * cells + t[k].cell;
            const double d = denom[static_cast<std::size_t>(cell)];
            const double* dG = dgam + cell * c;
            const double* dB = dbet + cell * c;
            const double scale = w[k] / d;
            double dw = 0.0;
            for (std::int64_t ch = 0; ch < c; ++ch) {
              if (gg) gg[oi * c + ch] += scale * dG[ch];
              if (gb) gb[oi * c + ch] += scale * dB[ch];
              dw += gv[oi * c + ch] * dG[ch] + bv[oi * c + ch] * dB[ch];
              if (rule == OverlapRule::kMaskWeightSum) {
                dw -= gmap[cell * c + ch] * dG[ch] + bmap[cell * c + ch] * dB[ch];
              }
            }
            if (gm) {
              dw /= d;
              double* mg = gm + oi * mask_block;
              for (int q = 0; q < 4; ++q) mg[t[k].index[q]] += t[k].weight[q] * dw;
            }
          }
        }
      });
  result.gamma = take_leading(combined, 0);
  result.beta = take_leading(combined, 1);
  return result;
}

std::vector<std::vector<double>> mask_weights(const Tensor& masks, const std::vector<BBox>& boxes, int height,
                                              int width) {
  if (masks.rank() != 3 || masks.dim(0) != static_cast<std::int64_t>(boxes.size())) {
    throw Error(ErrorCode::kShapeMismatch, "masks " + shape_string(masks.shape()) + " for " +
                                               std::to_string(boxes.size()) + " boxes");
  }
  const int mrows = static_cast<int>(masks.dim(1));
  const int mcols = static_cast<int>(masks.dim(2));
  std::vector<std::vector<double>> out(boxes.size(), std::vector<double>(static_cast<std::size_t>(height) * width, 0.0));
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const double* mask = masks.data() + static_cast<std::int64_t>(i) * mrows * mcols;
    for (const auto& t : object_taps(cell_extent(boxes[i], height, width), mrows, mcols, width)) {
      out[i][static_cast<std::size_t>(t.cell)] = tap_value(t, mask);
    }
  }
  return out;
}

AffineMaps compose_affine_maps(const Tensor& gamma, const Tensor& beta, const Tensor& masks, const Layout& layout,
                               int height, int width, OverlapRule rule) {
  ag::NoGradGuard no_grad;
  std::vector<ObjectPlacement> objects;
  for (const auto& obj : layout.objects) objects.push_back({0, obj.bbox});
  auto vars = compose_affine_maps(ag::Var(gamma), ag::Var(beta), ag::Var(masks), objects, 1, height, width, rule);
  const std::int64_t c = gamma.dim(1);
  return {vars.gamma.value().reshaped({height, width, c}), vars.beta.value().reshaped({height, width, c}),
          std::move(vars.coverage), std::move(vars.degenerate)};
}

ag::Var isla_normalize(const ag::Var& x, const ag::Var& gamma_map, const ag::Var& beta_map, RunningStats& stats,
                       bool training, double eps) {
  if (x.shape() != gamma_map.shape() || x.shape() != beta_map.shape()) {
    throw Error(ErrorCode::kShapeMismatch, "features " + shape_string(x.shape()) + " vs affine maps " +
                                               shape_string(gamma_map.shape()));
  }
  ag::Var xhat = normalize_features(x, stats, training, eps);
  return ag::add(ag::mul(xhat, gamma_map), beta_map);
}

std::vector<int> semantic_map(const Tensor& masks, const Layout& layout, int height, int width) {
  std::vector<BBox> boxes;
  for (const auto& obj : layout.objects) boxes.push_back(obj.bbox);
  const auto weights = mask_weights(masks, boxes, height, width);
  std::vector<int> coverage(static_cast<std::size_t>(height) * width, 0);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const CellExtent ext = cell_extent(boxes[i], height, width);
    for (int y = ext.y0; y < ext.y1; ++y)
      for (int x = ext.x0; x < ext.x1; ++x) coverage[static_cast<std::size_t>(y) * width + x] += 1;
  }
  std::vector<int> labels(coverage.size(), kBackgroundLabel);
  for (std::size_t cell = 0; cell < labels.size(); ++cell) {
    if (coverage[cell] == 0) continue;
    double best = -1.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const CellExtent ext = cell_extent(boxes[i], height, width);
      const int y = static_cast<int>(cell) / width, x = static_cast<int>(cell) % width;
      if (!ext.contains(y, x)) continue;
      if (weights[i][cell] > best) {
        best = weights[i][cell];
        labels[cell] = layout.objects[i].label;
      }
    }
  }
  return labels;
}

MaskNet::MaskNet(int embed_width, int channels_, int mask_size_, PhiloxStream& rng)
    : channels(channels_), mask_size(mask_size_) {
  if (mask_size < 4 || (mask_size & (mask_size - 1)) != 0) {
    throw Error(ErrorCode::kInvalidArgument, "mask size must be a power of two >= 4");
  }
  seed = Linear(embed_width, 16 * channels, rng);
  for (int side = 4; side < mask_size; side *= 2) stages.emplace_back(channels, channels, 3, rng);
  head = Conv2d(channels, 1, 3, rng);
}

ag::Var MaskNet::forward(const ag::Var& embedding) {
  const std::int64_t m = embedding.dim(0);
  ag::Var h = ag::relu(ag::reshape(seed.forward(embedding, true), {m, 4, 4, channels}));
  for (auto& stage : stages) h = ag::relu(stage.forward(ag::upsample2x(h), true));
  ag::Var logits = head.forward(h, true);
  return ag::reshape(ag::sigmoid(logits), {m, mask_size, mask_size});
}

void MaskNet::collect(ParameterSet& set, const std::string& prefix) {
  seed.collect(set, prefix + ".seed");
  for (std::size_t i = 0; i < stages.size(); ++i) stages[i].collect(set, prefix + ".stage" + std::to_string(i));
  head.collect(set, prefix + ".head");
}

IslaNorm::IslaNorm(int embed_width, int channels_, PhiloxStream& rng, double weight_scale)
    : channels(channels_), stats(channels_) {
  Tensor w = weight_scale > 0.0 ? orthogonal({embed_width, 2 * channels}, rng, weight_scale)
                                : Tensor({embed_width, 2 * channels});
  weight = ag::Var(std::move(w), true);
  Tensor b({2 * channels}, 0.0);
  for (int ch = 0; ch < channels; ++ch) b[ch] = 1.0;
  bias = ag::Var(std::move(b), true);
}

IslaNorm::Output IslaNorm::forward(const ag::Var& x, const ag::Var& embedding, const ag::Var& masks,
                                   const std::vector<ObjectPlacement>& objects, bool training) {
  if (x.value().rank() != 4 || x.dim(3) != channels) {
    throw Error(ErrorCode::kShapeMismatch, "ISLA-Norm site has " + std::to_string(channels) +
                                               " channels, input is " + shape_string(x.shape()));
  }
  InstanceAffine aff = project_affine(embedding, weight, bias);
  Output out;
  out.maps = compose_affine_maps(aff.gamma, aff.beta, masks, objects, x.dim(0), static_cast<int>(x.dim(1)),
                                 static_cast<int>(x.dim(2)), rule);
  out.y = isla_normalize(x, out.maps.gamma, out.maps.beta, stats, training);
  return out;
}

void IslaNorm::collect(ParameterSet& set, const std::string& prefix) {
  set.add(prefix + ".weight", weight);
  set.add(prefix + ".bias", bias);
  set.add_buffer(prefix + ".running_mean", &stats.mean);
  set.add_buffer(prefix + ".running_var", &stats.var);
}

}  // namespace lostgan::isla
