#include <benchmark/benchmark.h>

#include "lostgan/generator.hpp"
#include "lostgan/isla_norm.hpp"
#include "lostgan/ops.hpp"
#include "test_support.hpp"

using namespace lostgan;
using lostgan::testing::random_layout;
using lostgan::testing::random_tensor;
using lostgan::testing::uniform_tensor;

namespace {

// Args: spatial side, channels (in = out).
void BM_Conv2dForward(benchmark::State& state) {
  const auto side = state.range(0), ch = state.range(1);
  PhiloxStream rng(1, 0);
  const ag::Var x(random_tensor({8, side, side, ch}, rng));
  const ag::Var w(random_tensor({3, 3, ch, ch}, rng, 0.1));
  const ag::Var b(Tensor({ch}, 0.0));
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ag::conv2d(x, w, b, 1));
  state.SetItemsProcessed(state.iterations() * 8 * side * side * ch * ch * 9);
}
BENCHMARK(BM_Conv2dForward)->Args({16, 32})->Args({32, 32})->Args({32, 64})->Unit(benchmark::kMillisecond);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto side = state.range(0), ch = state.range(1);
  PhiloxStream rng(2, 0);
  ag::Var x(random_tensor({8, side, side, ch}, rng), true);
  ag::Var w(random_tensor({3, 3, ch, ch}, rng, 0.1), true);
  ag::Var b(Tensor({ch}, 0.0), true);
  for (auto _ : state) {
    ag::backward(ag::sum(ag::conv2d(x, w, b, 1)));
    benchmark::DoNotOptimize(w.grad());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({16, 32})->Args({32, 32})->Unit(benchmark::kMillisecond);

// Args: objects, map side, channels.
void BM_ComposeAffineMaps(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const auto ch = state.range(2);
  PhiloxStream rng(3, 0);
  const auto layout = random_layout(rng, m, side, 8, 0.1, 0.6);
  const Tensor gamma = random_tensor({m, ch}, rng), beta = random_tensor({m, ch}, rng);
  const Tensor masks = uniform_tensor({m, 16, 16}, rng, 0.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(isla::compose_affine_maps(gamma, beta, masks, layout, side, side));
}
BENCHMARK(BM_ComposeAffineMaps)->Args({3, 16, 32})->Args({8, 32, 64})->Args({8, 64, 128})->Unit(benchmark::kMicrosecond);

// Args: blocks, base channels.
void BM_GeneratorForward(benchmark::State& state) {
  GeneratorConfig c;
  c.n_blocks = static_cast<int>(state.range(0));
  c.ch = static_cast<int>(state.range(1));
  c.d_noise = c.d_obj_noise = c.d_e = 32;
  c.mask_channels = 16;
  c.num_classes = 8;
  Generator g(c);
  PhiloxStream rng(4, 0);
  std::vector<Layout> layouts;
  std::vector<StyleState> styles;
  for (int i = 0; i < 4; ++i) {
    layouts.push_back(random_layout(rng, 4, c.output_side(), 8));
    styles.push_back(sample_style(4, c.d_noise, c.d_obj_noise, static_cast<std::uint64_t>(i)));
  }
  for (auto _ : state) benchmark::DoNotOptimize(g.generate(layouts, styles));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_GeneratorForward)->Args({3, 8})->Args({4, 8})->Args({4, 16})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
