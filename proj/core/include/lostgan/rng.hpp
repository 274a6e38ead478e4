#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace lostgan {

// Philox4x32-10 counter-based generator (Salmon et al., "Parallel random
// numbers: as easy as 1, 2, 3"). Output is a pure function of (counter, key),
// so any draw can be recomputed without replaying a sequence.
//
// Derived streams used throughout the project:
//   key     = (seed & 0xffffffff, seed >> 32)
//   counter = (block & 0xffffffff, block >> 32, stream & 0xffffffff, stream >> 32)
// Uniforms take 53 bits from two consecutive words w0, w1:
//   u = (((w0 << 21) ^ (w1 >> 11)) + 0.5) * 2^-53, which lies in (0, 1).
// Normals use Box-Muller on the block's two uniforms (u1 from words 0-1, u2 from
// words 2-3): z0 = sqrt(-2 ln u1) cos(2 pi u2), z1 = sqrt(-2 ln u1) sin(2 pi u2).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter counter, Key key) noexcept;
};

// Sequential view over one (seed, stream) pair of Philox blocks.
class PhiloxStream {
 public:
  PhiloxStream(std::uint64_t seed, std::uint64_t stream) noexcept;

  std::uint32_t next_u32() noexcept;
  // Uniform in the open interval (0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  double normal() noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Philox4x32::Counter buffer_{};
  int word_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

// n standard normals of stream `stream` under `seed`; identical to calling
// PhiloxStream::normal() n times on a fresh stream.
std::vector<double> normal_vector(std::uint64_t seed, std::uint64_t stream, std::size_t n);

// Deterministic Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::uint64_t stream);

// Mix a parent seed with a tag into a child seed (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept;

}  // namespace lostgan
