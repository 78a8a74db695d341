#pragma once

#include <cstdint>

namespace mesp {

// splitmix64 stream with a Box-Muller normal transform. Every draw is a pure
// function of the seed and the draw count, so sequences are identical on any
// platform with IEEE doubles.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal. Each call consumes two uniforms and returns the cosine
  // branch of Box-Muller; the sine branch is discarded.
  double normal();

  // Normal(0, stddev) rejected outside [-2 stddev, 2 stddev].
  double truncated_normal(double stddev);

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace mesp
