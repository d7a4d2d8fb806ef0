#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "wdgan/tensor.hpp"

namespace wdgan {

// Counter-based noise source: every draw is a pure function of (seed, counter),
// so a saved (seed, counter) pair resumes the exact same stream.
class NoiseState {
 public:
  NoiseState() = default;
  explicit NoiseState(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  // Engine for the next draw. Advances the counter by one.
  std::mt19937_64 next_engine() {
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32)};
    ++counter_;
    return std::mt19937_64(seq);
  }

  // i.i.d. standard normal tensor (Box-Muller on 53-bit uniforms; the
  // std::normal_distribution algorithm differs between standard libraries).
  Tensor normal(const Shape& shape) {
    auto eng = next_engine();
    Tensor out(shape);
    auto& d = out.storage();
    for (std::size_t i = 0; i < d.size(); i += 2) {
      const double u1 = uniform_open(eng);
      const double u2 = uniform_open(eng);
      const double r = std::sqrt(-2.0 * std::log(u1));
      const double th = 2.0 * std::numbers::pi * u2;
      d[i] = r * std::cos(th);
      if (i + 1 < d.size()) d[i + 1] = r * std::sin(th);
    }
    return out;
  }

  // Uniform integers in [lo, hi], one per element.
  std::vector<int> uniform_ints(std::size_t n, int lo, int hi) {
    auto eng = next_engine();
    std::vector<int> out(n);
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    for (auto& v : out) v = lo + static_cast<int>(eng() % span);
    return out;
  }

 private:
  static double uniform_open(std::mt19937_64& eng) {
    // (0, 1]: never zero so log() stays finite
    return (static_cast<double>(eng() >> 11) + 1.0) * 0x1.0p-53;
  }

  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace wdgan
