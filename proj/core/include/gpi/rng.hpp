#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string_view>

namespace gpi {

/// Counter-based sub-seed derivation. Every random stream in the library is
/// keyed by (parent seed, stream tag, counter), so results never depend on
/// the order in which streams are consumed.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag,
                          std::uint64_t counter = 0) noexcept;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Seeded random stream. Distributions are implemented here rather than with
/// <random> distribution objects so draws are identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform();

  /// Standard normal (Marsaglia polar method).
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer on [0, n).
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

}  // namespace gpi
