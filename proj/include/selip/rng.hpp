#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace selip {

// Seeded random source. The engine is std::mt19937_64 (fully specified by the
// standard); the variate helpers below are written out so that sequences do not
// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  // Uniform on [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  // Standard normal via Box-Muller; consumes exactly two draws per call.
  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }
  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace selip
