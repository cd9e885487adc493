#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace stonet {

// Named sub-seed of a root seed ("data", "init", "split", "mask", ...), so
// that changing one stream never perturbs another.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

// Seeded generator whose draws depend only on the bit stream of
// std::mt19937_64, never on library-specific distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::size_t below(std::size_t n);  // [0, n)

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace stonet
