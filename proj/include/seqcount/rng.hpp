#pragma once

#include <cstdint>
#include <vector>

namespace seqcount {

// splitmix64 generator. Used instead of <random> engines + distributions
// so that seeded output is identical across standard library
// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive bounds. Modulo bias is negligible for the small ranges used
  // here.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = uniform_int(0, i);
      std::swap(v[i], v[static_cast<size_t>(j)]);
    }
  }

  // Derives an independent stream id from a master seed and an index.
  static std::uint64_t derive(std::uint64_t master, std::uint64_t index) {
    Rng r(master ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
    return r.next_u64();
  }

 private:
  std::uint64_t state_;
};

}  // namespace seqcount
