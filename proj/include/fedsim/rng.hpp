#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace fedsim {

// All randomness in the project flows through this generator so that runs are
// bit-reproducible across platforms. Standard-library distributions are not
// portable, so the samplers are implemented here.

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Named substream derivation: (root seed, purpose, indices) -> child seed.
// Adding clients or rounds never perturbs another substream's draws.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                          std::uint64_t a = 0, std::uint64_t b = 0);

// Stateless counter-based generator used for pairwise masks: the k-th output
// for a given seed is a pure function of (seed, k).
std::uint64_t counter_prg(std::uint64_t seed, std::uint64_t counter);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), n >= 1, unbiased (rejection).
  std::uint64_t uniform_int(std::uint64_t n);

  double normal();
  // Marsaglia-Tsang for shape >= 1, boosted for shape < 1. Scale 1.
  double gamma(double shape);
  std::vector<double> dirichlet(const std::vector<double>& alphas);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), ascending order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k);

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedsim
