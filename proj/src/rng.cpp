#include "fedsim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "fedsim/errors.hpp"

namespace fedsim {

std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                          std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = root ^ fnv1a64(purpose);
  (void)splitmix64_next(s);
  s ^= a * 0x9e3779b97f4a7c15ULL;
  (void)splitmix64_next(s);
  s ^= b * 0xc2b2ae3d27d4eb4fULL;
  return splitmix64_next(s);
}

std::uint64_t counter_prg(std::uint64_t seed, std::uint64_t counter) {
  std::uint64_t s = seed + counter * 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = splitmix64_next(s);
  return splitmix64_next(s) ^ z;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw ConfigError("uniform_int: n must be positive");
  if ((n & (n - 1)) == 0) return next_u64() & (n - 1);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller on open-interval uniforms.
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

double Rng::gamma(double shape) {
  if (shape <= 0.0) throw ConfigError("gamma: shape must be positive");
  if (shape < 1.0) {
    // Boost: Gamma(a) = Gamma(a+1) * U^(1/a).
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return d * v;
  }
}

std::vector<double> Rng::dirichlet(const std::vector<double>& alphas) {
  std::vector<double> out(alphas.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    out[i] = gamma(alphas[i]);
    sum += out[i];
  }
  if (sum <= 0.0) {
    // All gammas underflowed (tiny concentrations): fall back to a point mass
    // on a uniformly chosen coordinate, the limiting distribution.
    std::fill(out.begin(), out.end(), 0.0);
    out[static_cast<std::size_t>(uniform_int(out.size()))] = 1.0;
    return out;
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n,
                                                         std::size_t k) {
  if (k > n) throw ConfigError("sample_without_replacement: k > n");
  // Floyd's algorithm.
  std::unordered_set<std::size_t> chosen;
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t j = n - k; j < n; ++j) {
    std::size_t t = static_cast<std::size_t>(uniform_int(j + 1));
    if (chosen.count(t)) t = j;
    chosen.insert(t);
    out.push_back(t);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fedsim
