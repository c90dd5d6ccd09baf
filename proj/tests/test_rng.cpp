#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "fedsim/rng.hpp"

using namespace fedsim;

TEST_CASE("splitmix64 is deterministic per seed") {
  std::uint64_t a = 42, b = 42, c = 43;
  for (int i = 0; i < 100; ++i) {
    CHECK(splitmix64_next(a) == splitmix64_next(b));
  }
  bool differs = false;
  std::uint64_t a2 = 42;
  for (int i = 0; i < 100; ++i)
    if (splitmix64_next(a2) != splitmix64_next(c)) differs = true;
  CHECK(differs);
}

TEST_CASE("derive_seed separates purposes and indices") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 50; ++i) {
    seen.insert(derive_seed(7, "alpha", i));
    seen.insert(derive_seed(7, "beta", i));
    seen.insert(derive_seed(7, "alpha", i, 1));
  }
  CHECK(seen.size() == 150);
  CHECK(derive_seed(7, "alpha", 3, 4) == derive_seed(7, "alpha", 3, 4));
  CHECK(derive_seed(7, "alpha") != derive_seed(8, "alpha"));
}

TEST_CASE("counter_prg is a pure function of seed and counter") {
  const std::uint64_t s = derive_seed(1, "mask");
  std::vector<std::uint64_t> first, second;
  for (std::uint64_t k = 0; k < 64; ++k) first.push_back(counter_prg(s, k));
  // Query out of order; values must not depend on call history.
  for (std::uint64_t k = 64; k-- > 0;) second.push_back(counter_prg(s, k));
  std::reverse(second.begin(), second.end());
  CHECK(first == second);
  CHECK(counter_prg(s, 0) != counter_prg(s + 1, 0));
}

TEST_CASE("counter_prg output bytes look uniform (chi-square)") {
  const std::uint64_t s = derive_seed(99, "uniformity");
  std::vector<std::size_t> bins(256, 0);
  const std::size_t draws = 1 << 14;
  for (std::uint64_t k = 0; k < draws; ++k) {
    const std::uint64_t v = counter_prg(s, k);
    for (int byte = 0; byte < 8; ++byte) bins[(v >> (8 * byte)) & 0xff]++;
  }
  const double expected = static_cast<double>(draws * 8) / 256.0;
  double chi2 = 0.0;
  for (std::size_t c : bins) {
    const double d = static_cast<double>(c) - expected;
    chi2 += d * d / expected;
  }
  // 255 dof: mean 255, std ~22.6; 340 is ~3.7 sigma.
  CHECK(chi2 < 340.0);
  CHECK(chi2 > 170.0);
}

TEST_CASE("uniform stays in [0,1) and has the right mean") {
  Rng rng(5);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / 20000.0 - 0.5) < 0.01);
}

TEST_CASE("uniform_int covers the range without bias") {
  Rng rng(11);
  std::vector<std::size_t> bins(7, 0);
  for (int i = 0; i < 70000; ++i) bins[rng.uniform_int(7)]++;
  for (std::size_t c : bins) {
    CHECK(c > 9300);
    CHECK(c < 10700);
  }
  CHECK(rng.uniform_int(1) == 0);
}

TEST_CASE("normal has zero mean and unit variance") {
  Rng rng(13);
  double sum = 0.0, sumsq = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sumsq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sumsq / n - 1.0) < 0.03);
}

TEST_CASE("gamma matches its first two moments") {
  for (double shape : {0.3, 1.0, 2.5, 9.0}) {
    Rng rng(17);
    double sum = 0.0, sumsq = 0.0;
    const int n = 60000;
    for (int i = 0; i < n; ++i) {
      const double g = rng.gamma(shape);
      CHECK(g >= 0.0);
      sum += g;
      sumsq += g * g;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean - shape) < 0.05 * std::max(1.0, shape));
    CHECK(std::abs(var - shape) < 0.12 * std::max(1.0, shape));
  }
}

TEST_CASE("dirichlet sums to one and tracks concentration") {
  Rng rng(23);
  SUBCASE("simplex membership") {
    for (int t = 0; t < 100; ++t) {
      const auto q = rng.dirichlet({1.0, 2.0, 0.5, 0.5});
      double sum = 0.0;
      for (double x : q) {
        CHECK(x >= 0.0);
        sum += x;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("huge concentration pins the mean") {
    const auto q = rng.dirichlet(std::vector<double>(4, 1e9));
    for (double x : q) CHECK(std::abs(x - 0.25) < 1e-3);
  }
  SUBCASE("tiny concentration gives a point mass") {
    for (int t = 0; t < 50; ++t) {
      const auto q = rng.dirichlet(std::vector<double>(4, 1e-6));
      const double mx = *std::max_element(q.begin(), q.end());
      CHECK(mx > 0.999);
    }
  }
}

TEST_CASE("shuffle is a permutation and seed-stable") {
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  Rng a(31), b(31);
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);
  std::vector<int> sorted_v = v;
  std::sort(sorted_v.begin(), sorted_v.end());
  std::vector<int> expect(100);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted_v == expect);
  CHECK(v != expect);
}

TEST_CASE("sample_without_replacement is sorted and distinct") {
  Rng rng(37);
  for (int t = 0; t < 50; ++t) {
    const auto s = rng.sample_without_replacement(100, 10);
    CHECK(s.size() == 10);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    for (std::size_t x : s) CHECK(x < 100);
  }
  const auto all = rng.sample_without_replacement(6, 6);
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
}
