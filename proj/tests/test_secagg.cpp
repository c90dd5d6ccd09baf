#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "fedsim/core.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/secagg.hpp"

using namespace fedsim;

namespace {

const QuantizationConfig kDefaultQ{};  // bits 32, clip 8, headroom 4

std::vector<double> random_deltas(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (double& x : v) x = (rng.uniform() * 2.0 - 1.0) * scale;
  return v;
}

}  // namespace

TEST_CASE("quantization config validation") {
  QuantizationConfig q;
  CHECK_NOTHROW(q.validate());
  q.bits = 0;
  CHECK_THROWS_AS(q.validate(), ConfigError);
  q.bits = 65;
  CHECK_THROWS_AS(q.validate(), ConfigError);
  q.bits = 18;
  q.headroom_bits = 4;  // 14 value bits, below the 16-bit floor
  CHECK_THROWS_AS(q.validate(), ConfigError);
  q = QuantizationConfig{};
  q.clip = 0.0;
  CHECK_THROWS_AS(q.validate(), ConfigError);
}

TEST_CASE("quantize hits the range endpoints") {
  const QuantizationConfig& q = kDefaultQ;
  CHECK(quantize({-q.clip}, q)[0] == 0);
  CHECK(quantize({q.clip}, q)[0] == q.levels());
  CHECK(q.levels() == (std::uint64_t{1} << 28) - 1);
  // Out-of-range values clip to the endpoints.
  CHECK(quantize({-100.0}, q)[0] == 0);
  CHECK(quantize({100.0}, q)[0] == q.levels());
}

TEST_CASE("quantize of zero uses round-half-away-from-zero") {
  // (0+8)/16 * (2^28-1) = 134217727.5, which rounds away from zero.
  CHECK(quantize({0.0}, kDefaultQ)[0] == 134217728);
}

TEST_CASE("dequantize(quantize(x)) round-trip error bound") {
  Rng rng(41);
  const QuantizationConfig& q = kDefaultQ;
  const double bound = q.quant_step() / 2.0 + 1e-12;
  for (int t = 0; t < 1000; ++t) {
    const double x = (rng.uniform() * 2.0 - 1.0) * q.clip;
    const double y = dequantize(quantize({x}, q), q)[0];
    CHECK(std::abs(y - x) <= bound);
  }
}

TEST_CASE("masking with a cohort of one is the identity") {
  const QuantizationConfig& q = kDefaultQ;
  const std::vector<std::uint64_t> delta_q = {1, 2, 3, q.levels()};
  const auto m = mask_update(delta_q, 1, 5, {5}, {}, q);
  CHECK(m.field_values == delta_q);
  CHECK(m.weight_field == 1);
}

TEST_CASE("two-party masks cancel exactly in the field sum") {
  const QuantizationConfig& q = kDefaultQ;
  Rng rng(43);
  for (int t = 0; t < 20; ++t) {
    const auto a = quantize(random_deltas(rng, 64, q.clip), q);
    const auto b = quantize(random_deltas(rng, 64, q.clip), q);
    const std::vector<std::uint64_t> cohort = {2, 9};
    const std::vector<PairwiseSeed> seeds = {{2, 9, rng.next_u64()}};
    const auto ma = mask_update(a, 1, 2, cohort, seeds, q);
    const auto mb = mask_update(b, 1, 9, cohort, seeds, q);
    for (std::size_t k = 0; k < 64; ++k) {
      const std::uint64_t masked_sum =
          (ma.field_values[k] + mb.field_values[k]) & q.field_mask();
      const std::uint64_t plain_sum = (a[k] + b[k]) & q.field_mask();
      CHECK(masked_sum == plain_sum);
    }
    CHECK(((ma.weight_field + mb.weight_field) & q.field_mask()) == 2);
  }
}

TEST_CASE("three-party masks cancel exactly") {
  const QuantizationConfig& q = kDefaultQ;
  Rng rng(47);
  const std::vector<std::uint64_t> cohort = {1, 4, 7};
  const std::vector<PairwiseSeed> seeds = {
      {1, 4, rng.next_u64()}, {1, 7, rng.next_u64()}, {4, 7, rng.next_u64()}};
  std::vector<std::vector<std::uint64_t>> plain;
  std::vector<MaskedUpdate> masked;
  for (std::uint64_t id : cohort) {
    plain.push_back(quantize(random_deltas(rng, 128, q.clip), q));
    masked.push_back(mask_update(plain.back(), 1, id, cohort, seeds, q));
  }
  for (std::size_t k = 0; k < 128; ++k) {
    std::uint64_t ms = 0, ps = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      ms = (ms + masked[i].field_values[k]) & q.field_mask();
      ps = (ps + plain[i][k]) & q.field_mask();
    }
    CHECK(ms == ps);
  }
}

TEST_CASE("a single masked update looks nothing like its plain values") {
  const QuantizationConfig& q = kDefaultQ;
  Rng rng(53);
  const auto plain = quantize(random_deltas(rng, 256, q.clip), q);
  const std::vector<std::uint64_t> cohort = {0, 1};
  const std::vector<PairwiseSeed> seeds = {{0, 1, 0xDEADBEEFULL}};
  const auto m = mask_update(plain, 1, 0, cohort, seeds, q);
  std::size_t equal = 0;
  for (std::size_t k = 0; k < 256; ++k)
    if (m.field_values[k] == plain[k]) equal++;
  CHECK(equal < 3);
}

TEST_CASE("secure_aggregate equals the clear aggregate within quant error") {
  const QuantizationConfig& q = kDefaultQ;
  Rng rng(59);
  const auto layout = make_layout({{"w", 32, false}});
  const std::vector<std::uint64_t> cohort = {3, 8};
  const auto seeds = derive_pair_seeds(cohort, 0, 77);

  const auto da = random_deltas(rng, 32, 2.0);
  const auto db = random_deltas(rng, 32, 2.0);
  std::vector<MaskedUpdate> masked = {
      mask_update(quantize(da, q), 1, 3, cohort, seeds, q),
      mask_update(quantize(db, q), 1, 8, cohort, seeds, q)};
  const ParamVector agg = secure_aggregate(masked, q, cohort, layout);
  for (std::size_t k = 0; k < 32; ++k) {
    const double expect = 0.5 * (da[k] + db[k]);
    CHECK(std::abs(agg.values[k] - expect) <= q.quant_step());
  }
}

TEST_CASE("all-zero deltas dequantize to zero within half a step") {
  const QuantizationConfig& q = kDefaultQ;
  const auto layout = make_layout({{"w", 8, false}});
  const std::vector<std::uint64_t> cohort = {0, 1, 2};
  const auto seeds = derive_pair_seeds(cohort, 1, 5);
  const std::vector<double> zeros(8, 0.0);
  std::vector<MaskedUpdate> masked;
  for (std::uint64_t id : cohort)
    masked.push_back(mask_update(quantize(zeros, q), 1, id, cohort, seeds, q));
  const ParamVector agg = secure_aggregate(masked, q, cohort, layout);
  for (double v : agg.values) CHECK(std::abs(v) <= q.quant_step() / 2.0 + 1e-12);
}

TEST_CASE("sixteen max-range values never overflow the field at headroom 4") {
  const QuantizationConfig& q = kDefaultQ;
  std::uint64_t sum = 0;
  for (int i = 0; i < 16; ++i) sum += q.levels();
  CHECK(sum < (std::uint64_t{1} << q.bits));
  // End-to-end: 16 clients at +clip aggregate to exactly +clip.
  const auto layout = make_layout({{"w", 4, false}});
  std::vector<std::uint64_t> cohort;
  for (std::uint64_t i = 0; i < 16; ++i) cohort.push_back(i);
  const auto seeds = derive_pair_seeds(cohort, 2, 9);
  const std::vector<double> top(4, q.clip);
  std::vector<MaskedUpdate> masked;
  for (std::uint64_t id : cohort)
    masked.push_back(mask_update(quantize(top, q), 1, id, cohort, seeds, q));
  const ParamVector agg = secure_aggregate(masked, q, cohort, layout);
  for (double v : agg.values) CHECK(v == doctest::Approx(q.clip).epsilon(1e-12));
}

TEST_CASE("pair seed schedule") {
  const std::vector<std::uint64_t> cohort = {0, 2, 5, 7, 8, 11};
  const auto seeds = derive_pair_seeds(cohort, 3, 123);
  CHECK(seeds.size() == 15);  // 6*5/2
  for (const auto& s : seeds) CHECK(s.low < s.high);
  // Reproducible and symmetric lookup.
  const auto again = derive_pair_seeds(cohort, 3, 123);
  for (std::size_t i = 0; i < seeds.size(); ++i)
    CHECK(seeds[i].seed == again[i].seed);
  CHECK(find_pair_seed(seeds, 5, 11) == find_pair_seed(seeds, 11, 5));
  CHECK_THROWS_AS(find_pair_seed(seeds, 5, 6), ProtocolError);
  // Round and root perturb every seed.
  const auto other = derive_pair_seeds(cohort, 4, 123);
  for (std::size_t i = 0; i < seeds.size(); ++i)
    CHECK(seeds[i].seed != other[i].seed);
}

TEST_CASE("secure_aggregate validates the cohort") {
  const QuantizationConfig& q = kDefaultQ;
  const auto layout = make_layout({{"w", 2, false}});
  std::vector<MaskedUpdate> updates = {{0, {1, 2}, 1}, {1, {3, 4}, 1}};
  CHECK_THROWS_AS(secure_aggregate(updates, q, {0, 1, 2}, layout), SecureAbort);
  CHECK_THROWS_AS(secure_aggregate(updates, q, {0, 3}, layout), SecureAbort);
  updates[1].field_values.pop_back();
  CHECK_THROWS_AS(secure_aggregate(updates, q, {0, 1}, layout), SecureAbort);
}

TEST_CASE("masked update codec round-trips") {
  const QuantizationConfig& q = kDefaultQ;
  Rng rng(61);
  MaskedUpdate m;
  m.client_id = 42;
  m.weight_field = 3;
  for (int i = 0; i < 100; ++i)
    m.field_values.push_back(rng.next_u64() & q.field_mask());
  const auto bytes = encode_masked_update(m, q);
  QuantizationConfig q2;
  const auto back = decode_masked_update(bytes.data(), bytes.size(), q2);
  CHECK(back.client_id == m.client_id);
  CHECK(back.weight_field == m.weight_field);
  CHECK(back.field_values == m.field_values);
  CHECK(q2.bits == q.bits);
  CHECK(q2.headroom_bits == q.headroom_bits);
  CHECK(q2.clip == q.clip);
  CHECK_THROWS_AS(decode_masked_update(bytes.data(), bytes.size() - 1, q2),
                  FrameError);
}

TEST_CASE("dequantize_mean lands on the quantization grid") {
  const QuantizationConfig& q = kDefaultQ;
  // Mean of field values 10 and 20 with unit weights: q-value 15.
  const double v = dequantize_mean(30.0, 2.0, q);
  const double expect = 15.0 * q.quant_step() - q.clip;
  CHECK(v == doctest::Approx(expect).epsilon(1e-12));
}
