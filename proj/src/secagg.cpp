#include "fedsim/secagg.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/bytes.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

void QuantizationConfig::validate() const {
  if (bits == 0 || bits > 64)
    throw ConfigError("secure.bits must be in [1, 64]");
  if (headroom_bits >= bits || bits - headroom_bits < 16)
    throw ConfigError("secure.bits - secure.headroom_bits must be at least 16");
  if (!(clip > 0.0)) throw ConfigError("secure.clip must be positive");
}

std::vector<std::uint64_t> quantize(const std::vector<double>& x,
                                    const QuantizationConfig& q) {
  q.validate();
  const double levels = static_cast<double>(q.levels());
  std::vector<std::uint64_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = std::clamp(x[i], -q.clip, q.clip);
    // Affine map to [0, levels], round half away from zero.
    const double scaled = (v + q.clip) / (2.0 * q.clip) * levels;
    double r = std::floor(scaled + 0.5);  // scaled >= 0
    if (r > levels) r = levels;
    out[i] = static_cast<std::uint64_t>(r);
  }
  return out;
}

std::vector<double> dequantize(const std::vector<std::uint64_t>& v,
                               const QuantizationConfig& q) {
  const double levels = static_cast<double>(q.levels());
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = static_cast<double>(v[i]) / levels * 2.0 * q.clip - q.clip;
  return out;
}

double dequantize_mean(double field_sum, double weight_sum,
                       const QuantizationConfig& q) {
  if (weight_sum <= 0.0) throw SecureAbort("secure aggregate: zero weight sum");
  const double mean_q = field_sum / weight_sum;
  return mean_q / static_cast<double>(q.levels()) * 2.0 * q.clip - q.clip;
}

namespace {

// Mask stream for one pair seed, reduced into the field.
std::uint64_t mask_at(std::uint64_t seed, std::uint64_t counter,
                      std::uint64_t field_mask) {
  return counter_prg(seed, counter) & field_mask;
}

}  // namespace

std::uint64_t find_pair_seed(const std::vector<PairwiseSeed>& seeds,
                             std::uint64_t a, std::uint64_t b) {
  const std::uint64_t lo = std::min(a, b);
  const std::uint64_t hi = std::max(a, b);
  for (const PairwiseSeed& s : seeds)
    if (s.low == lo && s.high == hi) return s.seed;
  throw ProtocolError("missing pairwise seed for clients " + std::to_string(lo) +
                      "," + std::to_string(hi));
}

MaskedUpdate mask_update(const std::vector<std::uint64_t>& delta_q,
                         std::uint64_t weight, std::uint64_t client_id,
                         const std::vector<std::uint64_t>& cohort,
                         const std::vector<PairwiseSeed>& seeds,
                         const QuantizationConfig& q) {
  q.validate();
  const std::uint64_t fm = q.field_mask();
  MaskedUpdate out;
  out.client_id = client_id;
  out.field_values.resize(delta_q.size());
  for (std::size_t k = 0; k < delta_q.size(); ++k)
    out.field_values[k] = (weight * delta_q[k]) & fm;
  out.weight_field = weight & fm;

  for (std::uint64_t other : cohort) {
    if (other == client_id) continue;
    const std::uint64_t seed = find_pair_seed(seeds, client_id, other);
    // Antisymmetric: the lower id adds the stream, the higher id subtracts.
    const bool add = client_id < other;
    for (std::size_t k = 0; k < delta_q.size(); ++k) {
      const std::uint64_t m = mask_at(seed, k, fm);
      out.field_values[k] =
          (add ? out.field_values[k] + m : out.field_values[k] - m) & fm;
    }
    const std::uint64_t mw = mask_at(seed, delta_q.size(), fm);
    out.weight_field = (add ? out.weight_field + mw : out.weight_field - mw) & fm;
  }
  return out;
}

ParamVector secure_aggregate(const std::vector<MaskedUpdate>& updates,
                             const QuantizationConfig& q,
                             const std::vector<std::uint64_t>& expected_cohort,
                             const LayoutPtr& layout) {
  q.validate();
  std::vector<std::uint64_t> got;
  for (const MaskedUpdate& u : updates) got.push_back(u.client_id);
  std::sort(got.begin(), got.end());
  std::vector<std::uint64_t> want = expected_cohort;
  std::sort(want.begin(), want.end());
  if (got != want)
    throw SecureAbort("secure aggregate: cohort incomplete or mismatched");
  if (updates.empty()) throw SecureAbort("secure aggregate: no updates");

  const std::size_t len = updates.front().field_values.size();
  if (len != layout->trainable_len())
    throw LayoutError("secure aggregate: payload length does not match layout");
  const std::uint64_t fm = q.field_mask();

  std::vector<std::uint64_t> sums(len, 0);
  std::uint64_t weight_sum = 0;
  for (const MaskedUpdate& u : updates) {
    if (u.field_values.size() != len)
      throw SecureAbort("secure aggregate: inconsistent payload lengths");
    for (std::size_t k = 0; k < len; ++k)
      sums[k] = (sums[k] + u.field_values[k]) & fm;
    weight_sum = (weight_sum + u.weight_field) & fm;
  }

  std::vector<double> mean(len);
  for (std::size_t k = 0; k < len; ++k)
    mean[k] = dequantize_mean(static_cast<double>(sums[k]),
                              static_cast<double>(weight_sum), q);

  ParamVector delta(layout);
  scatter_trainable(delta, mean);
  return delta;
}

std::vector<PairwiseSeed> derive_pair_seeds(
    const std::vector<std::uint64_t>& cohort, std::uint64_t round,
    std::uint64_t root_seed) {
  std::vector<std::uint64_t> sorted = cohort;
  std::sort(sorted.begin(), sorted.end());
  std::vector<PairwiseSeed> out;
  for (std::size_t a = 0; a < sorted.size(); ++a)
    for (std::size_t b = a + 1; b < sorted.size(); ++b)
      out.push_back({sorted[a], sorted[b],
                     derive_seed(root_seed, "secagg/pair", round,
                                 (sorted[a] << 32) | sorted[b])});
  return out;
}

std::vector<std::uint8_t> encode_masked_update(const MaskedUpdate& m,
                                               const QuantizationConfig& q) {
  std::vector<std::uint8_t> out;
  put_u8(out, static_cast<std::uint8_t>(q.bits));
  put_u8(out, static_cast<std::uint8_t>(q.headroom_bits));
  put_f64(out, q.clip);
  put_u64(out, m.client_id);
  put_u64(out, m.weight_field);
  put_u32(out, static_cast<std::uint32_t>(m.field_values.size()));
  if (q.bits <= 32) {
    for (std::uint64_t v : m.field_values)
      put_u32(out, static_cast<std::uint32_t>(v));
  } else {
    for (std::uint64_t v : m.field_values) put_u64(out, v);
  }
  return out;
}

MaskedUpdate decode_masked_update(const std::uint8_t* data, std::size_t len,
                                  QuantizationConfig& q_out) {
  ByteCursor cur(data, len);
  q_out.bits = cur.u8();
  q_out.headroom_bits = cur.u8();
  q_out.clip = cur.f64();
  q_out.validate();
  MaskedUpdate m;
  m.client_id = cur.u64();
  m.weight_field = cur.u64();
  const std::uint32_t count = cur.u32();
  m.field_values.resize(count);
  for (std::uint32_t i = 0; i < count; ++i)
    m.field_values[i] = q_out.bits <= 32 ? cur.u32() : cur.u64();
  if (!cur.done()) throw FrameError("trailing bytes after masked update");
  return m;
}

}  // namespace fedsim
