#pragma once

#include <cstdint>
#include <vector>

#include "fedsim/core.hpp"

namespace fedsim {

// Simulation-grade secure aggregation: values are clipped, quantized to a
// finite field of 2^bits elements (with headroom so cohort sums cannot wrap
// past the representable range), and hidden under pairwise additive masks
// that cancel exactly in the server's field sum.
struct QuantizationConfig {
  unsigned bits = 32;
  double clip = 8.0;
  unsigned headroom_bits = 4;

  void validate() const;

  // Top of the quantization range: 2^(bits - headroom_bits) - 1.
  std::uint64_t levels() const {
    return (std::uint64_t{1} << (bits - headroom_bits)) - 1;
  }

  // Field arithmetic is mod 2^bits; this mask reduces a u64 into the field.
  std::uint64_t field_mask() const {
    return bits >= 64 ? ~std::uint64_t{0}
                      : (std::uint64_t{1} << bits) - 1;
  }

  // One quantization step: 2*clip / levels.
  double quant_step() const {
    return 2.0 * clip / static_cast<double>(levels());
  }
};

struct MaskedUpdate {
  std::uint64_t client_id = 0;
  std::vector<std::uint64_t> field_values;
  std::uint64_t weight_field = 0;
};

struct PairwiseSeed {
  std::uint64_t low = 0;   // smaller client id
  std::uint64_t high = 0;  // larger client id
  std::uint64_t seed = 0;
};

// Clip to [-clip, clip], then affine map onto [0, levels] with
// round-half-away-from-zero.
std::vector<std::uint64_t> quantize(const std::vector<double>& x,
                                    const QuantizationConfig& q);

// Inverse of quantize for a single update (round-trip error <= step/2).
std::vector<double> dequantize(const std::vector<std::uint64_t>& v,
                               const QuantizationConfig& q);

// Inverse applied to a weighted field mean; `field_sum / weight_sum` is one
// q-value on the quantization grid.
double dequantize_mean(double field_sum, double weight_sum,
                       const QuantizationConfig& q);

// masked[k] = weight*delta_q[k] + sum_{j>i} PRG(s_ij, k) - sum_{j<i} PRG(s_ij, k)
// (mod 2^bits). The weight itself travels masked the same way at counter
// position len(delta_q). Precondition: the cohort's weights sum to at most
// 2^headroom_bits.
MaskedUpdate mask_update(const std::vector<std::uint64_t>& delta_q,
                         std::uint64_t weight, std::uint64_t client_id,
                         const std::vector<std::uint64_t>& cohort,
                         const std::vector<PairwiseSeed>& seeds,
                         const QuantizationConfig& q);

// Field-sums the masked updates (masks cancel), then dequantizes the weighted
// mean delta into the layout's trainable coordinates.
ParamVector secure_aggregate(const std::vector<MaskedUpdate>& updates,
                             const QuantizationConfig& q,
                             const std::vector<std::uint64_t>& expected_cohort,
                             const LayoutPtr& layout);

// Deterministic pairwise seed schedule for a round; the TCP path relays the
// same values through the server (plaintext, simulation-grade).
std::vector<PairwiseSeed> derive_pair_seeds(
    const std::vector<std::uint64_t>& cohort, std::uint64_t round,
    std::uint64_t root_seed);

std::uint64_t find_pair_seed(const std::vector<PairwiseSeed>& seeds,
                             std::uint64_t a, std::uint64_t b);

// Wire form: u8 bits, u8 headroom, f64 clip, u64 client id, u64 weight field,
// u32 count, then u32 (bits <= 32) or u64 field elements, little-endian.
std::vector<std::uint8_t> encode_masked_update(const MaskedUpdate& m,
                                               const QuantizationConfig& q);
MaskedUpdate decode_masked_update(const std::uint8_t* data, std::size_t len,
                                  QuantizationConfig& q_out);

}  // namespace fedsim
