#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace fedsim {

struct Block {
  std::string name;
  std::size_t length = 0;
  bool frozen = false;
};

// Ordered named blocks over a flat parameter array. Frozen blocks are carried
// but never trained or transmitted.
class BlockLayout {
 public:
  explicit BlockLayout(std::vector<Block> blocks);

  const std::vector<Block>& blocks() const { return blocks_; }
  std::size_t total_len() const { return total_; }
  std::size_t trainable_len() const { return trainable_; }
  std::size_t offset(std::size_t block_index) const {
    return offsets_[block_index];
  }

  BlockLayout with_frozen(const std::string& name, bool frozen) const;

  // Order-sensitive digest of (name, length, frozen) triples; used by the
  // wire protocol to reject mismatched sessions.
  std::uint64_t hash() const;

  bool operator==(const BlockLayout& other) const;

 private:
  std::vector<Block> blocks_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
  std::size_t trainable_ = 0;
};

using LayoutPtr = std::shared_ptr<const BlockLayout>;

LayoutPtr make_layout(std::vector<Block> blocks);

// Flat 64-bit parameter vector with a layout sidecar. Plain value type; copy
// freely between threads.
struct ParamVector {
  LayoutPtr layout;
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(LayoutPtr l)
      : layout(std::move(l)), values(layout->total_len(), 0.0) {}
  ParamVector(LayoutPtr l, std::vector<double> v);
};

// Gradients share the model's shape exactly.
using Gradient = ParamVector;

void check_same_layout(const ParamVector& a, const ParamVector& b);
void check_finite(const ParamVector& x, const char* what);

// y + a*x, elementwise; inputs unmodified.
ParamVector axpy(double a, const ParamVector& x, const ParamVector& y);

// Concatenation of non-frozen block values in layout order.
std::vector<double> trainable_view(const ParamVector& x);

// Writes a trainable-view array back into the live blocks of x.
void scatter_trainable(ParamVector& x, const std::vector<double>& flat);

// Bytes transmitted per copy of the model: 8 per trainable coordinate.
std::size_t payload_bytes(const ParamVector& x);

// Full serialization: layout (u32 block count, then per block u32 name length,
// UTF-8 name, u32 length, u8 frozen), then total_len little-endian f64 values.
std::vector<std::uint8_t> serialize_param_vector(const ParamVector& x);
ParamVector deserialize_param_vector(const std::uint8_t* data, std::size_t len);

}  // namespace fedsim
