#include "fedsim/core.hpp"

#include <cmath>
#include <unordered_set>

#include "fedsim/bytes.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

BlockLayout::BlockLayout(std::vector<Block> blocks) : blocks_(std::move(blocks)) {
  if (blocks_.empty()) throw ConfigError("layout: at least one block required");
  std::unordered_set<std::string> names;
  offsets_.reserve(blocks_.size());
  for (const Block& b : blocks_) {
    if (b.name.empty()) throw ConfigError("layout: empty block name");
    if (!names.insert(b.name).second)
      throw LayoutError("layout: duplicate block name '" + b.name + "'");
    if (b.length == 0)
      throw LayoutError("layout: block '" + b.name + "' has zero length");
    offsets_.push_back(total_);
    total_ += b.length;
    if (!b.frozen) trainable_ += b.length;
  }
}

BlockLayout BlockLayout::with_frozen(const std::string& name, bool frozen) const {
  std::vector<Block> copy = blocks_;
  bool found = false;
  for (Block& b : copy) {
    if (b.name == name) {
      b.frozen = frozen;
      found = true;
    }
  }
  if (!found) throw LayoutError("layout: no block named '" + name + "'");
  return BlockLayout(std::move(copy));
}

std::uint64_t BlockLayout::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  for (const Block& b : blocks_) {
    mix(fnv1a64(b.name));
    mix(b.length);
    mix(b.frozen ? 1 : 0);
  }
  return h;
}

bool BlockLayout::operator==(const BlockLayout& other) const {
  if (blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& a = blocks_[i];
    const Block& b = other.blocks_[i];
    if (a.name != b.name || a.length != b.length || a.frozen != b.frozen)
      return false;
  }
  return true;
}

LayoutPtr make_layout(std::vector<Block> blocks) {
  return std::make_shared<const BlockLayout>(std::move(blocks));
}

ParamVector::ParamVector(LayoutPtr l, std::vector<double> v)
    : layout(std::move(l)), values(std::move(v)) {
  if (values.size() != layout->total_len())
    throw LayoutError("value count does not match layout total length");
}

void check_same_layout(const ParamVector& a, const ParamVector& b) {
  if (a.layout == b.layout) return;
  if (!a.layout || !b.layout || !(*a.layout == *b.layout))
    throw LayoutError("parameter layouts differ");
}

void check_finite(const ParamVector& x, const char* what) {
  for (double v : x.values)
    if (!std::isfinite(v))
      throw NumericalError(std::string("non-finite value in ") + what);
}

ParamVector axpy(double a, const ParamVector& x, const ParamVector& y) {
  check_same_layout(x, y);
  ParamVector out = y;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] += a * x.values[i];
  return out;
}

std::vector<double> trainable_view(const ParamVector& x) {
  std::vector<double> out;
  out.reserve(x.layout->trainable_len());
  const auto& blocks = x.layout->blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].frozen) continue;
    const std::size_t off = x.layout->offset(b);
    out.insert(out.end(), x.values.begin() + off,
               x.values.begin() + off + blocks[b].length);
  }
  return out;
}

void scatter_trainable(ParamVector& x, const std::vector<double>& flat) {
  if (flat.size() != x.layout->trainable_len())
    throw LayoutError("trainable array length does not match layout");
  std::size_t pos = 0;
  const auto& blocks = x.layout->blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].frozen) continue;
    const std::size_t off = x.layout->offset(b);
    for (std::size_t i = 0; i < blocks[b].length; ++i)
      x.values[off + i] = flat[pos++];
  }
}

std::size_t payload_bytes(const ParamVector& x) {
  return 8 * x.layout->trainable_len();
}

std::vector<std::uint8_t> serialize_param_vector(const ParamVector& x) {
  std::vector<std::uint8_t> out;
  const auto& blocks = x.layout->blocks();
  put_u32(out, static_cast<std::uint32_t>(blocks.size()));
  for (const Block& b : blocks) {
    put_string(out, b.name);
    put_u32(out, static_cast<std::uint32_t>(b.length));
    put_u8(out, b.frozen ? 1 : 0);
  }
  for (double v : x.values) put_f64(out, v);
  return out;
}

ParamVector deserialize_param_vector(const std::uint8_t* data, std::size_t len) {
  ByteCursor cur(data, len);
  const std::uint32_t n_blocks = cur.u32();
  std::vector<Block> blocks;
  blocks.reserve(n_blocks);
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    Block b;
    b.name = cur.string();
    b.length = cur.u32();
    b.frozen = cur.u8() != 0;
    blocks.push_back(std::move(b));
  }
  LayoutPtr layout = make_layout(std::move(blocks));
  std::vector<double> values(layout->total_len());
  for (double& v : values) v = cur.f64();
  if (!cur.done()) throw FrameError("trailing bytes after parameter vector");
  return ParamVector(layout, std::move(values));
}

}  // namespace fedsim
