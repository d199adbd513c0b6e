#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "scalelab/error.hpp"

namespace scalelab::ml {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Dense row-major fp64 array. An empty shape is a scalar holding one value.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(element_count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != element_count(shape_)) {
      throw Error(ErrorKind::ShapeMismatch, "tensor data length " + std::to_string(data_.size()) +
                                                " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

  static Tensor vector(std::vector<double> v) {
    auto n = v.size();
    return Tensor({n}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool operator==(const Tensor&) const = default;

 private:
  void check_extents() const {
    for (auto e : shape_)
      if (e == 0) throw Error(ErrorKind::ShapeMismatch, "tensor extents must be >= 1: " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline std::uint32_t get_be32(std::span<const std::uint8_t> in, std::size_t at) {
  return (std::uint32_t{in[at]} << 24) | (std::uint32_t{in[at + 1]} << 16) | (std::uint32_t{in[at + 2]} << 8) |
         std::uint32_t{in[at + 3]};
}

}  // namespace detail

// Flat little-endian fp64 payload, as carried on the collectives wire.
inline void append_le_f64(std::vector<std::uint8_t>& out, std::span<const double> values) {
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

inline std::vector<double> read_le_f64(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 8 != 0) throw Error(ErrorKind::ShapeMismatch, "payload length not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[8 * i + b]} << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

// File layout: 4-byte BE rank, one 4-byte BE extent per axis, LE fp64 payload.
inline std::vector<std::uint8_t> serialize(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * t.rank() + 8 * t.size());
  detail::put_be32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) detail::put_be32(out, static_cast<std::uint32_t>(e));
  append_le_f64(out, t.data());
  return out;
}

inline Tensor deserialize(std::span<const std::uint8_t> bytes) {
  auto fail = [](const std::string& m) -> Tensor { throw Error(ErrorKind::ShapeMismatch, "tensor file: " + m); };
  if (bytes.size() < 4) return fail("truncated header");
  const auto rank = detail::get_be32(bytes, 0);
  if (bytes.size() < 4 + 4ull * rank) return fail("truncated extents");
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) shape[i] = detail::get_be32(bytes, 4 + 4 * i);
  auto payload = bytes.subspan(4 + 4 * rank);
  for (auto e : shape)
    if (e == 0) return fail("zero extent");
  if (payload.size() != 8 * element_count(shape)) return fail("payload length does not match extents");
  return Tensor(std::move(shape), read_le_f64(payload));
}

}  // namespace scalelab::ml
