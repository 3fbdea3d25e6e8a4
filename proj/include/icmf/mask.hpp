#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "icmf/errors.hpp"
#include "icmf/tensor.hpp"

namespace icmf {

/// Binary image, row-major, one byte per pixel holding 0 or 1.
struct BitMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  BitMask() = default;
  BitMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), bits(h * w, fill) {}

  std::size_t size() const { return bits.size(); }
  bool empty_mask() const;
  std::size_t area() const;
  bool at(std::size_t r, std::size_t c) const { return bits[r * width + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v = true) { bits[r * width + c] = v ? 1 : 0; }
  bool same_shape(const BitMask& o) const { return height == o.height && width == o.width; }

  /// [1, h, w] tensor of 0/1 values.
  Tensor to_tensor() const;

  friend bool operator==(const BitMask&, const BitMask&) = default;
};

/// Intersection over union; 1.0 when both masks are empty.
double iou(const BitMask& a, const BitMask& b);

}  // namespace icmf
