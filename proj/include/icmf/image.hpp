#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "icmf/mask.hpp"
#include "icmf/tensor.hpp"

namespace icmf {

/// 8-bit interleaved pixels as stored in PNG files.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

/// Decodes PNG bytes into RGB (channels == 3) or gray (channels == 1).
/// Throws DataError on malformed input.
Image8 decode_png(const std::string& bytes, std::size_t channels);
std::string encode_png(const Image8& img);
/// Width and height from the PNG header, without decoding pixels.
std::pair<std::size_t, std::size_t> png_size(const std::string& bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

/// RGB image -> [3, h, w] in [0, 1].
Tensor image_to_tensor(const Image8& img);
/// [3, h, w] in [0, 1] -> RGB image (rounded, clamped).
Image8 tensor_to_image(const Tensor& t);

/// Gray image -> mask of pixels strictly above `threshold`.
BitMask gray_to_mask(const Image8& img, int threshold = 128);
/// Mask -> single-channel {0, 255} image.
Image8 mask_to_gray(const BitMask& m);

/// Bilinear resize with half-pixel centres to an arbitrary size. No gradient.
Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w);
/// Nearest-neighbour resize; output pixel o samples floor((o + 0.5) * in / out).
BitMask resize_nearest(const BitMask& m, std::size_t out_h, std::size_t out_w);

/// Zero-pads bottom and right so height == width == max(h, w).
Tensor pad_to_square(const Tensor& img);
BitMask pad_to_square(const BitMask& m);

}  // namespace icmf
