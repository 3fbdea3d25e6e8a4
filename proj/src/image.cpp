#include "icmf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace icmf {

Image8 decode_png(const std::string& bytes, std::size_t channels) {
  if (channels != 1 && channels != 3) throw ContractError("decode_png: channels must be 1 or 3");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw DataError(std::string("PNG decode failed: ") + image.message);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.width = image.width;
  out.height = image.height;
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DataError("PNG decode failed: " + msg);
  }
  return out;
}

std::pair<std::size_t, std::size_t> png_size(const std::string& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw DataError(std::string("PNG decode failed: ") + image.message);
  std::pair<std::size_t, std::size_t> wh{image.width, image.height};
  png_image_free(&image);
  return wh;
}

std::string encode_png(const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw ContractError("encode_png: channels must be 1 or 3");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw DataError(std::string("PNG encode failed: ") + image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw DataError(std::string("PNG encode failed: ") + image.message);
  out.resize(size);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for '" + path + "'");
}

Tensor image_to_tensor(const Image8& img) {
  if (img.channels != 3) throw ContractError("image_to_tensor expects an RGB image");
  const std::size_t hw = img.width * img.height;
  std::vector<double> v(3 * hw);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) v[c * hw + i] = img.pixels[i * 3 + c] / 255.0;
  return Tensor({3, img.height, img.width}, std::move(v));
}

Image8 tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("tensor_to_image expects [3,h,w]");
  Image8 img{t.dim(2), t.dim(1), 3, {}};
  const std::size_t hw = img.width * img.height;
  img.pixels.resize(3 * hw);
  const auto& v = t.values();
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img.pixels[i * 3 + c] =
          static_cast<std::uint8_t>(std::lround(std::clamp(v[c * hw + i], 0.0, 1.0) * 255.0));
  return img;
}

BitMask gray_to_mask(const Image8& img, int threshold) {
  if (img.channels != 1) throw ContractError("gray_to_mask expects a single-channel image");
  BitMask m(img.height, img.width);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = img.pixels[i] > threshold ? 1 : 0;
  return m;
}

Image8 mask_to_gray(const BitMask& m) {
  Image8 img{m.width, m.height, 1, std::vector<std::uint8_t>(m.bits.size())};
  for (std::size_t i = 0; i < m.bits.size(); ++i) img.pixels[i] = m.bits[i] ? 255 : 0;
  return img;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double l;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = std::max(0.0, (static_cast<double>(o) + 0.5) * ratio - 0.5);
    auto i0 = std::min(static_cast<std::size_t>(src), in - 1);
    t[o] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
  }
  return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw ShapeError("resize_bilinear expects [c,h,w]");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (h == out_h && w == out_w) return img.detach();
  const auto ty = taps(h, out_h), tx = taps(w, out_w);
  const auto& v = img.values();
  std::vector<double> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& a = ty[y];
        const auto& b = tx[x];
        const double* p = v.data() + ch * h * w;
        out[(ch * out_h + y) * out_w + x] =
            (1 - a.l) * ((1 - b.l) * p[a.i0 * w + b.i0] + b.l * p[a.i0 * w + b.i1]) +
            a.l * ((1 - b.l) * p[a.i1 * w + b.i0] + b.l * p[a.i1 * w + b.i1]);
      }
  return Tensor({c, out_h, out_w}, std::move(out));
}

BitMask resize_nearest(const BitMask& m, std::size_t out_h, std::size_t out_w) {
  BitMask out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(m.height - 1, ((2 * y + 1) * m.height) / (2 * out_h));
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(m.width - 1, ((2 * x + 1) * m.width) / (2 * out_w));
      out.bits[y * out_w + x] = m.bits[sy * m.width + sx];
    }
  }
  return out;
}

Tensor pad_to_square(const Tensor& img) {
  if (img.rank() != 3) throw ShapeError("pad_to_square expects [c,h,w]");
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2), s = std::max(h, w);
  if (h == w) return img.detach();
  std::vector<double> out(c * s * s, 0.0);
  const auto v = img.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((ch * h + r) * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>((ch * s + r) * s));
  return Tensor({c, s, s}, std::move(out));
}

BitMask pad_to_square(const BitMask& m) {
  const std::size_t s = std::max(m.height, m.width);
  BitMask out(s, s);
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c) out.bits[r * s + c] = m.bits[r * m.width + c];
  return out;
}

}  // namespace icmf
