#include "ufcn/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace ufcn {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Decoded image as 16-bit gray samples plus the maximum sample value.
struct RawGray {
  int h = 0, w = 0;
  int max_value = 255;
  std::vector<std::uint16_t> px;
};

RawGray read_raw(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw LoadError("cannot open image '" + path + "'");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw LoadError("'" + path + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("libpng initialisation failed");
  }
  RawGray out;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("corrupt PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  if (depth == 16) png_set_swap(png);  // host order on little-endian
  png_read_update_info(png, info);

  out.w = static_cast<int>(png_get_image_width(png, info));
  out.h = static_cast<int>(png_get_image_height(png, info));
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * out.h);
  rows.resize(out.h);
  for (int i = 0; i < out.h; ++i) rows[i] = buf.data() + rowbytes * i;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  out.px.resize(static_cast<std::size_t>(out.h) * out.w);
  if (out_depth == 16) {
    out.max_value = 65535;
    for (std::size_t i = 0; i < out.px.size(); ++i) {
      out.px[i] = static_cast<std::uint16_t>(buf[2 * i] | (buf[2 * i + 1] << 8));
    }
  } else {
    for (int i = 0; i < out.h; ++i)
      for (int j = 0; j < out.w; ++j) out.px[i * out.w + j] = rows[i][j];
  }
  return out;
}

void write_raw(const std::string& path, int h, int w, int channels, int bit_depth,
               const std::vector<unsigned char>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("cannot write '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(h);
  const std::size_t rowbytes = static_cast<std::size_t>(w) * channels * (bit_depth / 8);
  for (int i = 0; i < h; ++i) rows[i] = const_cast<unsigned char*>(bytes.data()) + rowbytes * i;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed writing PNG '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, bit_depth, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Tensor<float> read_png_gray(const std::string& path) {
  const RawGray raw = read_raw(path);
  Tensor<float> t(1, raw.h, raw.w);
  const float scale = 1.0f / static_cast<float>(raw.max_value);
  for (std::size_t i = 0; i < raw.px.size(); ++i) t.data[i] = raw.px[i] * scale;
  return t;
}

Tensor<std::uint8_t> read_png_mask(const std::string& path) {
  const RawGray raw = read_raw(path);
  Tensor<std::uint8_t> m(1, raw.h, raw.w);
  for (std::size_t i = 0; i < raw.px.size(); ++i) m.data[i] = raw.px[i] != 0;
  return m;
}

void write_png_gray(const std::string& path, const Tensor<float>& image, int bit_depth) {
  if (image.c != 1) throw ShapeError("write_png_gray expects one channel, got " + shape_string(image));
  if (bit_depth != 8 && bit_depth != 16) throw ConfigError("PNG bit depth must be 8 or 16");
  const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
  std::vector<unsigned char> bytes(image.size() * (bit_depth / 8));
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(static_cast<double>(image.data[i]), 0.0, 1.0);
    const auto q = static_cast<unsigned>(std::lround(v * maxv));
    if (bit_depth == 8) {
      bytes[i] = static_cast<unsigned char>(q);
    } else {
      bytes[2 * i] = static_cast<unsigned char>(q >> 8);  // PNG is big-endian
      bytes[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
    }
  }
  write_raw(path, image.h, image.w, 1, bit_depth, bytes);
}

void write_png_mask(const std::string& path, const Tensor<std::uint8_t>& mask) {
  std::vector<unsigned char> bytes(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = mask.data[i] ? 255 : 0;
  write_raw(path, mask.h, mask.w, 1, 8, bytes);
}

void write_png_rgb(const std::string& path, const Tensor<std::uint8_t>& rgb) {
  if (rgb.c != 3) throw ShapeError("write_png_rgb expects 3 channels");
  std::vector<unsigned char> bytes(rgb.size());
  const std::size_t hw = rgb.plane();
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c) bytes[3 * p + c] = rgb.data[c * hw + p];
  write_raw(path, rgb.h, rgb.w, 3, 8, bytes);
}

}  // namespace ufcn
