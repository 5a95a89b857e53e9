#pragma once

#include <png.h>

#include <array>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "t2d/core/tensor.hpp"

namespace t2d {

using LabelMap = TensorT<int32_t>;  // [H,W] class ids; 255 = ignore

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_fail(png_structp, png_const_charp msg) {
  throw std::runtime_error(std::string("png: ") + msg);
}

}  // namespace detail

// 8-bit RGB from [3,H,W] floats in [0,1] (clamped, round-to-nearest).
inline void write_png_rgb8(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw std::invalid_argument("write_png_rgb8: expected [3,H,W]");
  const int h = img.dim(1), w = img.dim(2);
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            detail::png_fail, nullptr);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, f.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          float v = img.at(c, y, x);
          v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
          row[3 * x + c] = static_cast<png_byte>(v * 255.f + 0.5f);
        }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

inline Tensor read_png_rgb(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open image: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           detail::png_fail, nullptr);
  png_infop info = png_create_info_struct(png);
  Tensor out;
  try {
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    out = Tensor({3, h, w});
    std::vector<png_byte> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          out.at(c, y, x) = static_cast<float>(row[3 * x + c]) / 255.f;
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

// Indexed 8-bit PNG with an explicit palette; the VOC-style label format.
inline void write_png_label8(const std::string& path, const LabelMap& labels,
                             const std::vector<std::array<uint8_t, 3>>& palette) {
  if (labels.rank() != 2) throw std::invalid_argument("write_png_label8: expected [H,W]");
  const int h = labels.dim(0), w = labels.dim(1);
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            detail::png_fail, nullptr);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, f.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_color> pal(256);
    for (int i = 0; i < 256; ++i) {
      if (i < static_cast<int>(palette.size()))
        pal[i] = {palette[i][0], palette[i][1], palette[i][2]};
      else
        pal[i] = {static_cast<png_byte>(i), static_cast<png_byte>(i),
                  static_cast<png_byte>(i)};
    }
    png_set_PLTE(png, info, pal.data(), 256);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int32_t v = labels.at(y, x);
        if (v < 0 || v > 255)
          throw std::invalid_argument("label out of 8-bit range: " + std::to_string(v));
        row[x] = static_cast<png_byte>(v);
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

inline LabelMap read_png_label8(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open label image: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           detail::png_fail, nullptr);
  png_infop info = png_create_info_struct(png);
  LabelMap out;
  try {
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (!(color == PNG_COLOR_TYPE_PALETTE || color == PNG_COLOR_TYPE_GRAY) || bit_depth > 8)
      throw std::runtime_error("label image must be 8-bit palette or gray: " + path);
    if (bit_depth < 8) png_set_packing(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    out = LabelMap({h, w});
    std::vector<png_byte> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < w; ++x) out.at(y, x) = row[x];
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

// 16-bit grayscale PNG; the depth-map container (value = meters * scale).
inline void write_png_gray16(const std::string& path, const TensorT<int32_t>& vals) {
  if (vals.rank() != 2) throw std::invalid_argument("write_png_gray16: expected [H,W]");
  const int h = vals.dim(0), w = vals.dim(1);
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            detail::png_fail, nullptr);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, f.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int32_t v = vals.at(y, x);
        if (v < 0) v = 0;
        if (v > 65535) v = 65535;
        row[2 * x] = static_cast<png_byte>(v >> 8);  // PNG is big-endian
        row[2 * x + 1] = static_cast<png_byte>(v & 0xff);
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

inline TensorT<int32_t> read_png_gray16(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open depth image: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           detail::png_fail, nullptr);
  png_infop info = png_create_info_struct(png);
  TensorT<int32_t> out;
  try {
    png_init_io(png, f.get());
    png_read_info(png, info);
    if (png_get_bit_depth(png, info) != 16 ||
        png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY)
      throw std::runtime_error("depth image must be 16-bit gray: " + path);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    out = TensorT<int32_t>({h, w});
    std::vector<png_byte> row(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < w; ++x)
        out.at(y, x) = (static_cast<int32_t>(row[2 * x]) << 8) | row[2 * x + 1];
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace t2d
