#pragma once

#include <png.h>

#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "layerfit/error.hpp"
#include "layerfit/tensor.hpp"

namespace layerfit {

struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (rgb), interleaved rows
  std::vector<uint8_t> pixels;
};

namespace detail {

struct FileCloser {
  std::FILE* fp;
  ~FileCloser() {
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

inline ImageU8 read_png_u8(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw DataError("cannot open PNG: " + path.string());
  detail::FileCloser closer{fp};

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8))
    throw DataError("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  if (!png) throw DataError("libpng init failed for " + path.string());
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }

  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_uint_32 width = png_get_image_width(png, info);
  png_uint_32 height = png_get_image_height(png, info);
  int color_type = png_get_color_type(png, info);
  int bit_depth = png_get_bit_depth(png, info);

  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported PNG channel count " + std::to_string(channels) +
                    " in " + path.string());
  }

  ImageU8 img;
  img.width = static_cast<int>(width);
  img.height = static_cast<int>(height);
  img.channels = channels;
  img.pixels.resize(static_cast<size_t>(width) * height * channels);
  std::vector<png_bytep> rows(height);
  size_t stride = static_cast<size_t>(width) * channels;
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = img.pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png_u8(const std::filesystem::path& path, const ImageU8& img) {
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw DataError("cannot open PNG for writing: " + path.string());
  detail::FileCloser closer{fp};

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  if (!png) throw DataError("libpng init failed for " + path.string());
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG: " + path.string());
  }

  png_init_io(png, fp);
  int color_type = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.height);
  size_t stride = static_cast<size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.pixels.data() + y * stride);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// Tensor adapters. Images are [0,1] f64; quantization is round(v*255), which
// round-trips exactly for values on the 1/255 grid.
// ---------------------------------------------------------------------------

inline void write_image_rgb(const std::filesystem::path& path, const Tensor& t) {
  if (t.shape().size() != 3 || t.shape()[0] != 3)
    throw UsageError("write_image_rgb: expected 3xHxW, got " + shape_str(t.shape()));
  const int H = t.shape()[1], W = t.shape()[2];
  ImageU8 img{W, H, 3, {}};
  img.pixels.resize(static_cast<size_t>(W) * H * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::min(1.0, std::max(0.0, t.at((static_cast<int64_t>(c) * H + y) * W + x)));
        img.pixels[(static_cast<size_t>(y) * W + x) * 3 + c] =
            static_cast<uint8_t>(std::llround(v * 255.0));
      }
  write_png_u8(path, img);
}

inline Tensor read_image_rgb(const std::filesystem::path& path) {
  ImageU8 img = read_png_u8(path);
  Tensor t = Tensor::zeros({3, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        uint8_t v = img.channels == 1
                        ? img.pixels[static_cast<size_t>(y) * img.width + x]
                        : img.pixels[(static_cast<size_t>(y) * img.width + x) * 3 + c];
        t.at((static_cast<int64_t>(c) * img.height + y) * img.width + x) = v / 255.0;
      }
  return t;
}

// Binary masks: written as 0/255 grayscale, read back as {0,1} (any nonzero
// byte counts as in-region).
inline void write_mask(const std::filesystem::path& path, const Tensor& mask) {
  if (mask.shape().size() != 2)
    throw UsageError("write_mask: expected HxW, got " + shape_str(mask.shape()));
  const int H = mask.shape()[0], W = mask.shape()[1];
  ImageU8 img{W, H, 1, {}};
  img.pixels.resize(static_cast<size_t>(W) * H);
  for (int64_t i = 0; i < mask.numel(); ++i)
    img.pixels[static_cast<size_t>(i)] = mask.at(i) > 0.0 ? 255 : 0;
  write_png_u8(path, img);
}

inline Tensor read_mask(const std::filesystem::path& path) {
  ImageU8 img = read_png_u8(path);
  Tensor t = Tensor::zeros({img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      uint8_t v = img.channels == 1
                      ? img.pixels[static_cast<size_t>(y) * img.width + x]
                      : img.pixels[(static_cast<size_t>(y) * img.width + x) * 3];
      t.at(static_cast<int64_t>(y) * img.width + x) = v > 0 ? 1.0 : 0.0;
    }
  return t;
}

}  // namespace layerfit
