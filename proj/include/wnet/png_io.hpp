#pragma once

// PNG I/O. Label maps and masks are 16-bit grayscale (pixel value = id);
// images are 8-bit grayscale or RGB.

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "wnet/core.hpp"

namespace wnet {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw Error("cannot open '" + path.string() + "'");
  return f;
}

struct RawPng {
  uint32_t width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  std::vector<uint8_t> bytes;  // rows packed, big-endian samples as stored
};

inline void png_error_to_buffer(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<char*>(png_get_error_ptr(png));
  std::snprintf(buf, 256, "%s", msg);
  png_longjmp(png, 1);
}

inline void png_warning_ignore(png_structp, png_const_charp) {}

// libpng reports errors by longjmp; this frame owns no objects with destructors
// between setjmp and the longjmp target.
inline bool read_png_raw(std::FILE* fp, RawPng& out, char* err) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, png_error_to_buffer, png_warning_ignore);
  if (!png) {
    std::snprintf(err, 256, "png_create_read_struct failed");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    std::snprintf(err, 256, "png_create_info_struct failed");
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  const size_t rowbytes = png_get_rowbytes(png, info);
  out.bytes.resize(rowbytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (uint32_t y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline bool write_png_raw(std::FILE* fp, const RawPng& in, char* err) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, png_error_to_buffer, png_warning_ignore);
  if (!png) {
    std::snprintf(err, 256, "png_create_write_struct failed");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    std::snprintf(err, 256, "png_create_info_struct failed");
    return false;
  }
  std::vector<png_bytep> rows(in.height);
  const size_t rowbytes = in.height ? in.bytes.size() / in.height : 0;
  for (uint32_t y = 0; y < in.height; ++y) rows[y] = const_cast<uint8_t*>(in.bytes.data()) + rowbytes * y;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, in.width, in.height, in.bit_depth, in.color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

inline RawPng read_png(const std::filesystem::path& path) {
  auto fp = open_file(path, "rb");
  png_byte sig[8] = {};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError("'" + path.string() + "' is not a PNG file (bad magic bytes)");
  RawPng raw;
  char err[256] = {};
  if (!read_png_raw(fp.get(), raw, err)) throw FormatError("'" + path.string() + "': " + err);
  return raw;
}

inline void write_png(const std::filesystem::path& path, const RawPng& raw) {
  auto fp = open_file(path, "wb");
  char err[256] = {};
  if (!write_png_raw(fp.get(), raw, err)) throw Error("'" + path.string() + "': " + err);
}

inline RawPng read_gray16(const std::filesystem::path& path) {
  RawPng raw = read_png(path);
  if (raw.color_type != PNG_COLOR_TYPE_GRAY)
    throw FormatError("'" + path.string() + "' is not single-channel grayscale");
  if (raw.bit_depth != 16)
    throw FormatError(detail::concat("'", path.string(), "' has bit depth ", raw.bit_depth, ", expected 16"));
  return raw;
}

inline RawPng gray16(int height, int width) {
  RawPng raw;
  raw.width = static_cast<uint32_t>(width);
  raw.height = static_cast<uint32_t>(height);
  raw.bit_depth = 16;
  raw.color_type = PNG_COLOR_TYPE_GRAY;
  raw.bytes.resize(static_cast<size_t>(height) * width * 2);
  return raw;
}

}  // namespace detail

/// Loads a 16-bit label PNG and relabels its ids to 1..C; `mapping` reports
/// original id -> canonical id.
inline Canonicalized load_label_map(const std::filesystem::path& path) {
  const auto raw = detail::read_gray16(path);
  LabelMap labels(static_cast<int>(raw.height), static_cast<int>(raw.width));
  for (size_t i = 0; i < labels.ids.size(); ++i)
    labels.ids[i] = (static_cast<int32_t>(raw.bytes[2 * i]) << 8) | raw.bytes[2 * i + 1];
  return canonicalize(labels);
}

inline void save_label_map(const LabelMap& labels, const std::filesystem::path& path) {
  auto raw = detail::gray16(labels.height, labels.width);
  for (size_t i = 0; i < labels.ids.size(); ++i) {
    const int32_t v = labels.ids[i];
    detail::require(v >= 0 && v <= 65535, "label id ", v, " does not fit in a 16-bit PNG");
    raw.bytes[2 * i] = static_cast<uint8_t>(v >> 8);
    raw.bytes[2 * i + 1] = static_cast<uint8_t>(v & 0xff);
  }
  detail::write_png(path, raw);
}

inline Mask load_mask(const std::filesystem::path& path) {
  const auto raw = detail::read_gray16(path);
  Mask m(static_cast<int>(raw.height), static_cast<int>(raw.width));
  for (size_t i = 0; i < m.on.size(); ++i) m.on[i] = (raw.bytes[2 * i] | raw.bytes[2 * i + 1]) != 0 ? 1 : 0;
  return m;
}

inline void save_mask(const Mask& mask, const std::filesystem::path& path) {
  auto raw = detail::gray16(mask.height, mask.width);
  for (size_t i = 0; i < mask.on.size(); ++i) raw.bytes[2 * i + 1] = mask.on[i] ? 1 : 0;
  detail::write_png(path, raw);
}

/// Writes an 8-bit PNG, mapping [lo, hi] linearly onto 0..255.
inline void save_image_png(const Image& img, const std::filesystem::path& path, float lo = 0.0f, float hi = 1.0f) {
  detail::require(img.channels == 1 || img.channels == 3, "image PNG needs 1 or 3 channels");
  detail::RawPng raw;
  raw.width = static_cast<uint32_t>(img.width);
  raw.height = static_cast<uint32_t>(img.height);
  raw.bit_depth = 8;
  raw.color_type = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  raw.bytes.resize(img.values.size());
  const float span = hi > lo ? hi - lo : 1.0f;
  for (size_t i = 0; i < img.values.size(); ++i) {
    const float t = std::clamp((img.values[i] - lo) / span, 0.0f, 1.0f);
    raw.bytes[i] = static_cast<uint8_t>(std::lround(t * 255.0f));
  }
  detail::write_png(path, raw);
}

/// Reads an 8-bit grayscale or RGB PNG into [0, 1].
inline Image load_image_png(const std::filesystem::path& path) {
  const auto raw = detail::read_png(path);
  if (raw.bit_depth != 8 || (raw.color_type != PNG_COLOR_TYPE_GRAY && raw.color_type != PNG_COLOR_TYPE_RGB))
    throw FormatError("'" + path.string() + "' must be an 8-bit grayscale or RGB PNG");
  const int channels = raw.color_type == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  Image img(static_cast<int>(raw.height), static_cast<int>(raw.width), channels);
  for (size_t i = 0; i < img.values.size(); ++i) img.values[i] = raw.bytes[i] / 255.0f;
  return img;
}

}  // namespace wnet
