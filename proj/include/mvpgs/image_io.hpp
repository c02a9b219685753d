// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <png.h>

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mvpgs/geometry.hpp"

namespace mvpgs {

// File codecs for the pipeline's on-disk artifacts:
//   PPM (P6, 8-bit)              color images
//   PNG (8-bit RGB)              color images
//   PFM (grayscale, scale -1.0)  depth maps, f32, bottom-up scanlines
//   PGM (P5, 8-bit)              binary masks, 0/255
// Colors convert to/from [0,1] by /255. All round-trip bit-exactly on their
// native payloads.

namespace detail {

inline void skip_pnm_whitespace(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& in) {
  skip_pnm_whitespace(in);
  int v = -1;
  in >> v;
  if (!in || v < 0) throw IoError("malformed PNM header");
  return v;
}

inline uint8_t to_byte(float v) {
  float x = v;
  if (!(x >= 0.f)) x = 0.f;  // also catches NaN
  if (x > 1.f) x = 1.f;
  return static_cast<uint8_t>(std::lround(x * 255.f));
}

}  // namespace detail

// --------------------------------- PPM ------------------------------------

inline void write_ppm(const std::string& path, const Image& img) {
  std::ostringstream head;
  head << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::string h = head.str();
  std::vector<uint8_t> buf(h.size() + img.data.size());
  std::memcpy(buf.data(), h.data(), h.size());
  for (size_t i = 0; i < img.data.size(); ++i) buf[h.size() + i] = detail::to_byte(img.data[i]);
  detail::write_file(path, buf.data(), buf.size());
}

inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("cannot open: " + path);
  char m0 = 0, m1 = 0;
  in.get(m0).get(m1);
  if (m0 != 'P' || m1 != '6') throw IoError("not a P6 PPM: " + path);
  const int w = detail::read_pnm_int(in);
  const int h = detail::read_pnm_int(in);
  const int maxval = detail::read_pnm_int(in);
  if (maxval != 255) throw IoError("only 8-bit PPM supported: " + path);
  in.get();  // single whitespace after maxval
  Image img(w, h);
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("truncated PPM payload: " + path);
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.f;
  return img;
}

// --------------------------------- PGM ------------------------------------

inline void write_pgm_mask(const std::string& path, const std::vector<uint8_t>& mask, int w, int h) {
  require(mask.size() == static_cast<size_t>(w) * h, "write_pgm_mask: size mismatch");
  std::ostringstream head;
  head << "P5\n" << w << " " << h << "\n255\n";
  std::string hd = head.str();
  std::vector<uint8_t> buf(hd.size() + mask.size());
  std::memcpy(buf.data(), hd.data(), hd.size());
  for (size_t i = 0; i < mask.size(); ++i) buf[hd.size() + i] = mask[i] ? 255 : 0;
  detail::write_file(path, buf.data(), buf.size());
}

inline std::vector<uint8_t> read_pgm_mask(const std::string& path, int* w_out = nullptr,
                                          int* h_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("cannot open: " + path);
  char m0 = 0, m1 = 0;
  in.get(m0).get(m1);
  if (m0 != 'P' || m1 != '5') throw IoError("not a P5 PGM: " + path);
  const int w = detail::read_pnm_int(in);
  const int h = detail::read_pnm_int(in);
  const int maxval = detail::read_pnm_int(in);
  if (maxval != 255) throw IoError("only 8-bit PGM supported: " + path);
  in.get();
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("truncated PGM payload: " + path);
  for (auto& v : raw) v = v >= 128 ? 1 : 0;
  if (w_out) *w_out = w;
  if (h_out) *h_out = h;
  return raw;
}

// --------------------------------- PFM ------------------------------------
// Grayscale "Pf", scale -1.0 (little-endian), scanlines stored bottom-up.

inline void write_pfm(const std::string& path, const DepthMap& dm) {
  std::ostringstream head;
  head << "Pf\n" << dm.width << " " << dm.height << "\n-1.0\n";
  std::string hd = head.str();
  std::vector<uint8_t> buf(hd.size() + dm.depth.size() * 4);
  std::memcpy(buf.data(), hd.data(), hd.size());
  size_t off = hd.size();
  for (int y = dm.height - 1; y >= 0; --y) {
    for (int x = 0; x < dm.width; ++x) {
      uint32_t bits;
      const float v = dm.depth[dm.idx(x, y)];
      std::memcpy(&bits, &v, 4);
      buf[off++] = static_cast<uint8_t>(bits & 0xff);
      buf[off++] = static_cast<uint8_t>((bits >> 8) & 0xff);
      buf[off++] = static_cast<uint8_t>((bits >> 16) & 0xff);
      buf[off++] = static_cast<uint8_t>((bits >> 24) & 0xff);
    }
  }
  detail::write_file(path, buf.data(), buf.size());
}

inline DepthMap read_pfm(const std::string& path, DepthRole role = DepthRole::Mvs) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("cannot open: " + path);
  std::string magic;
  in >> magic;
  if (magic != "Pf") throw IoError("not a grayscale PFM: " + path);
  int w = 0, h = 0;
  double scale = 0;
  in >> w >> h >> scale;
  if (!in || w <= 0 || h <= 0) throw IoError("malformed PFM header: " + path);
  if (scale >= 0) throw IoError("big-endian PFM unsupported: " + path);
  in.get();
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("truncated PFM payload: " + path);
  DepthMap dm(w, h, role);
  size_t off = 0;
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      uint32_t bits = static_cast<uint32_t>(raw[off]) | (static_cast<uint32_t>(raw[off + 1]) << 8) |
                      (static_cast<uint32_t>(raw[off + 2]) << 16) |
                      (static_cast<uint32_t>(raw[off + 3]) << 24);
      off += 4;
      float v;
      std::memcpy(&v, &bits, 4);
      dm.depth[dm.idx(x, y)] = v;
      dm.valid[dm.idx(x, y)] = v > 0.f ? 1 : 0;
    }
  }
  return dm;
}

// --------------------------------- PNG ------------------------------------

inline void write_png(const std::string& path, const Image& img) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = detail::to_byte(img.at(x, y, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Image read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw MissingInput("cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng read failed: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  // Normalize any color type / bit depth to 8-bit RGB.
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  Image img(w, h);
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = row[static_cast<size_t>(x) * 3 + c] / 255.f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

// Dispatch on extension; accepts .ppm and .png.
inline Image read_image(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") return read_png(path);
  return read_ppm(path);
}

}  // namespace mvpgs
