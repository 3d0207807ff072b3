#pragma once

#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "lgc/common.hpp"
#include "lgc/tensor.hpp"

namespace lgc::data {

// Binary PPM (P6) for images, binary PGM (P5) for class-index masks: simple,
// lossless, bit-exact across platforms.

namespace detail {

inline int read_pnm_token(std::istream& in, const std::string& path) {
  // skips whitespace and '#' comments, then reads one non-negative integer
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) throw IoError("malformed header: " + path);
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    if (v > 1 << 20) throw IoError("header value out of range: " + path);
    c = in.get();
  }
  if (c != EOF && !std::isspace(c)) throw IoError("malformed header: " + path);
  return v;
}

inline uint8_t to_byte(float v) {
  float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

}  // namespace detail

// image: (3, H, W), values in [0,1]
inline void write_ppm(const std::string& path, const nn::TensorF& img) {
  check(img.ndim() == 3 && img.dim(0) == 3, "write_ppm expects (3,H,W), got " + img.shape_str());
  const int h = img.dim(1), w = img.dim(2);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; y++) {
    for (int x = 0; x < w; x++)
      for (int c = 0; c < 3; c++)
        row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] =
            detail::to_byte(img[(static_cast<int64_t>(c) * h + y) * w + x]);
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("write failed: " + path);
}

inline nn::TensorF read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char m0 = static_cast<char>(f.get()), m1 = static_cast<char>(f.get());
  if (m0 != 'P' || m1 != '6') throw IoError("not a P6 image: " + path);
  const int w = detail::read_pnm_token(f, path);
  const int h = detail::read_pnm_token(f, path);
  const int maxval = detail::read_pnm_token(f, path);
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported P6 header: " + path);
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw IoError("truncated pixel data: " + path);
  nn::TensorF img({3, h, w});
  for (int y = 0; y < h; y++)
    for (int x = 0; x < w; x++)
      for (int c = 0; c < 3; c++)
        img[(static_cast<int64_t>(c) * h + y) * w + x] =
            static_cast<float>(raw[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(c)]) / 255.0f;
  return img;
}

// mask: (H, W) of class indices 0..255
inline void write_pgm(const std::string& path, const nn::TensorI& mask) {
  check(mask.ndim() == 2, "write_pgm expects (H,W), got " + mask.shape_str());
  const int h = mask.dim(0), w = mask.dim(1);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(w));
  for (int y = 0; y < h; y++) {
    for (int x = 0; x < w; x++) {
      int32_t v = mask[static_cast<int64_t>(y) * w + x];
      check(v >= 0 && v <= 255, "mask value out of byte range");
      row[static_cast<size_t>(x)] = static_cast<uint8_t>(v);
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("write failed: " + path);
}

inline nn::TensorI read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char m0 = static_cast<char>(f.get()), m1 = static_cast<char>(f.get());
  if (m0 != 'P' || m1 != '5') throw IoError("not a P5 mask: " + path);
  const int w = detail::read_pnm_token(f, path);
  const int h = detail::read_pnm_token(f, path);
  const int maxval = detail::read_pnm_token(f, path);
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported P5 header: " + path);
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw IoError("truncated mask data: " + path);
  nn::TensorI mask({h, w});
  for (int64_t i = 0; i < mask.numel(); i++) mask[i] = raw[static_cast<size_t>(i)];
  return mask;
}

}  // namespace lgc::data
