#pragma once

// 8-bit rasters, binary masks, pixel boxes and binary PPM/PGM I/O.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "svr/error.hpp"

namespace svr {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;  // row-major, interleaved channels

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0) : width(w), height(h), channels(c) {
    if (w < 0 || h < 0 || (c != 1 && c != 3)) throw Error(ErrorCode::InvalidArgument, "image: bad dimensions");
    data.assign(static_cast<std::size_t>(w) * h * c, fill);
  }

  [[nodiscard]] std::size_t index(int x, int y, int ch = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + ch;
  }
  [[nodiscard]] std::uint8_t at(int x, int y, int ch = 0) const { return data[index(x, y, ch)]; }
  std::uint8_t& at(int x, int y, int ch = 0) { return data[index(x, y, ch)]; }

  void validate() const {
    if (data.size() != static_cast<std::size_t>(width) * height * channels)
      throw Error(ErrorCode::ShapeMismatch, "image: data length does not match dimensions");
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // 0 or 1

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0) : width(w), height(h) {
    if (w < 0 || h < 0) throw Error(ErrorCode::InvalidArgument, "mask: bad dimensions");
    bits.assign(static_cast<std::size_t>(w) * h, fill);
  }

  [[nodiscard]] std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }

  [[nodiscard]] std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }

  void validate() const {
    if (bits.size() != static_cast<std::size_t>(width) * height)
      throw Error(ErrorCode::ShapeMismatch, "mask: data length does not match dimensions");
    for (auto b : bits) {
      if (b > 1) throw Error(ErrorCode::InvalidMask, "mask: values must be 0 or 1");
    }
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1) with a class tag.
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
  int cls = 0;

  [[nodiscard]] long area() const { return std::max(0, x1 - x0) * static_cast<long>(std::max(0, y1 - y0)); }
  friend bool operator==(const Box&, const Box&) = default;
};

[[nodiscard]] inline double box_iou(const Box& a, const Box& b) {
  const Box i{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  const long inter = i.area();
  const long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

/// Tight box of the set pixels, or nothing for an empty mask.
[[nodiscard]] inline std::optional<Box> mask_bbox(const Mask& m, int cls = 0) {
  Box b{m.width, m.height, 0, 0, cls};
  bool any = false;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      any = true;
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x + 1);
      b.y1 = std::max(b.y1, y + 1);
    }
  if (!any) return std::nullopt;
  return b;
}

// ---------------------------------------------------------------------------
// Netpbm I/O

namespace detail {

inline std::string read_token(std::istream& in) {
  std::string tok;
  char c = 0;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

inline void write_netpbm(const std::string& path, const char* magic, int w, int h, const std::uint8_t* data,
                         std::size_t n) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot open for writing: " + path);
  out << magic << "\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw Error(ErrorCode::InvalidArgument, "write failed: " + path);
}

inline std::vector<std::uint8_t> read_netpbm(const std::string& path, const std::string& magic, int& w, int& h,
                                             int channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open: " + path);
  if (read_token(in) != magic) throw Error(ErrorCode::UnsupportedVersion, "unexpected netpbm magic in " + path);
  try {
    w = std::stoi(read_token(in));
    h = std::stoi(read_token(in));
    if (std::stoi(read_token(in)) != 255) throw Error(ErrorCode::UnsupportedVersion, "only 8-bit netpbm supported");
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::CorruptRecord, "malformed netpbm header in " + path);
  }
  std::vector<std::uint8_t> data(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (in.gcount() != static_cast<std::streamsize>(data.size()))
    throw Error(ErrorCode::CorruptRecord, "truncated raster in " + path);
  return data;
}

}  // namespace detail

/// RGB images as P6, gray images as P5.
inline void write_image(const std::string& path, const Image& img) {
  img.validate();
  detail::write_netpbm(path, img.channels == 3 ? "P6" : "P5", img.width, img.height, img.data.data(),
                       img.data.size());
}

[[nodiscard]] inline Image read_image(const std::string& path, int channels = 3) {
  Image img;
  img.channels = channels;
  img.data = detail::read_netpbm(path, channels == 3 ? "P6" : "P5", img.width, img.height, channels);
  return img;
}

/// Masks are stored as P5 with values 0/255.
inline void write_mask(const std::string& path, const Mask& m) {
  std::vector<std::uint8_t> px(m.bits.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = m.bits[i] ? 255 : 0;
  detail::write_netpbm(path, "P5", m.width, m.height, px.data(), px.size());
}

[[nodiscard]] inline Mask read_mask(const std::string& path) {
  Mask m;
  m.bits = detail::read_netpbm(path, "P5", m.width, m.height, 1);
  for (auto& b : m.bits) b = b >= 128 ? 1 : 0;
  return m;
}

}  // namespace svr
