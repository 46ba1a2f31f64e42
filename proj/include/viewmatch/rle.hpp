#pragma once

// COCO-compatible run-length encoded binary masks. Pixels are stored in
// column-major order (index = x * height + y) and runs alternate starting
// with background, so the first count may be zero.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "viewmatch/error.hpp"

namespace viewmatch {

struct RleMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> counts;

  std::size_t area() const {
    std::size_t a = 0;
    for (std::size_t i = 1; i < counts.size(); i += 2) a += counts[i];
    return a;
  }

  friend bool operator==(const RleMask&, const RleMask&) = default;
};

namespace rle {

// `bitmap` is column-major, height * width entries; any nonzero byte is set.
inline RleMask encode(std::span<const std::uint8_t> bitmap, std::size_t height,
                      std::size_t width) {
  if (bitmap.size() != height * width) {
    fail(ErrorKind::data, "rle encode: bitmap has " + std::to_string(bitmap.size()) +
                              " pixels, expected " + std::to_string(height * width));
  }
  RleMask m{height, width, {}};
  std::uint32_t run = 0;
  bool value = false;
  for (std::uint8_t px : bitmap) {
    const bool on = px != 0;
    if (on != value) {
      m.counts.push_back(run);
      run = 0;
      value = on;
    }
    ++run;
  }
  m.counts.push_back(run);
  return m;
}

inline std::vector<std::uint8_t> decode(const RleMask& m) {
  std::vector<std::uint8_t> bitmap;
  bitmap.reserve(m.height * m.width);
  std::uint8_t value = 0;
  for (std::uint32_t c : m.counts) {
    bitmap.insert(bitmap.end(), c, value);
    value = !value;
  }
  if (bitmap.size() != m.height * m.width) {
    fail(ErrorKind::data, "rle decode: counts cover " + std::to_string(bitmap.size()) +
                              " pixels on a " + std::to_string(m.height) + "x" +
                              std::to_string(m.width) + " canvas");
  }
  return bitmap;
}

// Axis-aligned rectangle [x0, x1) x [y0, y1), clipped to the canvas.
inline RleMask from_rect(std::size_t height, std::size_t width, std::size_t x0,
                         std::size_t y0, std::size_t x1, std::size_t y1) {
  x1 = std::min(x1, width);
  y1 = std::min(y1, height);
  std::vector<std::uint8_t> bitmap(height * width, 0);
  for (std::size_t x = x0; x < x1; ++x) {
    for (std::size_t y = y0; y < y1; ++y) bitmap[x * height + y] = 1;
  }
  return encode(bitmap, height, width);
}

// COCO compressed string form: LEB128-like, 6 bits per char offset by 48,
// counts from the fourth on stored as deltas against counts[i - 2].
inline std::string to_string(const RleMask& m) {
  std::string s;
  for (std::size_t i = 0; i < m.counts.size(); ++i) {
    long long x = static_cast<long long>(m.counts[i]);
    if (i > 2) x -= static_cast<long long>(m.counts[i - 2]);
    bool more = true;
    while (more) {
      char c = static_cast<char>(x & 0x1f);
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      s.push_back(static_cast<char>(c + 48));
    }
  }
  return s;
}

inline RleMask from_string(std::string_view s, std::size_t height, std::size_t width) {
  RleMask m{height, width, {}};
  std::size_t k = 0;
  while (k < s.size()) {
    long long x = 0;
    int shift = 0;
    bool more = true;
    while (more) {
      if (k >= s.size()) fail(ErrorKind::data, "rle string truncated");
      const int c = static_cast<int>(s[k]) - 48;
      if (c < 0 || c > 63) fail(ErrorKind::data, "rle string has invalid character");
      x |= static_cast<long long>(c & 0x1f) << shift;
      more = (c & 0x20) != 0;
      ++k;
      shift += 5;
      if (!more && (c & 0x10)) x |= -1LL << shift;
      if (shift > 60) fail(ErrorKind::data, "rle string count overflow");
    }
    const std::size_t i = m.counts.size();
    if (i > 2) x += static_cast<long long>(m.counts[i - 2]);
    if (x < 0 || x > static_cast<long long>(UINT32_MAX)) {
      fail(ErrorKind::data, "rle string decodes to a negative run");
    }
    m.counts.push_back(static_cast<std::uint32_t>(x));
  }
  std::size_t total = 0;
  for (auto c : m.counts) total += c;
  if (total != height * width) {
    fail(ErrorKind::data, "rle string covers " + std::to_string(total) +
                              " pixels, canvas has " + std::to_string(height * width));
  }
  return m;
}

// Pixel-count intersection over union by walking both run lists together.
inline double iou(const RleMask& a, const RleMask& b) {
  if (a.height != b.height || a.width != b.width) {
    fail(ErrorKind::data, "mask iou: canvas mismatch");
  }
  std::size_t ia = 0, ib = 0;
  std::uint64_t ra = a.counts.empty() ? 0 : a.counts[0];
  std::uint64_t rb = b.counts.empty() ? 0 : b.counts[0];
  bool va = false, vb = false;
  std::uint64_t inter = 0, uni = 0;
  const auto advance = [](const RleMask& m, std::size_t& i, std::uint64_t& r, bool& v) {
    while (r == 0 && i + 1 < m.counts.size()) {
      r = m.counts[++i];
      v = !v;
    }
  };
  advance(a, ia, ra, va);
  advance(b, ib, rb, vb);
  while (ra > 0 && rb > 0) {
    const std::uint64_t step = std::min(ra, rb);
    if (va || vb) uni += step;
    if (va && vb) inter += step;
    ra -= step;
    rb -= step;
    advance(a, ia, ra, va);
    advance(b, ib, rb, vb);
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace rle
}  // namespace viewmatch
