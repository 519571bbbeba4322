#include "recitygen/mask_ops.hpp"

#include <algorithm>
#include <deque>
#include <string>

#include "recitygen/error.hpp"

namespace recitygen {
namespace {

void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(op) + ": " + std::to_string(a.width()) + "x" +
                    std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                    std::to_string(b.height()));
  }
}

void require_radius(int radius) {
  if (radius < 0) throw Error(ErrorCode::InvalidArgument, "radius must be >= 0");
}

template <typename WordOp>
BinaryMask combine(const BinaryMask& a, const BinaryMask& b, WordOp op) {
  BinaryMask out(a.width(), a.height());
  auto dst = out.words();
  const auto lhs = a.words();
  const auto rhs = b.words();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = op(lhs[i], rhs[i]);
  out.trim();
  return out;
}

// One separable pass along a line of `length` cells. `keep_all` selects
// erosion (every cell of the clipped window set and the window not clipped)
// versus dilation (any cell set).
void window_pass(const std::vector<std::uint8_t>& in, std::vector<std::uint8_t>& out,
                 std::size_t start, std::size_t stride, int length, int radius, bool keep_all,
                 std::vector<int>& prefix) {
  prefix.assign(static_cast<std::size_t>(length) + 1, 0);
  for (int i = 0; i < length; ++i) {
    prefix[i + 1] = prefix[i] + in[start + static_cast<std::size_t>(i) * stride];
  }
  for (int i = 0; i < length; ++i) {
    const int lo = i - radius;
    const int hi = i + radius;
    const int count = prefix[std::min(hi, length - 1) + 1] - prefix[std::max(lo, 0)];
    bool value;
    if (keep_all) {
      value = lo >= 0 && hi < length && count == 2 * radius + 1;
    } else {
      value = count > 0;
    }
    out[start + static_cast<std::size_t>(i) * stride] = value ? 1 : 0;
  }
}

BinaryMask morph(const BinaryMask& a, int radius, bool erode_mode) {
  require_radius(radius);
  if (radius == 0) return a;
  const int w = a.width();
  const int h = a.height();
  std::vector<std::uint8_t> cells(a.size());
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = a.test(i) ? 1 : 0;
  std::vector<std::uint8_t> rows(cells.size());
  std::vector<int> prefix;
  for (int y = 0; y < h; ++y) {
    window_pass(cells, rows, static_cast<std::size_t>(y) * w, 1, w, radius, erode_mode, prefix);
  }
  for (int x = 0; x < w; ++x) {
    window_pass(rows, cells, static_cast<std::size_t>(x), static_cast<std::size_t>(w), h, radius,
                erode_mode, prefix);
  }
  BinaryMask out(w, h);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i]) out.set(i);
  }
  return out;
}

}  // namespace

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "union");
  return combine(a, b, [](std::uint64_t x, std::uint64_t y) { return x | y; });
}

BinaryMask mask_subtract(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "subtract");
  return combine(a, b, [](std::uint64_t x, std::uint64_t y) { return x & ~y; });
}

BinaryMask mask_intersection(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "intersection");
  return combine(a, b, [](std::uint64_t x, std::uint64_t y) { return x & y; });
}

BinaryMask mask_invert(const BinaryMask& a) {
  BinaryMask out(a.width(), a.height());
  auto dst = out.words();
  const auto src = a.words();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = ~src[i];
  out.trim();
  return out;
}

BinaryMask dilate(const BinaryMask& a, int radius) { return morph(a, radius, false); }

BinaryMask erode(const BinaryMask& a, int radius) { return morph(a, radius, true); }

std::vector<int> chebyshev_distance(const BinaryMask& a) {
  const int w = a.width();
  const int h = a.height();
  constexpr int kFar = 1 << 29;
  std::vector<int> dist(a.size(), kFar);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (a.test(i)) dist[i] = 0;
  }
  auto at = [&](int x, int y) -> int& { return dist[static_cast<std::size_t>(y) * w + x]; };
  // Two-pass chamfer with unit weights on all 8 neighbours is exact for the
  // chessboard metric.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int d = at(x, y);
      if (x > 0) d = std::min(d, at(x - 1, y) + 1);
      if (y > 0) {
        d = std::min(d, at(x, y - 1) + 1);
        if (x > 0) d = std::min(d, at(x - 1, y - 1) + 1);
        if (x + 1 < w) d = std::min(d, at(x + 1, y - 1) + 1);
      }
      at(x, y) = d;
    }
  }
  for (int y = h - 1; y >= 0; --y) {
    for (int x = w - 1; x >= 0; --x) {
      int d = at(x, y);
      if (x + 1 < w) d = std::min(d, at(x + 1, y) + 1);
      if (y + 1 < h) {
        d = std::min(d, at(x, y + 1) + 1);
        if (x + 1 < w) d = std::min(d, at(x + 1, y + 1) + 1);
        if (x > 0) d = std::min(d, at(x - 1, y + 1) + 1);
      }
      at(x, y) = d;
    }
  }
  for (auto& d : dist) {
    if (d >= kFar) d = -1;
  }
  return dist;
}

AlphaMask feather(const BinaryMask& a, int radius) {
  require_radius(radius);
  AlphaMask out(a.width(), a.height());
  const auto dist = chebyshev_distance(a);
  const int span = radius + 1;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const int d = dist[i];
    if (d < 0 || d > radius) continue;
    // round(255 * (span - d) / span), half rounded up, in integers.
    const int numerator = 2 * 255 * (span - d) + span;
    out.set(i, static_cast<std::uint8_t>(numerator / (2 * span)));
  }
  return out;
}

RunLengths rle_encode(const BinaryMask& a) {
  RunLengths runs;
  bool current = false;
  std::uint64_t count = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool bit = a.test(i);
    if (bit != current) {
      runs.push_back(count);
      current = bit;
      count = 0;
    }
    ++count;
  }
  runs.push_back(count);
  return runs;
}

BinaryMask rle_decode(std::span<const std::uint64_t> runs, int width, int height) {
  BinaryMask out(width, height);
  const std::uint64_t total = out.size();
  std::uint64_t pos = 0;
  bool value = false;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::uint64_t run = runs[i];
    if (run == 0 && i != 0) {
      throw Error(ErrorCode::IllegalZeroRun, "zero-length run at position " + std::to_string(i));
    }
    if (run > total - pos) {
      throw Error(ErrorCode::RunSumMismatch,
                  "runs exceed " + std::to_string(total) + " pixels at position " +
                      std::to_string(i));
    }
    if (value) {
      for (std::uint64_t k = 0; k < run; ++k) out.set(static_cast<std::size_t>(pos + k));
    }
    pos += run;
    value = !value;
  }
  if (pos != total) {
    throw Error(ErrorCode::RunSumMismatch,
                "runs sum to " + std::to_string(pos) + ", expected " + std::to_string(total));
  }
  return out;
}

std::vector<BinaryMask> connected_components(const BinaryMask& a) {
  const int w = a.width();
  const int h = a.height();
  std::vector<std::uint8_t> visited(a.size(), 0);
  std::vector<BinaryMask> components;
  std::deque<std::size_t> frontier;
  for (std::size_t start = 0; start < a.size(); ++start) {
    if (!a.test(start) || visited[start]) continue;
    BinaryMask component(w, h);
    visited[start] = 1;
    frontier.push_back(start);
    while (!frontier.empty()) {
      const std::size_t idx = frontier.front();
      frontier.pop_front();
      component.set(idx);
      const int x = static_cast<int>(idx % w);
      const int y = static_cast<int>(idx / w);
      const auto visit = [&](int nx, int ny) {
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) return;
        const std::size_t n = static_cast<std::size_t>(ny) * w + nx;
        if (a.test(n) && !visited[n]) {
          visited[n] = 1;
          frontier.push_back(n);
        }
      };
      visit(x - 1, y);
      visit(x + 1, y);
      visit(x, y - 1);
      visit(x, y + 1);
    }
    components.push_back(std::move(component));
  }
  return components;
}

}  // namespace recitygen
