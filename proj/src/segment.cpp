#include "recitygen/segment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "recitygen/error.hpp"

namespace recitygen {
namespace {

std::string describe(const ClickPoint& click) {
  return std::string(click.polarity == Polarity::Include ? "+" : "-") + "(" +
         std::to_string(click.x) + "," + std::to_string(click.y) + ")";
}

bool chebyshev_within(int x, int y, const ClickPoint& c, int radius) {
  return std::abs(x - c.x) <= radius && std::abs(y - c.y) <= radius;
}

BinaryMask grow(const ImageBuffer& image, std::span<const ClickPoint> clicks,
                const BinaryMask& barrier, const std::array<double, 3>& mean, double threshold) {
  const int w = image.width();
  const int h = image.height();
  BinaryMask region(w, h);
  std::vector<std::size_t> stack;
  const auto admissible = [&](int x, int y) {
    for (int c = 0; c < 3; ++c) {
      if (std::abs(static_cast<double>(image.at(x, y, c)) - mean[c]) > threshold) return false;
    }
    return true;
  };
  for (const auto& click : clicks) {
    if (click.polarity != Polarity::Include) continue;
    const std::size_t idx = static_cast<std::size_t>(click.y) * w + click.x;
    if (!region.test(idx)) {
      region.set(idx);
      stack.push_back(idx);
    }
  }
  while (!stack.empty()) {
    const std::size_t idx = stack.back();
    stack.pop_back();
    const int x = static_cast<int>(idx % w);
    const int y = static_cast<int>(idx / w);
    const std::array<std::array<int, 2>, 4> steps{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
    for (const auto& [dx, dy] : steps) {
      const int nx = x + dx;
      const int ny = y + dy;
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const std::size_t n = static_cast<std::size_t>(ny) * w + nx;
      if (region.test(n) || barrier.test(n) || !admissible(nx, ny)) continue;
      region.set(n);
      stack.push_back(n);
    }
  }
  return region;
}

}  // namespace

void sort_candidates(std::vector<MaskCandidate>& candidates) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const MaskCandidate& a, const MaskCandidate& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.mask.population() < b.mask.population();
                   });
}

std::vector<MaskCandidate> fallback_segment(const ImageBuffer& image,
                                            std::span<const ClickPoint> clicks,
                                            const SegmentationParams& params) {
  if (params.tolerance < 0 || params.tolerance > 255) {
    throw Error(ErrorCode::InvalidArgument, "tolerance must be within 0..255");
  }
  if (params.barrier_radius < 0) {
    throw Error(ErrorCode::InvalidArgument, "barrier_radius must be >= 0");
  }
  const int w = image.width();
  const int h = image.height();
  for (const auto& click : clicks) {
    if (!in_bounds(click, w, h)) {
      throw Error(ErrorCode::OutOfBounds, "click " + describe(click) + " outside " +
                                              std::to_string(w) + "x" + std::to_string(h));
    }
  }
  const auto includes = std::count_if(clicks.begin(), clicks.end(), [](const ClickPoint& c) {
    return c.polarity == Polarity::Include;
  });
  if (includes == 0) throw Error(ErrorCode::NoIncludeClick, "at least one '+' click required");

  BinaryMask barrier(w, h);
  for (const auto& ex : clicks) {
    if (ex.polarity != Polarity::Exclude) continue;
    for (const auto& in : clicks) {
      if (in.polarity == Polarity::Include &&
          chebyshev_within(in.x, in.y, ex, params.barrier_radius)) {
        throw Error(ErrorCode::IncludeInsideBarrier,
                    "include " + describe(in) + " within " +
                        std::to_string(params.barrier_radius) + " px of exclude " + describe(ex));
      }
    }
    const int x0 = std::max(0, ex.x - params.barrier_radius);
    const int x1 = std::min(w - 1, ex.x + params.barrier_radius);
    const int y0 = std::max(0, ex.y - params.barrier_radius);
    const int y1 = std::min(h - 1, ex.y + params.barrier_radius);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) barrier.set(x, y);
    }
  }

  std::array<double, 3> mean{0.0, 0.0, 0.0};
  for (const auto& click : clicks) {
    if (click.polarity != Polarity::Include) continue;
    for (int c = 0; c < 3; ++c) mean[c] += image.at(click.x, click.y, c);
  }
  for (auto& m : mean) m /= static_cast<double>(includes);

  const double tol = params.tolerance;
  std::vector<double> ladder{tol / 2.0, tol, std::min(2.0 * tol, 255.0)};
  ladder.erase(std::unique(ladder.begin(), ladder.end()), ladder.end());

  std::vector<MaskCandidate> candidates;
  candidates.reserve(ladder.size());
  for (const double t : ladder) {
    candidates.push_back({grow(image, clicks, barrier, mean, t), 1.0 - t / 256.0});
  }
  sort_candidates(candidates);
  return candidates;
}

}  // namespace recitygen
