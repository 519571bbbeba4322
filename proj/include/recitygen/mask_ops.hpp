#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "recitygen/image.hpp"

namespace recitygen {

// Set algebra. Binary operations throw DimensionMismatch on shape mismatch.
BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_subtract(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_intersection(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_invert(const BinaryMask& a);

// Morphology with a (2k+1)x(2k+1) square structuring element. Pixels outside
// the grid count as unset, so erosion clears a k-wide border.
BinaryMask dilate(const BinaryMask& a, int radius);
BinaryMask erode(const BinaryMask& a, int radius);

// Binary -> alpha: 255 on the mask, a linear ramp over Chebyshev distance
// 1..radius outside it, 0 beyond.
AlphaMask feather(const BinaryMask& a, int radius);

// Per-pixel Chebyshev distance to the nearest set pixel; -1 everywhere when
// the mask is empty.
std::vector<int> chebyshev_distance(const BinaryMask& a);

using RunLengths = std::vector<std::uint64_t>;

// Row-major run lengths alternating 0-runs and 1-runs, always starting with
// a (possibly empty) 0-run.
RunLengths rle_encode(const BinaryMask& a);
BinaryMask rle_decode(std::span<const std::uint64_t> runs, int width, int height);

// 4-connected components ordered by their first set pixel in row-major order.
std::vector<BinaryMask> connected_components(const BinaryMask& a);

}  // namespace recitygen
