#pragma once

#include <span>
#include <vector>

#include "recitygen/image.hpp"

namespace recitygen {

struct SegmentationParams {
  int tolerance = 32;       // max per-channel distance, 0..255
  int barrier_radius = 5;   // Chebyshev radius around each Exclude click
};

struct MaskCandidate {
  BinaryMask mask;
  double score = 0.0;

  bool operator==(const MaskCandidate&) const = default;
};

// Score descending, then smaller population first.
void sort_candidates(std::vector<MaskCandidate>& candidates);

// Offline promptable segmenter: 4-connected region growing from the Include
// clicks over a three-step tolerance ladder. Returns 1..3 candidates, tightest
// first; looser candidates always contain tighter ones.
std::vector<MaskCandidate> fallback_segment(const ImageBuffer& image,
                                            std::span<const ClickPoint> clicks,
                                            const SegmentationParams& params = {});

}  // namespace recitygen
