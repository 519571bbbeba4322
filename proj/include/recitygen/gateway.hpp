#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recitygen/error.hpp"
#include "recitygen/image.hpp"
#include "recitygen/segment.hpp"

namespace recitygen {

enum class BackendKind { Mock, Http };

// What the gateway does when an inpainter touches alpha-0 pixels.
enum class OutsideMaskPolicy {
  Composite,  // copy the source pixels back
  Reject,     // raise ProtocolError
};

struct BackendRef {
  BackendKind kind = BackendKind::Mock;
  std::string endpoint;  // absolute http:// URL, Http only
  std::chrono::milliseconds timeout{30000};
  std::chrono::milliseconds mock_delay{0};  // artificial latency, Mock only
  OutsideMaskPolicy outside_mask = OutsideMaskPolicy::Composite;

  static BackendRef mock(std::chrono::milliseconds delay = std::chrono::milliseconds{0});
  static BackendRef http(std::string endpoint,
                         std::chrono::milliseconds timeout = std::chrono::milliseconds{30000});

  // Accepts "mock", "mock:delay_ms=N" or an http:// URL. Throws InvalidBackend.
  static BackendRef parse(std::string_view spec);
  std::string describe() const;
};

struct InpaintRequest {
  ImageBuffer image;
  AlphaMask alpha;
  std::string prompt;
  std::uint64_t seed = 0;
  int num_variants = 3;
};

struct InpaintResult {
  std::vector<ImageBuffer> variants;
  std::string backend_id;
  std::chrono::milliseconds elapsed{0};
};

struct HealthStatus {
  enum class State { Ok, Degraded, Down };
  State state = State::Ok;
  std::string detail;

  bool ok() const noexcept { return state == State::Ok; }
};
std::string_view state_name(HealthStatus::State state);

inline constexpr std::size_t kMaxPromptChars = 500;
inline constexpr int kMaxVariants = 8;

// Number of UTF-8 code points.
std::size_t utf8_length(std::string_view text) noexcept;
// PromptEmpty / PromptTooLong, or nullopt when the prompt is acceptable.
std::optional<ErrorCode> prompt_problem(std::string_view prompt) noexcept;
// Throws InvalidRequest naming the first violated invariant.
void validate(const InpaintRequest& request);

std::vector<MaskCandidate> segment(const BackendRef& backend, const ImageBuffer& image,
                                   std::span<const ClickPoint> clicks);
InpaintResult inpaint(const BackendRef& backend, const InpaintRequest& request);
HealthStatus health_check(const BackendRef& backend);

// The procedural fill used by the mock inpainter. Pixel p (row-major index) of
// variant i with alpha > 0 takes bytes 0..2 (least significant first) of
// mix64(fnv1a64(prompt) ^ seed ^ (i * 0x9E3779B97F4A7C15) ^ p).
ImageBuffer mock_inpaint_variant(const ImageBuffer& image, const AlphaMask& alpha,
                                 std::string_view prompt, std::uint64_t seed, int index);

}  // namespace recitygen
