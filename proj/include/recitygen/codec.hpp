#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recitygen/image.hpp"

namespace recitygen {

using Bytes = std::vector<std::uint8_t>;

// PNG at module boundaries. Decoders accept any PNG colour type and convert;
// they throw BadImage on malformed input and ImageTooLarge when either side
// exceeds kMaxImageSide (checked from the header, before pixel allocation).
ImageBuffer decode_png_rgb(std::span<const std::uint8_t> png);
AlphaMask decode_png_gray(std::span<const std::uint8_t> png);
Bytes encode_png(const ImageBuffer& image);
Bytes encode_png(const AlphaMask& alpha);

struct PngHeader {
  int width = 0;
  int height = 0;
};
PngHeader read_png_header(std::span<const std::uint8_t> png);

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> data);

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

// splitmix64 output finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string base64_encode(std::span<const std::uint8_t> data);
// Throws InvalidArgument on malformed input.
Bytes base64_decode(std::string_view text);

inline std::span<const std::uint8_t> as_bytes(std::string_view s) noexcept {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace recitygen
