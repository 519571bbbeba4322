#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace recitygen {

inline constexpr int kMaxImageSide = 8192;

// 8-bit RGB raster, row-major, 3 bytes per pixel.
class ImageBuffer {
 public:
  ImageBuffer(int width, int height);
  ImageBuffer(int width, int height, std::vector<std::uint8_t> rgb);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  std::uint8_t at(int x, int y, int channel) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + channel];
  }
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }

  bool operator==(const ImageBuffer&) const = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> data_;
};

// Packed row-major bitmap. Bits past width*height in the last word are kept
// zero so that word-wise comparison and popcount stay exact.
class BinaryMask {
 public:
  BinaryMask(int width, int height);

  static BinaryMask full(int width, int height);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  bool test(std::size_t index) const noexcept {
    return (words_[index >> 6] >> (index & 63)) & 1u;
  }
  bool get(int x, int y) const noexcept {
    return test(static_cast<std::size_t>(y) * width_ + x);
  }
  void set(std::size_t index, bool value = true) noexcept {
    const std::uint64_t bit = std::uint64_t{1} << (index & 63);
    if (value) {
      words_[index >> 6] |= bit;
    } else {
      words_[index >> 6] &= ~bit;
    }
  }
  void set(int x, int y, bool value = true) noexcept {
    set(static_cast<std::size_t>(y) * width_ + x, value);
  }

  std::size_t population() const noexcept;
  bool empty() const noexcept { return population() == 0; }
  bool same_shape(const BinaryMask& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }
  // True iff every set pixel of *this is also set in `other`.
  bool is_subset_of(const BinaryMask& other) const;

  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::span<std::uint64_t> words() noexcept { return words_; }
  // Clears the padding bits of the last word.
  void trim() noexcept;

  bool operator==(const BinaryMask&) const = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint64_t> words_;
};

// 8-bit per-pixel inpainting weight; 0 means the pixel must stay untouched.
class AlphaMask {
 public:
  AlphaMask(int width, int height);
  AlphaMask(int width, int height, std::vector<std::uint8_t> alpha);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::uint8_t at(int x, int y) const { return alpha_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t at(std::size_t index) const { return alpha_[index]; }
  void set(std::size_t index, std::uint8_t value) { alpha_[index] = value; }

  std::span<const std::uint8_t> data() const noexcept { return alpha_; }

  bool operator==(const AlphaMask&) const = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> alpha_;
};

enum class Polarity { Include, Exclude };

struct ClickPoint {
  int x = 0;
  int y = 0;
  Polarity polarity = Polarity::Include;

  bool operator==(const ClickPoint&) const = default;
};

inline bool in_bounds(const ClickPoint& click, int width, int height) noexcept {
  return click.x >= 0 && click.y >= 0 && click.x < width && click.y < height;
}

}  // namespace recitygen
