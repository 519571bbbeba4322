#include "recitygen/image.hpp"

#include <bit>
#include <string>

#include "recitygen/error.hpp"

namespace recitygen {
namespace {

void check_dimensions(int width, int height) {
  if (width < 1 || height < 1 || width > kMaxImageSide || height > kMaxImageSide) {
    throw Error(ErrorCode::InvalidArgument,
                "dimensions must be within 1.." + std::to_string(kMaxImageSide) + ", got " +
                    std::to_string(width) + "x" + std::to_string(height));
  }
}

std::size_t word_count(int width, int height) {
  return (static_cast<std::size_t>(width) * static_cast<std::size_t>(height) + 63) / 64;
}

}  // namespace

ImageBuffer::ImageBuffer(int width, int height) : width_(width), height_(height) {
  check_dimensions(width, height);
  data_.assign(pixel_count() * 3, 0);
}

ImageBuffer::ImageBuffer(int width, int height, std::vector<std::uint8_t> rgb)
    : width_(width), height_(height), data_(std::move(rgb)) {
  check_dimensions(width, height);
  if (data_.size() != pixel_count() * 3) {
    throw Error(ErrorCode::InvalidArgument, "RGB buffer length " + std::to_string(data_.size()) +
                                                " does not match " + std::to_string(width) + "x" +
                                                std::to_string(height) + "x3");
  }
}

void ImageBuffer::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const std::size_t base = (static_cast<std::size_t>(y) * width_ + x) * 3;
  data_[base] = r;
  data_[base + 1] = g;
  data_[base + 2] = b;
}

BinaryMask::BinaryMask(int width, int height) : width_(width), height_(height) {
  check_dimensions(width, height);
  words_.assign(word_count(width, height), 0);
}

BinaryMask BinaryMask::full(int width, int height) {
  BinaryMask mask(width, height);
  for (auto& word : mask.words_) word = ~std::uint64_t{0};
  mask.trim();
  return mask;
}

std::size_t BinaryMask::population() const noexcept {
  std::size_t total = 0;
  for (const auto word : words_) total += static_cast<std::size_t>(std::popcount(word));
  return total;
}

bool BinaryMask::is_subset_of(const BinaryMask& other) const {
  if (!same_shape(other)) {
    throw Error(ErrorCode::DimensionMismatch, "subset test on masks of different shape");
  }
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if ((words_[i] & ~other.words_[i]) != 0) return false;
  }
  return true;
}

void BinaryMask::trim() noexcept {
  const std::size_t tail = size() & 63;
  if (tail != 0 && !words_.empty()) {
    words_.back() &= (std::uint64_t{1} << tail) - 1;
  }
}

AlphaMask::AlphaMask(int width, int height) : width_(width), height_(height) {
  check_dimensions(width, height);
  alpha_.assign(static_cast<std::size_t>(width) * height, 0);
}

AlphaMask::AlphaMask(int width, int height, std::vector<std::uint8_t> alpha)
    : width_(width), height_(height), alpha_(std::move(alpha)) {
  check_dimensions(width, height);
  if (alpha_.size() != static_cast<std::size_t>(width) * height) {
    throw Error(ErrorCode::InvalidArgument, "alpha buffer length does not match dimensions");
  }
}

}  // namespace recitygen
