#include "recitygen/codec.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <array>
#include <cstring>
#include <memory>

#include "recitygen/error.hpp"

namespace recitygen {
namespace {

std::uint32_t load_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

// Size gate straight from IHDR, so oversize input is rejected before libpng
// buffers anything.
void precheck_ihdr(std::span<const std::uint8_t> png) {
  constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (png.size() < 24 || std::memcmp(png.data(), kSignature, 8) != 0 ||
      std::memcmp(png.data() + 12, "IHDR", 4) != 0) {
    return;  // libpng reports the precise problem
  }
  const std::uint32_t w = load_be32(png.data() + 16);
  const std::uint32_t h = load_be32(png.data() + 20);
  if (w > static_cast<std::uint32_t>(kMaxImageSide) || h > static_cast<std::uint32_t>(kMaxImageSide)) {
    throw Error(ErrorCode::ImageTooLarge, std::to_string(w) + "x" + std::to_string(h) +
                                              " exceeds " + std::to_string(kMaxImageSide));
  }
}

struct PngReader {
  png_image image{};

  explicit PngReader(std::span<const std::uint8_t> png) {
    precheck_ihdr(png);
    image.version = PNG_IMAGE_VERSION;
    if (png.empty() ||
        !png_image_begin_read_from_memory(&image, png.data(), png.size())) {
      const std::string why = image.message[0] != '\0' ? image.message : "empty input";
      png_image_free(&image);
      throw Error(ErrorCode::BadImage, "PNG header: " + why);
    }
  }
  ~PngReader() { png_image_free(&image); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  void check_size() const {
    if (image.width > static_cast<png_uint_32>(kMaxImageSide) ||
        image.height > static_cast<png_uint_32>(kMaxImageSide)) {
      throw Error(ErrorCode::ImageTooLarge, std::to_string(image.width) + "x" +
                                                std::to_string(image.height) + " exceeds " +
                                                std::to_string(kMaxImageSide));
    }
    if (image.width == 0 || image.height == 0) {
      throw Error(ErrorCode::BadImage, "PNG has zero dimension");
    }
  }

  std::vector<std::uint8_t> finish(png_uint_32 format) {
    image.format = format;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
      throw Error(ErrorCode::BadImage, std::string("PNG decode: ") + image.message);
    }
    return pixels;
  }
};

Bytes write_png(const std::uint8_t* pixels, int width, int height, png_uint_32 format) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw Error(ErrorCode::BadImage, std::string("PNG encode: ") + image.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw Error(ErrorCode::BadImage, std::string("PNG encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

}  // namespace

PngHeader read_png_header(std::span<const std::uint8_t> png) {
  PngReader reader(png);
  reader.check_size();
  return {static_cast<int>(reader.image.width), static_cast<int>(reader.image.height)};
}

ImageBuffer decode_png_rgb(std::span<const std::uint8_t> png) {
  PngReader reader(png);
  reader.check_size();
  const int w = static_cast<int>(reader.image.width);
  const int h = static_cast<int>(reader.image.height);
  return ImageBuffer(w, h, reader.finish(PNG_FORMAT_RGB));
}

AlphaMask decode_png_gray(std::span<const std::uint8_t> png) {
  PngReader reader(png);
  reader.check_size();
  const int w = static_cast<int>(reader.image.width);
  const int h = static_cast<int>(reader.image.height);
  // Gray input passes through unchanged; colour input is converted by libpng.
  return AlphaMask(w, h, reader.finish(PNG_FORMAT_GRAY));
}

Bytes encode_png(const ImageBuffer& image) {
  return write_png(image.data().data(), image.width(), image.height(), PNG_FORMAT_RGB);
}

Bytes encode_png(const AlphaMask& alpha) {
  return write_png(alpha.data().data(), alpha.width(), alpha.height(), PNG_FORMAT_GRAY);
}

std::string sha256_hex(std::span<const std::uint8_t> data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (!EVP_Digest(data.data(), data.size(), digest.data(), &length, EVP_sha256(), nullptr)) {
    throw Error(ErrorCode::IoError, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0x0F]);
  }
  return hex;
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (const unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                                static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) {
    throw Error(ErrorCode::InvalidArgument, "base64 length is not a multiple of 4");
  }
  Bytes out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::InvalidArgument, "malformed base64");
  std::size_t padding = 0;
  if (!text.empty() && text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

}  // namespace recitygen
