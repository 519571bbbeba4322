#include "recitygen/ids.hpp"

#include <chrono>

#include "recitygen/error.hpp"

namespace recitygen {
namespace {

__extension__ using u128 = unsigned __int128;

constexpr char kAlphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
constexpr int kLength = 26;

int decode_char(char c) noexcept {
  for (int i = 0; i < 32; ++i) {
    if (kAlphabet[i] == c) return i;
  }
  return -1;
}

}  // namespace

IdGenerator::IdGenerator() : rng_(std::random_device{}()) {}

std::string IdGenerator::next() { return next_at(static_cast<std::uint64_t>(unix_millis_now())); }

std::string IdGenerator::next_at(std::uint64_t unix_ms) {
  std::lock_guard lock(mutex_);
  const u128 hi = static_cast<u128>(rng_() & 0xFFFF) << 64;
  u128 value = (static_cast<u128>(unix_ms & 0xFFFFFFFFFFFFULL) << 80) | hi | rng_();
  if (value <= last_) {
    // Same or earlier millisecond: continue counting from the last id. The
    // carry out of the random field bumps the timestamp, keeping order.
    value = last_ + 1;
  }
  last_ = value;
  std::string out(kLength, '0');
  for (int i = kLength - 1; i >= 0; --i) {
    out[i] = kAlphabet[static_cast<unsigned>(value & 31)];
    value >>= 5;
  }
  return out;
}

void IdGenerator::observe(std::string_view id) {
  if (!is_valid_id(id)) return;
  u128 value = 0;
  for (const char c : id) value = (value << 5) | static_cast<u128>(decode_char(c));
  std::lock_guard lock(mutex_);
  if (value > last_) last_ = value;
}

IdGenerator& process_ids() {
  static IdGenerator generator;
  return generator;
}

bool is_valid_id(std::string_view id) noexcept {
  if (id.size() != kLength) return false;
  // The leading character carries only 3 bits.
  if (decode_char(id[0]) < 0 || decode_char(id[0]) > 7) return false;
  for (const char c : id) {
    if (decode_char(c) < 0) return false;
  }
  return true;
}

std::uint64_t id_timestamp_ms(std::string_view id) {
  if (!is_valid_id(id)) throw Error(ErrorCode::InvalidArgument, "malformed id");
  u128 value = 0;
  for (const char c : id) value = (value << 5) | static_cast<u128>(decode_char(c));
  return static_cast<std::uint64_t>(value >> 80);
}

std::int64_t unix_millis_now() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace recitygen
