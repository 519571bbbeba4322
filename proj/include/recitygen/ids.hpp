#pragma once

#include <cstdint>
#include <mutex>
#include <random>
#include <string>
#include <string_view>

namespace recitygen {

// 26-character time-sortable identifiers: 48-bit millisecond timestamp then
// 80 random bits, Crockford base32. Within one generator every id is strictly
// greater than the previous one, even inside a single millisecond.
class IdGenerator {
 public:
  IdGenerator();

  std::string next();
  std::string next_at(std::uint64_t unix_ms);
  // Raises the floor so later ids sort after `id` (used after log replay).
  void observe(std::string_view id);

 private:
  __extension__ using u128 = unsigned __int128;

  std::mutex mutex_;
  std::mt19937_64 rng_;
  u128 last_ = 0;
};

// Shared generator for entries, variants, sessions and jobs.
IdGenerator& process_ids();

bool is_valid_id(std::string_view id) noexcept;
std::uint64_t id_timestamp_ms(std::string_view id);

std::int64_t unix_millis_now();

}  // namespace recitygen
