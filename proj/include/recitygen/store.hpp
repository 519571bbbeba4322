#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "recitygen/codec.hpp"
#include "recitygen/geo.hpp"
#include "recitygen/image.hpp"

namespace recitygen {

inline constexpr std::size_t kMaxNoteChars = 1000;
inline constexpr int kQuestionCount = 7;

struct FeedbackEntry {
  std::string id;
  GeoPoint geo;
  std::string image_ref;  // sha256 hex of the source PNG
  std::int64_t created_at = 0;
  std::optional<std::string> note;

  bool operator==(const FeedbackEntry&) const = default;
};

struct GeneratedVariant {
  std::string variant_id;
  std::string job_id;
  std::string entry_id;
  std::string image_ref;
  std::string prompt;
  std::uint64_t seed = 0;
  std::string backend_id;
  std::int64_t created_at = 0;

  bool operator==(const GeneratedVariant&) const = default;
};

struct Rating {
  std::string variant_id;
  int score = 0;
  std::int64_t created_at = 0;

  bool operator==(const Rating&) const = default;
};

// Questionnaire answers in questionnaire order: satisfaction, continued use,
// recommend, rapid generation, requirement fit, self-design preference,
// convenience. Each on a 1..5 scale.
struct QuestionnaireResponse {
  std::string entry_id;
  std::array<int, kQuestionCount> answers{};
  std::string gender;
  std::string education;
  std::string birth_year;
  std::string profession;
  std::string design_background;
  std::string open_feedback;
  std::int64_t created_at = 0;

  bool operator==(const QuestionnaireResponse&) const = default;
};

struct Stats {
  std::uint64_t responses = 0;
  std::uint64_t rating_count = 0;
  // questions[q][s] counts answers of score s+1 to question q+1.
  std::array<std::array<std::uint64_t, 5>, kQuestionCount> questions{};
  std::array<std::uint64_t, 5> ratings{};

  // One line per histogram, e.g. "q1: 1:0 2:0 3:0 4:1 5:2".
  std::string to_text() const;
  bool operator==(const Stats&) const = default;
};

struct Neighbor {
  FeedbackEntry entry;
  double distance_m = 0.0;
};

struct NewVariant {
  std::string job_id;
  std::string entry_id;
  const ImageBuffer* image = nullptr;
  std::string prompt;
  std::uint64_t seed = 0;
  std::string backend_id;
};

// Append-only event log (events.jsonl) plus content-addressed PNG blobs
// (blobs/<sha256>.png) under one data directory. One process owns a store;
// writers are serialized, readers see only committed events.
class Store {
 public:
  // Replays the log. A torn final line is truncated away with a warning;
  // any earlier bad line is CorruptLog.
  explicit Store(std::filesystem::path data_dir);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const std::filesystem::path& data_dir() const noexcept { return dir_; }
  const std::vector<std::string>& recovery_warnings() const noexcept { return warnings_; }

  FeedbackEntry create_entry(const GeoPoint& geo, std::span<const std::uint8_t> png,
                             std::optional<std::string> note = std::nullopt);
  GeneratedVariant save_variant(const NewVariant& variant);
  Rating save_rating(const std::string& variant_id, int score);
  QuestionnaireResponse save_questionnaire(QuestionnaireResponse response);

  std::optional<FeedbackEntry> entry(const std::string& id) const;
  std::vector<FeedbackEntry> entries() const;
  std::optional<GeneratedVariant> variant(const std::string& id) const;
  std::vector<GeneratedVariant> variants_for_entry(const std::string& entry_id) const;
  std::vector<Rating> ratings() const;
  std::vector<QuestionnaireResponse> questionnaires() const;

  std::vector<FeedbackEntry> query_bbox(double min_lat, double min_lon, double max_lat,
                                        double max_lon) const;
  std::vector<Neighbor> query_nearest(const GeoPoint& geo, std::size_t k) const;

  Stats aggregate_stats() const;
  std::size_t event_count() const;

  Bytes read_blob(const std::string& image_ref) const;
  ImageBuffer load_image(const std::string& image_ref) const;

  // Writes the event stream to `out` and the referenced blobs to
  // out.parent_path()/blobs, so exporting to D/events.jsonl yields an
  // openable data directory D.
  std::size_t export_jsonl(const std::filesystem::path& out) const;
  // Appends every event of an exported file, copying blobs from the
  // file's sibling blobs/ directory.
  std::size_t import_jsonl(const std::filesystem::path& in);

 private:
  struct Event;

  void replay();
  // Throws on any invariant violation against the current state.
  void check(const Event& event) const;
  void index(const Event& event);
  void append(const Event& event);
  std::string put_blob(std::span<const std::uint8_t> png);
  std::filesystem::path blob_path(const std::string& image_ref) const;

  std::filesystem::path dir_;
  int log_fd_ = -1;
  std::vector<std::string> warnings_;

  mutable std::shared_mutex mutex_;
  std::vector<std::string> lines_;
  std::map<std::string, FeedbackEntry> entries_;
  std::multimap<double, std::string> by_lat_;
  std::map<std::string, GeneratedVariant> variants_;
  std::multimap<std::string, std::string> variants_by_entry_;
  std::vector<Rating> ratings_;
  std::vector<QuestionnaireResponse> questionnaires_;
};

}  // namespace recitygen
