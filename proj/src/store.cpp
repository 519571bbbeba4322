#include "recitygen/store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iostream>
#include <iterator>
#include <mutex>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "recitygen/error.hpp"
#include "recitygen/gateway.hpp"
#include "recitygen/ids.hpp"

namespace recitygen {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kEntryCreated = "entry_created";
constexpr const char* kVariantSaved = "variant_saved";
constexpr const char* kRatingSaved = "rating_saved";
constexpr const char* kQuestionnaireSaved = "questionnaire_saved";

[[noreturn]] void io_fail(const std::string& what) {
  throw Error(ErrorCode::IoError, what + ": " + std::strerror(errno));
}

void write_all(int fd, const std::string& data, const std::string& what) {
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail(what);
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

void fsync_dir(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) io_fail("open " + dir.string());
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) io_fail("fsync " + dir.string());
}

// Durable write of a whole file via tmp + rename.
void write_file_durably(const fs::path& target, std::span<const std::uint8_t> bytes) {
  static std::atomic<std::uint64_t> counter{0};
  const fs::path tmp = target.parent_path() /
                       ("." + target.filename().string() + ".tmp" + std::to_string(::getpid()) +
                        "-" + std::to_string(counter++));
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) io_fail("create " + tmp.string());
  try {
    write_all(fd, std::string(bytes.begin(), bytes.end()), tmp.string());
    if (::fsync(fd) != 0) io_fail("fsync " + tmp.string());
  } catch (...) {
    ::close(fd);
    ::unlink(tmp.c_str());
    throw;
  }
  ::close(fd);
  if (::rename(tmp.c_str(), target.c_str()) != 0) io_fail("rename " + target.string());
  fsync_dir(target.parent_path());
}

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

bool is_hex_digest(const std::string& s) {
  return s.size() == 64 && std::all_of(s.begin(), s.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

int current_year() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  return tm.tm_year + 1900;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void check_score(int score, const std::string& what) {
  if (score < 1 || score > 5) {
    throw Error(ErrorCode::ScoreOutOfRange, what + " = " + std::to_string(score) + ", must be 1..5");
  }
}

json entry_json(const FeedbackEntry& e) {
  return {{"id", e.id},
          {"lat", e.geo.lat},
          {"lon", e.geo.lon},
          {"image_ref", e.image_ref},
          {"created_at", e.created_at},
          {"note", e.note ? json(*e.note) : json(nullptr)}};
}

FeedbackEntry entry_from(const json& j) {
  FeedbackEntry e;
  e.id = j.at("id").get<std::string>();
  e.geo = {j.at("lat").get<double>(), j.at("lon").get<double>()};
  e.image_ref = j.at("image_ref").get<std::string>();
  e.created_at = j.at("created_at").get<std::int64_t>();
  if (!j.at("note").is_null()) e.note = j.at("note").get<std::string>();
  return e;
}

json variant_json(const GeneratedVariant& v) {
  return {{"variant_id", v.variant_id}, {"job_id", v.job_id},         {"entry_id", v.entry_id},
          {"image_ref", v.image_ref},   {"prompt", v.prompt},         {"seed", v.seed},
          {"backend_id", v.backend_id}, {"created_at", v.created_at}};
}

GeneratedVariant variant_from(const json& j) {
  GeneratedVariant v;
  v.variant_id = j.at("variant_id").get<std::string>();
  v.job_id = j.at("job_id").get<std::string>();
  v.entry_id = j.at("entry_id").get<std::string>();
  v.image_ref = j.at("image_ref").get<std::string>();
  v.prompt = j.at("prompt").get<std::string>();
  v.seed = j.at("seed").get<std::uint64_t>();
  v.backend_id = j.at("backend_id").get<std::string>();
  v.created_at = j.at("created_at").get<std::int64_t>();
  return v;
}

json rating_json(const Rating& r) {
  return {{"variant_id", r.variant_id}, {"score", r.score}, {"created_at", r.created_at}};
}

Rating rating_from(const json& j) {
  return {j.at("variant_id").get<std::string>(), j.at("score").get<int>(),
          j.at("created_at").get<std::int64_t>()};
}

json questionnaire_json(const QuestionnaireResponse& q) {
  json j{{"entry_id", q.entry_id},
         {"gender", q.gender},
         {"education", q.education},
         {"birth_year", q.birth_year},
         {"profession", q.profession},
         {"design_background", q.design_background},
         {"open_feedback", q.open_feedback},
         {"created_at", q.created_at}};
  for (int i = 0; i < kQuestionCount; ++i) j["q" + std::to_string(i + 1)] = q.answers[i];
  return j;
}

QuestionnaireResponse questionnaire_from(const json& j) {
  QuestionnaireResponse q;
  q.entry_id = j.at("entry_id").get<std::string>();
  for (int i = 0; i < kQuestionCount; ++i) q.answers[i] = j.at("q" + std::to_string(i + 1)).get<int>();
  q.gender = j.at("gender").get<std::string>();
  q.education = j.at("education").get<std::string>();
  q.birth_year = j.at("birth_year").get<std::string>();
  q.profession = j.at("profession").get<std::string>();
  q.design_background = j.at("design_background").get<std::string>();
  q.open_feedback = j.at("open_feedback").get<std::string>();
  q.created_at = j.at("created_at").get<std::int64_t>();
  return q;
}

}  // namespace

struct Store::Event {
  std::string type;
  json payload;
  std::int64_t ts = 0;

  std::string line() const { return json{{"type", type}, {"payload", payload}, {"ts", ts}}.dump(); }

  static Event parse(const std::string& line) {
    const auto j = json::parse(line);
    if (!j.is_object()) throw Error(ErrorCode::CorruptLog, "event is not an object");
    Event e{j.at("type").get<std::string>(), j.at("payload"), j.at("ts").get<std::int64_t>()};
    if (!e.payload.is_object()) throw Error(ErrorCode::CorruptLog, "payload is not an object");
    return e;
  }
};

std::string Stats::to_text() const {
  std::ostringstream out;
  const auto row = [&](const std::array<std::uint64_t, 5>& counts) {
    for (int s = 0; s < 5; ++s) out << ' ' << (s + 1) << ':' << counts[s];
    out << '\n';
  };
  out << "responses: " << responses << '\n';
  for (int q = 0; q < kQuestionCount; ++q) {
    out << 'q' << (q + 1) << ':';
    row(questions[q]);
  }
  out << "ratings:";
  row(ratings);
  return out.str();
}

Store::Store(fs::path data_dir) : dir_(std::move(data_dir)) {
  std::error_code ec;
  fs::create_directories(dir_ / "blobs", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir_.string() + ": " + ec.message());
  replay();
  const fs::path log = dir_ / "events.jsonl";
  log_fd_ = ::open(log.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (log_fd_ < 0) io_fail("open " + log.string());
  fsync_dir(dir_);
}

Store::~Store() {
  if (log_fd_ >= 0) ::close(log_fd_);
}

void Store::replay() {
  const fs::path log = dir_ / "events.jsonl";
  if (!fs::exists(log)) return;
  const Bytes raw = read_file(log);
  const std::string text(raw.begin(), raw.end());
  std::size_t offset = 0;
  std::size_t line_no = 0;
  while (offset < text.size()) {
    ++line_no;
    const std::size_t nl = text.find('\n', offset);
    const bool terminated = nl != std::string::npos;
    const std::size_t end = terminated ? nl : text.size();
    const std::string line = text.substr(offset, end - offset);
    const bool last = !terminated || end + 1 == text.size();
    std::string failure;
    if (!terminated) {
      failure = "unterminated line";
    } else {
      try {
        const Event event = Event::parse(line);
        check(event);
        index(event);
        lines_.push_back(line);
      } catch (const std::exception& e) {
        failure = e.what();
      }
    }
    if (!failure.empty()) {
      if (!last) {
        throw Error(ErrorCode::CorruptLog, "line " + std::to_string(line_no) + ": " + failure);
      }
      warnings_.push_back("truncated torn final line " + std::to_string(line_no) + " (" + failure + ")");
      std::cerr << "warning: " << log.string() << ": " << warnings_.back() << '\n';
      if (::truncate(log.c_str(), static_cast<off_t>(offset)) != 0) io_fail("truncate " + log.string());
      break;
    }
    offset = end + 1;
  }
}

void Store::check(const Event& event) const {
  const json& p = event.payload;
  try {
    if (event.type == kEntryCreated) {
      const auto e = entry_from(p);
      if (!is_valid_id(e.id)) throw Error(ErrorCode::InvalidField, "malformed entry id");
      if (entries_.contains(e.id)) throw Error(ErrorCode::InvalidField, "duplicate entry id " + e.id);
      if (!is_valid(e.geo)) throw Error(ErrorCode::InvalidGeo, "coordinates out of range");
      if (!is_hex_digest(e.image_ref)) throw Error(ErrorCode::InvalidField, "malformed image_ref");
      if (e.note && utf8_length(*e.note) > kMaxNoteChars) throw Error(ErrorCode::InvalidField, "note too long");
      if (!fs::exists(blob_path(e.image_ref))) {
        throw Error(ErrorCode::UnknownReference, "missing blob " + e.image_ref);
      }
    } else if (event.type == kVariantSaved) {
      const auto v = variant_from(p);
      if (!is_valid_id(v.variant_id)) throw Error(ErrorCode::InvalidField, "malformed variant id");
      if (variants_.contains(v.variant_id)) throw Error(ErrorCode::InvalidField, "duplicate variant id");
      if (!entries_.contains(v.entry_id)) throw Error(ErrorCode::UnknownReference, "unknown entry " + v.entry_id);
      if (!is_hex_digest(v.image_ref)) throw Error(ErrorCode::InvalidField, "malformed image_ref");
      if (!fs::exists(blob_path(v.image_ref))) {
        throw Error(ErrorCode::UnknownReference, "missing blob " + v.image_ref);
      }
    } else if (event.type == kRatingSaved) {
      const auto r = rating_from(p);
      if (!variants_.contains(r.variant_id)) {
        throw Error(ErrorCode::UnknownReference, "unknown variant " + r.variant_id);
      }
      check_score(r.score, "score");
    } else if (event.type == kQuestionnaireSaved) {
      const auto q = questionnaire_from(p);
      if (!entries_.contains(q.entry_id)) throw Error(ErrorCode::UnknownReference, "unknown entry " + q.entry_id);
      for (int i = 0; i < kQuestionCount; ++i) check_score(q.answers[i], "q" + std::to_string(i + 1));
      const std::string year = trim(q.birth_year);
      if (!year.empty() && year.size() <= 9 &&
          std::all_of(year.begin(), year.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        const int y = std::stoi(year);
        if (y < 1900 || y > current_year()) {
          throw Error(ErrorCode::InvalidField, "birth_year " + year + " outside 1900.." +
                                                   std::to_string(current_year()));
        }
      }
    } else {
      throw Error(ErrorCode::CorruptLog, "unknown event type '" + event.type + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidField, std::string("malformed payload: ") + e.what());
  }
}

void Store::index(const Event& event) {
  const json& p = event.payload;
  if (event.type == kEntryCreated) {
    auto e = entry_from(p);
    process_ids().observe(e.id);
    by_lat_.emplace(e.geo.lat, e.id);
    entries_.emplace(e.id, std::move(e));
  } else if (event.type == kVariantSaved) {
    auto v = variant_from(p);
    process_ids().observe(v.variant_id);
    variants_by_entry_.emplace(v.entry_id, v.variant_id);
    variants_.emplace(v.variant_id, std::move(v));
  } else if (event.type == kRatingSaved) {
    ratings_.push_back(rating_from(p));
  } else if (event.type == kQuestionnaireSaved) {
    questionnaires_.push_back(questionnaire_from(p));
  }
}

void Store::append(const Event& event) {
  const std::string line = event.line();
  write_all(log_fd_, line + "\n", "append events.jsonl");
  if (::fsync(log_fd_) != 0) io_fail("fsync events.jsonl");
  lines_.push_back(line);
}

fs::path Store::blob_path(const std::string& image_ref) const {
  return dir_ / "blobs" / (image_ref + ".png");
}

std::string Store::put_blob(std::span<const std::uint8_t> png) {
  const std::string ref = sha256_hex(png);
  const fs::path path = blob_path(ref);
  if (!fs::exists(path)) write_file_durably(path, png);
  return ref;
}

FeedbackEntry Store::create_entry(const GeoPoint& geo, std::span<const std::uint8_t> png,
                                  std::optional<std::string> note) {
  if (!is_valid(geo)) {
    throw Error(ErrorCode::InvalidGeo, "lat must be within [-90,90] and lon within [-180,180]");
  }
  if (note && utf8_length(*note) > kMaxNoteChars) {
    throw Error(ErrorCode::InvalidField, "note exceeds 1000 characters");
  }
  decode_png_rgb(png);  // BadImage / ImageTooLarge
  std::unique_lock lock(mutex_);
  FeedbackEntry entry;
  entry.geo = geo;
  entry.note = std::move(note);
  entry.image_ref = put_blob(png);
  entry.id = process_ids().next();
  entry.created_at = unix_millis_now();
  const Event event{kEntryCreated, entry_json(entry), entry.created_at};
  check(event);
  append(event);
  index(event);
  return entry;
}

GeneratedVariant Store::save_variant(const NewVariant& variant) {
  if (variant.image == nullptr) throw Error(ErrorCode::InvalidArgument, "variant image missing");
  const Bytes png = encode_png(*variant.image);
  std::unique_lock lock(mutex_);
  if (!entries_.contains(variant.entry_id)) {
    throw Error(ErrorCode::UnknownReference, "unknown entry " + variant.entry_id);
  }
  GeneratedVariant v;
  v.variant_id = process_ids().next();
  v.job_id = variant.job_id;
  v.entry_id = variant.entry_id;
  v.image_ref = put_blob(png);
  v.prompt = variant.prompt;
  v.seed = variant.seed;
  v.backend_id = variant.backend_id;
  v.created_at = unix_millis_now();
  const Event event{kVariantSaved, variant_json(v), v.created_at};
  check(event);
  append(event);
  index(event);
  return v;
}

Rating Store::save_rating(const std::string& variant_id, int score) {
  std::unique_lock lock(mutex_);
  Rating r{variant_id, score, unix_millis_now()};
  const Event event{kRatingSaved, rating_json(r), r.created_at};
  check(event);
  append(event);
  index(event);
  return r;
}

QuestionnaireResponse Store::save_questionnaire(QuestionnaireResponse response) {
  std::unique_lock lock(mutex_);
  response.created_at = unix_millis_now();
  const Event event{kQuestionnaireSaved, questionnaire_json(response), response.created_at};
  check(event);
  append(event);
  index(event);
  return response;
}

std::optional<FeedbackEntry> Store::entry(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::vector<FeedbackEntry> Store::entries() const {
  std::shared_lock lock(mutex_);
  std::vector<FeedbackEntry> out;
  out.reserve(entries_.size());
  for (const auto& [id, e] : entries_) out.push_back(e);
  return out;
}

std::optional<GeneratedVariant> Store::variant(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto it = variants_.find(id);
  if (it == variants_.end()) return std::nullopt;
  return it->second;
}

std::vector<GeneratedVariant> Store::variants_for_entry(const std::string& entry_id) const {
  std::shared_lock lock(mutex_);
  std::vector<GeneratedVariant> out;
  const auto [lo, hi] = variants_by_entry_.equal_range(entry_id);
  for (auto it = lo; it != hi; ++it) out.push_back(variants_.at(it->second));
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.variant_id < b.variant_id; });
  return out;
}

std::vector<Rating> Store::ratings() const {
  std::shared_lock lock(mutex_);
  return ratings_;
}

std::vector<QuestionnaireResponse> Store::questionnaires() const {
  std::shared_lock lock(mutex_);
  return questionnaires_;
}

std::vector<FeedbackEntry> Store::query_bbox(double min_lat, double min_lon, double max_lat,
                                             double max_lon) const {
  const GeoPoint lo{min_lat, min_lon};
  const GeoPoint hi{max_lat, max_lon};
  if (!is_valid(lo) || !is_valid(hi) || min_lat > max_lat || min_lon > max_lon) {
    throw Error(ErrorCode::InvalidBox, "box must satisfy min <= max per axis within valid ranges");
  }
  std::shared_lock lock(mutex_);
  std::vector<FeedbackEntry> out;
  for (auto it = by_lat_.lower_bound(min_lat); it != by_lat_.end() && it->first <= max_lat; ++it) {
    const auto& e = entries_.at(it->second);
    if (e.geo.lon >= min_lon && e.geo.lon <= max_lon) out.push_back(e);
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

std::vector<Neighbor> Store::query_nearest(const GeoPoint& geo, std::size_t k) const {
  if (!is_valid(geo)) throw Error(ErrorCode::InvalidGeo, "query point out of range");
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  std::shared_lock lock(mutex_);
  std::vector<std::pair<double, const FeedbackEntry*>> scored;
  scored.reserve(entries_.size());
  for (const auto& [id, e] : entries_) scored.emplace_back(haversine_m(geo, e.geo), &e);
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    [](const auto& a, const auto& b) {
                      if (a.first != b.first) return a.first < b.first;
                      return a.second->id < b.second->id;
                    });
  std::vector<Neighbor> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({*scored[i].second, scored[i].first});
  return out;
}

Stats Store::aggregate_stats() const {
  std::shared_lock lock(mutex_);
  Stats stats;
  stats.responses = questionnaires_.size();
  for (const auto& q : questionnaires_) {
    for (int i = 0; i < kQuestionCount; ++i) ++stats.questions[i][q.answers[i] - 1];
  }
  stats.rating_count = ratings_.size();
  for (const auto& r : ratings_) ++stats.ratings[r.score - 1];
  return stats;
}

std::size_t Store::event_count() const {
  std::shared_lock lock(mutex_);
  return lines_.size();
}

Bytes Store::read_blob(const std::string& image_ref) const {
  if (!is_hex_digest(image_ref)) throw Error(ErrorCode::UnknownReference, "malformed image_ref");
  return read_file(blob_path(image_ref));
}

ImageBuffer Store::load_image(const std::string& image_ref) const {
  return decode_png_rgb(read_blob(image_ref));
}

std::size_t Store::export_jsonl(const fs::path& out) const {
  std::error_code ec;
  if (fs::exists(out) && fs::equivalent(out, dir_ / "events.jsonl", ec)) {
    throw Error(ErrorCode::InvalidArgument, "refusing to export onto the live log");
  }
  const fs::path parent = out.parent_path().empty() ? fs::path(".") : out.parent_path();
  const fs::path blob_dir = parent / "blobs";
  fs::create_directories(blob_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + blob_dir.string() + ": " + ec.message());

  std::shared_lock lock(mutex_);
  std::vector<std::string> refs;
  for (const auto& [id, e] : entries_) refs.push_back(e.image_ref);
  for (const auto& [id, v] : variants_) refs.push_back(v.image_ref);
  std::sort(refs.begin(), refs.end());
  refs.erase(std::unique(refs.begin(), refs.end()), refs.end());
  for (const auto& ref : refs) {
    const fs::path target = blob_dir / (ref + ".png");
    if (fs::exists(target)) continue;
    write_file_durably(target, read_file(blob_path(ref)));
  }
  std::string body;
  for (const auto& line : lines_) {
    body += line;
    body += '\n';
  }
  write_file_durably(out, as_bytes(body));
  return lines_.size();
}

std::size_t Store::import_jsonl(const fs::path& in) {
  const Bytes raw = read_file(in);
  const std::string text(raw.begin(), raw.end());
  const fs::path source_blobs = (in.parent_path().empty() ? fs::path(".") : in.parent_path()) / "blobs";
  std::unique_lock lock(mutex_);
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t imported = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    try {
      const Event event = Event::parse(line);
      if (event.payload.contains("image_ref") && event.payload["image_ref"].is_string()) {
        const std::string ref = event.payload["image_ref"].get<std::string>();
        if (!is_hex_digest(ref)) throw Error(ErrorCode::InvalidField, "malformed image_ref");
        if (!fs::exists(blob_path(ref))) {
          const Bytes blob = read_file(source_blobs / (ref + ".png"));
          if (sha256_hex(blob) != ref) throw Error(ErrorCode::InvalidField, "blob hash mismatch for " + ref);
          write_file_durably(blob_path(ref), blob);
        }
      }
      check(event);
      append(event);
      index(event);
      ++imported;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::IoError) throw;
      throw Error(ErrorCode::CorruptLog, in.string() + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::CorruptLog, in.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return imported;
}

}  // namespace recitygen
