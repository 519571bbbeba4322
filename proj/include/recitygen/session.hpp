#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "recitygen/gateway.hpp"
#include "recitygen/segment.hpp"
#include "recitygen/store.hpp"

namespace recitygen {

inline constexpr std::size_t kMaxClicksPerSession = 64;

struct SessionSnapshot {
  std::vector<ClickPoint> clicks;
  std::vector<MaskCandidate> candidates;
  std::size_t selected = 0;

  bool operator==(const SessionSnapshot&) const = default;
};

struct MaskSession {
  std::string session_id;
  std::string entry_id;
  std::string image_ref;
  int width = 0;
  int height = 0;
  std::vector<ClickPoint> clicks;
  std::vector<MaskCandidate> candidates;
  std::size_t selected = 0;
  std::vector<SessionSnapshot> history;

  bool operator==(const MaskSession&) const = default;
};

enum class JobState { Queued, Running, Succeeded, Failed };
std::string_view state_name(JobState state);

struct GenerationJob {
  std::string job_id;
  std::string session_id;
  std::string entry_id;
  std::string prompt;
  std::uint64_t seed = 0;
  int num_variants = 3;
  JobState state = JobState::Queued;
  std::string failure_reason;  // set iff Failed
  std::vector<std::string> variant_ids;  // non-empty iff Succeeded
  std::int64_t created_at = 0;
  std::optional<std::int64_t> started_at;
  std::optional<std::int64_t> finished_at;
  // Every state the job has entered, in order.
  std::vector<JobState> transitions;
};

struct GenerationParams {
  std::string prompt;
  std::optional<std::uint64_t> seed;
  int num_variants = 3;
  int feather_radius = 4;
  int dilate_k = 2;
};

// Segmentation -> inpainting alpha: dilate, then feather.
AlphaMask condition_mask(const BinaryMask& mask, int dilate_k, int feather_radius);

// Inpaints `image` under `mask` and persists every variant. Shared by the job
// workers and the CLI replay path.
std::vector<GeneratedVariant> run_generation(Store& store, const BackendRef& inpainter,
                                             const ImageBuffer& image, const BinaryMask& mask,
                                             const std::string& entry_id,
                                             const std::string& job_id, const std::string& prompt,
                                             std::uint64_t seed, int num_variants,
                                             int feather_radius, int dilate_k);

struct PipelineOptions {
  int worker_count = 2;
  std::chrono::minutes session_ttl{120};
  std::function<std::chrono::steady_clock::time_point()> clock = std::chrono::steady_clock::now;
};

// Click sessions plus the generation job queue. Mutations of one session are
// serialized; jobs run on a fixed pool of worker threads and never touch
// sessions.
class SessionManager {
 public:
  SessionManager(Store& store, BackendRef segmenter, BackendRef inpainter,
                 PipelineOptions options = {});
  ~SessionManager();
  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  MaskSession new_session(const std::string& entry_id);
  MaskSession session(const std::string& session_id);
  MaskSession add_click(const std::string& session_id, const ClickPoint& click);
  MaskSession undo_click(const std::string& session_id);
  MaskSession select_candidate(const std::string& session_id, std::size_t index);

  GenerationJob submit_generation(const std::string& session_id, GenerationParams params);
  GenerationJob poll_job(const std::string& job_id) const;
  std::vector<GenerationJob> jobs() const;

  // Drops sessions idle for longer than the TTL; returns how many.
  std::size_t evict_expired();
  std::size_t session_count() const;

  // Queued jobs fail with "shutdown"; running jobs finish; workers exit.
  void shutdown();

  const BackendRef& segmenter() const noexcept { return segmenter_; }
  const BackendRef& inpainter() const noexcept { return inpainter_; }

 private:
  struct SessionRecord {
    std::mutex mutex;
    MaskSession state;
    std::shared_ptr<const ImageBuffer> image;
    std::chrono::steady_clock::time_point last_used;
  };
  struct JobWork {
    std::shared_ptr<const ImageBuffer> image;
    BinaryMask mask;
    int feather_radius;
    int dilate_k;
  };

  std::shared_ptr<SessionRecord> find_session(const std::string& session_id);
  void worker_loop();
  void run_job(const std::string& job_id, const JobWork& work);
  void transition(GenerationJob& job, JobState next);

  Store& store_;
  BackendRef segmenter_;
  BackendRef inpainter_;
  PipelineOptions options_;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<SessionRecord>> sessions_;

  mutable std::mutex jobs_mutex_;
  std::condition_variable jobs_cv_;
  std::map<std::string, GenerationJob> jobs_;
  std::deque<std::pair<std::string, JobWork>> queue_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace recitygen
