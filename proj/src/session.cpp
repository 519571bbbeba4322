#include "recitygen/session.hpp"

#include <random>

#include "recitygen/error.hpp"
#include "recitygen/ids.hpp"
#include "recitygen/mask_ops.hpp"

namespace recitygen {
namespace {

// 53 bits so a drawn seed survives a round trip through a JSON double.
std::uint64_t draw_seed() {
  static std::mutex mutex;
  static std::mt19937_64 rng(std::random_device{}());
  std::lock_guard lock(mutex);
  return rng() & ((std::uint64_t{1} << 53) - 1);
}

}  // namespace

std::string_view state_name(JobState state) {
  switch (state) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Succeeded: return "succeeded";
    case JobState::Failed: return "failed";
  }
  return "failed";
}

AlphaMask condition_mask(const BinaryMask& mask, int dilate_k, int feather_radius) {
  return feather(dilate(mask, dilate_k), feather_radius);
}

std::vector<GeneratedVariant> run_generation(Store& store, const BackendRef& inpainter,
                                             const ImageBuffer& image, const BinaryMask& mask,
                                             const std::string& entry_id,
                                             const std::string& job_id, const std::string& prompt,
                                             std::uint64_t seed, int num_variants,
                                             int feather_radius, int dilate_k) {
  if (mask.width() != image.width() || mask.height() != image.height()) {
    throw Error(ErrorCode::DimensionMismatch, "mask and image differ in size");
  }
  const InpaintRequest request{image, condition_mask(mask, dilate_k, feather_radius), prompt, seed,
                               num_variants};
  const InpaintResult result = inpaint(inpainter, request);
  std::vector<GeneratedVariant> saved;
  saved.reserve(result.variants.size());
  for (const auto& variant : result.variants) {
    saved.push_back(store.save_variant({job_id, entry_id, &variant, prompt, seed, result.backend_id}));
  }
  return saved;
}

SessionManager::SessionManager(Store& store, BackendRef segmenter, BackendRef inpainter,
                               PipelineOptions options)
    : store_(store),
      segmenter_(std::move(segmenter)),
      inpainter_(std::move(inpainter)),
      options_(std::move(options)) {
  if (options_.worker_count < 1) throw Error(ErrorCode::InvalidArgument, "worker_count must be >= 1");
  workers_.reserve(static_cast<std::size_t>(options_.worker_count));
  for (int i = 0; i < options_.worker_count; ++i) workers_.emplace_back([this] { worker_loop(); });
}

SessionManager::~SessionManager() { shutdown(); }

MaskSession SessionManager::new_session(const std::string& entry_id) {
  const auto entry = store_.entry(entry_id);
  if (!entry) throw Error(ErrorCode::UnknownEntry, "no entry " + entry_id);
  evict_expired();
  auto record = std::make_shared<SessionRecord>();
  record->image = std::make_shared<const ImageBuffer>(store_.load_image(entry->image_ref));
  record->state.session_id = process_ids().next();
  record->state.entry_id = entry->id;
  record->state.image_ref = entry->image_ref;
  record->state.width = record->image->width();
  record->state.height = record->image->height();
  record->last_used = options_.clock();
  MaskSession snapshot = record->state;
  std::lock_guard lock(sessions_mutex_);
  sessions_.emplace(snapshot.session_id, std::move(record));
  return snapshot;
}

std::shared_ptr<SessionManager::SessionRecord> SessionManager::find_session(
    const std::string& session_id) {
  std::lock_guard lock(sessions_mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "no session " + session_id);
  return it->second;
}

MaskSession SessionManager::session(const std::string& session_id) {
  auto record = find_session(session_id);
  std::lock_guard lock(record->mutex);
  return record->state;
}

MaskSession SessionManager::add_click(const std::string& session_id, const ClickPoint& click) {
  auto record = find_session(session_id);
  std::lock_guard lock(record->mutex);
  MaskSession& s = record->state;
  if (!in_bounds(click, s.width, s.height)) {
    throw Error(ErrorCode::OutOfBounds, "click (" + std::to_string(click.x) + "," +
                                            std::to_string(click.y) + ") outside " +
                                            std::to_string(s.width) + "x" + std::to_string(s.height));
  }
  if (s.clicks.empty() && click.polarity != Polarity::Include) {
    throw Error(ErrorCode::FirstClickMustInclude, "the first click must be '+'");
  }
  if (s.clicks.size() >= kMaxClicksPerSession) {
    throw Error(ErrorCode::TooManyClicks, "session holds the maximum of 64 clicks");
  }
  std::vector<ClickPoint> clicks = s.clicks;
  clicks.push_back(click);
  // Backend errors propagate before any state changes.
  auto candidates = segment(segmenter_, *record->image, clicks);
  s.history.push_back({s.clicks, s.candidates, s.selected});
  s.clicks = std::move(clicks);
  s.candidates = std::move(candidates);
  s.selected = 0;
  record->last_used = options_.clock();
  return s;
}

MaskSession SessionManager::undo_click(const std::string& session_id) {
  auto record = find_session(session_id);
  std::lock_guard lock(record->mutex);
  MaskSession& s = record->state;
  if (s.history.empty()) throw Error(ErrorCode::NothingToUndo, "no click to undo");
  SessionSnapshot top = std::move(s.history.back());
  s.history.pop_back();
  s.clicks = std::move(top.clicks);
  s.candidates = std::move(top.candidates);
  s.selected = top.selected;
  record->last_used = options_.clock();
  return s;
}

MaskSession SessionManager::select_candidate(const std::string& session_id, std::size_t index) {
  auto record = find_session(session_id);
  std::lock_guard lock(record->mutex);
  MaskSession& s = record->state;
  if (index >= s.candidates.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "candidate " + std::to_string(index) + " of " +
                                                std::to_string(s.candidates.size()));
  }
  s.selected = index;
  record->last_used = options_.clock();
  return s;
}

GenerationJob SessionManager::submit_generation(const std::string& session_id,
                                                GenerationParams params) {
  if (const auto problem = prompt_problem(params.prompt)) {
    throw Error(*problem, *problem == ErrorCode::PromptEmpty ? "prompt is empty"
                                                             : "prompt exceeds 500 characters");
  }
  if (params.num_variants < 1 || params.num_variants > kMaxVariants) {
    throw Error(ErrorCode::InvalidRequest, "num_variants must be within 1..8");
  }
  if (params.feather_radius < 0 || params.dilate_k < 0) {
    throw Error(ErrorCode::InvalidArgument, "feather_radius and dilate_k must be >= 0");
  }
  auto record = find_session(session_id);
  JobWork work{nullptr, BinaryMask(1, 1), params.feather_radius, params.dilate_k};
  GenerationJob job;
  {
    std::lock_guard lock(record->mutex);
    const MaskSession& s = record->state;
    if (s.candidates.empty()) throw Error(ErrorCode::NoMask, "session has no mask candidate yet");
    work.image = record->image;
    work.mask = s.candidates[s.selected].mask;
    job.session_id = s.session_id;
    job.entry_id = s.entry_id;
    record->last_used = options_.clock();
  }
  job.job_id = process_ids().next();
  job.prompt = std::move(params.prompt);
  job.seed = params.seed ? *params.seed : draw_seed();
  job.num_variants = params.num_variants;
  job.created_at = unix_millis_now();
  job.transitions.push_back(JobState::Queued);
  {
    std::lock_guard lock(jobs_mutex_);
    if (stopping_) throw Error(ErrorCode::ShuttingDown, "service is shutting down");
    jobs_.emplace(job.job_id, job);
    queue_.emplace_back(job.job_id, std::move(work));
  }
  jobs_cv_.notify_one();
  return job;
}

GenerationJob SessionManager::poll_job(const std::string& job_id) const {
  std::lock_guard lock(jobs_mutex_);
  const auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw Error(ErrorCode::UnknownJob, "no job " + job_id);
  return it->second;
}

std::vector<GenerationJob> SessionManager::jobs() const {
  std::lock_guard lock(jobs_mutex_);
  std::vector<GenerationJob> out;
  out.reserve(jobs_.size());
  for (const auto& [id, job] : jobs_) out.push_back(job);
  return out;
}

std::size_t SessionManager::evict_expired() {
  const auto now = options_.clock();
  std::lock_guard lock(sessions_mutex_);
  return std::erase_if(sessions_, [&](const auto& item) {
    std::lock_guard session_lock(item.second->mutex);
    return now - item.second->last_used > options_.session_ttl;
  });
}

std::size_t SessionManager::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

void SessionManager::transition(GenerationJob& job, JobState next) {
  job.state = next;
  job.transitions.push_back(next);
  if (next == JobState::Running) job.started_at = unix_millis_now();
  if (next == JobState::Succeeded || next == JobState::Failed) job.finished_at = unix_millis_now();
}

void SessionManager::worker_loop() {
  for (;;) {
    std::pair<std::string, JobWork> item{std::string{}, JobWork{nullptr, BinaryMask(1, 1), 0, 0}};
    {
      std::unique_lock lock(jobs_mutex_);
      jobs_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      item = std::move(queue_.front());
      queue_.pop_front();
      transition(jobs_.at(item.first), JobState::Running);
    }
    run_job(item.first, item.second);
  }
}

void SessionManager::run_job(const std::string& job_id, const JobWork& work) {
  GenerationJob job = poll_job(job_id);
  std::vector<std::string> variant_ids;
  std::string failure;
  try {
    for (const auto& v : run_generation(store_, inpainter_, *work.image, work.mask, job.entry_id,
                                        job.job_id, job.prompt, job.seed, job.num_variants,
                                        work.feather_radius, work.dilate_k)) {
      variant_ids.push_back(v.variant_id);
    }
    if (variant_ids.empty()) failure = "backend returned no variants";
  } catch (const std::exception& e) {
    failure = e.what();
  }
  std::lock_guard lock(jobs_mutex_);
  GenerationJob& live = jobs_.at(job_id);
  if (failure.empty()) {
    live.variant_ids = std::move(variant_ids);
    transition(live, JobState::Succeeded);
  } else {
    live.failure_reason = failure;
    transition(live, JobState::Failed);
  }
}

void SessionManager::shutdown() {
  {
    std::lock_guard lock(jobs_mutex_);
    if (stopping_ && workers_.empty()) return;
    stopping_ = true;
    for (auto& [id, work] : queue_) {
      GenerationJob& job = jobs_.at(id);
      job.failure_reason = "shutdown";
      transition(job, JobState::Failed);
    }
    queue_.clear();
  }
  jobs_cv_.notify_all();
  for (auto& worker : workers_) {
    if (worker.joinable()) worker.join();
  }
  workers_.clear();
}

}  // namespace recitygen
