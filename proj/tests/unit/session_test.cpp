#include "recitygen/session.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <set>

#include "recitygen/error.hpp"
#include "recitygen/mask_ops.hpp"
#include "store_fixtures.hpp"

using namespace recitygen;
using namespace std::chrono_literals;
using testing_support::TempDir;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

GenerationJob wait_done(SessionManager& m, const std::string& job_id,
                        std::chrono::milliseconds limit = 10s) {
  const auto deadline = std::chrono::steady_clock::now() + limit;
  for (;;) {
    auto job = m.poll_job(job_id);
    if (job.state == JobState::Succeeded || job.state == JobState::Failed) return job;
    if (std::chrono::steady_clock::now() > deadline) {
      ADD_FAILURE() << "job " << job_id << " still " << state_name(job.state);
      return job;
    }
    std::this_thread::sleep_for(2ms);
  }
}

struct Fixture {
  TempDir dir;
  Store store{dir.path()};
  std::string entry_id;

  explicit Fixture(int w = 32, int h = 24) {
    entry_id = store.create_entry({39.95, 116.34},
                                  encode_png(testing_support::two_region(w, h, w / 2)), std::nullopt)
                   .id;
  }
};

}  // namespace

TEST(Session, UnknownEntry) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock());
  EXPECT_EQ(code_of([&] { m.new_session("01ARZ3NDEKTSV4RRFFQ69G5FAV"); }), ErrorCode::UnknownEntry);
  EXPECT_EQ(code_of([&] { m.session("nope"); }), ErrorCode::UnknownSession);
}

TEST(Session, FirstClickValidation) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock());
  const auto s = m.new_session(f.entry_id);
  EXPECT_EQ(s.width, 32);
  EXPECT_EQ(s.height, 24);
  EXPECT_EQ(code_of([&] { m.add_click(s.session_id, {3, 3, Polarity::Exclude}); }),
            ErrorCode::FirstClickMustInclude);
  EXPECT_EQ(code_of([&] { m.add_click(s.session_id, {32, 3, Polarity::Include}); }),
            ErrorCode::OutOfBounds);
  EXPECT_EQ(code_of([&] { m.add_click(s.session_id, {0, -1, Polarity::Include}); }),
            ErrorCode::OutOfBounds);
  EXPECT_EQ(m.session(s.session_id), s);
  EXPECT_EQ(code_of([&] { m.undo_click(s.session_id); }), ErrorCode::NothingToUndo);
}

TEST(Session, ClickProducesSortedCandidates) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock());
  const auto s = m.add_click(m.new_session(f.entry_id).session_id, {4, 4, Polarity::Include});
  ASSERT_FALSE(s.candidates.empty());
  EXPECT_EQ(s.selected, 0u);
  for (std::size_t i = 1; i < s.candidates.size(); ++i) {
    EXPECT_GE(s.candidates[i - 1].score, s.candidates[i].score);
  }
  // left half of a two-region image
  EXPECT_EQ(s.candidates[0].mask.population(), 16u * 24u);
}

TEST(Session, UndoRestoresPriorStateExactly) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock());
  const auto id = m.new_session(f.entry_id).session_id;
  std::vector<MaskSession> states{m.session(id)};
  states.push_back(m.add_click(id, {4, 4, Polarity::Include}));
  states.push_back(m.select_candidate(id, states.back().candidates.size() - 1));
  states.push_back(m.add_click(id, {20, 4, Polarity::Include}));
  states.push_back(m.add_click(id, {10, 10, Polarity::Exclude}));

  // select is not an undoable step; undo goes back click by click
  auto after = m.undo_click(id);
  EXPECT_EQ(after.clicks, states[3].clicks);
  EXPECT_EQ(after.candidates, states[3].candidates);
  EXPECT_EQ(after.selected, states[3].selected);
  after = m.undo_click(id);
  EXPECT_EQ(after.clicks, states[2].clicks);
  EXPECT_EQ(after.candidates, states[2].candidates);
  EXPECT_EQ(after.selected, states[2].selected);
  after = m.undo_click(id);
  EXPECT_EQ(after, states[0]);
  EXPECT_EQ(code_of([&] { m.undo_click(id); }), ErrorCode::NothingToUndo);
}

TEST(Session, SelectOutOfRange) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock());
  const auto id = m.new_session(f.entry_id).session_id;
  EXPECT_EQ(code_of([&] { m.select_candidate(id, 0); }), ErrorCode::IndexOutOfRange);
  const auto s = m.add_click(id, {4, 4, Polarity::Include});
  EXPECT_EQ(code_of([&] { m.select_candidate(id, s.candidates.size()); }),
            ErrorCode::IndexOutOfRange);
  EXPECT_EQ(m.session(id), s);
}

TEST(Session, BackendFailureLeavesSessionUnchanged) {
  Fixture f;
  SessionManager m(f.store, BackendRef::http(testing_support::closed_port_url(), 500ms),
                   BackendRef::mock());
  const auto before = m.new_session(f.entry_id);
  EXPECT_EQ(code_of([&] { m.add_click(before.session_id, {4, 4, Polarity::Include}); }),
            ErrorCode::BackendUnreachable);
  EXPECT_EQ(m.session(before.session_id), before);
}

TEST(Session, ClickLimit) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock());
  const auto id = m.new_session(f.entry_id).session_id;
  for (std::size_t i = 0; i < kMaxClicksPerSession; ++i) {
    m.add_click(id, {static_cast<int>(i % 16), static_cast<int>(i / 16), Polarity::Include});
  }
  EXPECT_EQ(code_of([&] { m.add_click(id, {1, 1, Polarity::Include}); }), ErrorCode::TooManyClicks);
}

TEST(Session, TtlEviction) {
  Fixture f;
  auto now = std::chrono::steady_clock::now();
  PipelineOptions opts;
  opts.session_ttl = 1min;
  opts.clock = [&] { return now; };
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock(), opts);
  const auto a = m.new_session(f.entry_id).session_id;
  now += 45s;
  const auto b = m.new_session(f.entry_id).session_id;
  now += 30s;
  EXPECT_EQ(m.evict_expired(), 1u);
  EXPECT_EQ(code_of([&] { m.session(a); }), ErrorCode::UnknownSession);
  EXPECT_NO_THROW(m.session(b));
}

TEST(Generation, SubmitValidation) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock());
  const auto id = m.new_session(f.entry_id).session_id;
  EXPECT_EQ(code_of([&] { m.submit_generation(id, {"a park"}); }), ErrorCode::NoMask);
  m.add_click(id, {4, 4, Polarity::Include});
  EXPECT_EQ(code_of([&] { m.submit_generation(id, {""}); }), ErrorCode::PromptEmpty);
  EXPECT_EQ(code_of([&] { m.submit_generation(id, {std::string(501, 'x')}); }),
            ErrorCode::PromptTooLong);
  GenerationParams p{"trees"};
  p.num_variants = 0;
  EXPECT_EQ(code_of([&] { m.submit_generation(id, p); }), ErrorCode::InvalidRequest);
  p.num_variants = 9;
  EXPECT_EQ(code_of([&] { m.submit_generation(id, p); }), ErrorCode::InvalidRequest);
  EXPECT_EQ(code_of([&] { m.poll_job("missing"); }), ErrorCode::UnknownJob);
  EXPECT_TRUE(m.jobs().empty());
}

TEST(Generation, JobSucceedsAndPersistsVariants) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock());
  const auto id = m.new_session(f.entry_id).session_id;
  const auto s = m.add_click(id, {4, 4, Polarity::Include});
  GenerationParams p{"inviting, green, community-focused"};
  p.seed = 7;
  const auto queued = m.submit_generation(id, p);
  EXPECT_EQ(queued.seed, 7u);
  const auto done = wait_done(m, queued.job_id);
  ASSERT_EQ(done.state, JobState::Succeeded) << done.failure_reason;
  EXPECT_EQ(done.transitions,
            (std::vector<JobState>{JobState::Queued, JobState::Running, JobState::Succeeded}));
  ASSERT_EQ(done.variant_ids.size(), 3u);
  EXPECT_TRUE(done.failure_reason.empty());

  const auto source = f.store.load_image(s.image_ref);
  const auto alpha = condition_mask(s.candidates[0].mask, 2, 4);
  for (const auto& vid : done.variant_ids) {
    const auto v = f.store.variant(vid);
    ASSERT_TRUE(v);
    EXPECT_EQ(v->job_id, done.job_id);
    EXPECT_EQ(v->entry_id, f.entry_id);
    EXPECT_EQ(v->seed, 7u);
    EXPECT_EQ(v->backend_id, "mock");
    const auto img = f.store.load_image(v->image_ref);
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        if (alpha.at(x, y) == 0)
          for (int c = 0; c < 3; ++c) ASSERT_EQ(img.at(x, y, c), source.at(x, y, c));
  }
  EXPECT_EQ(f.store.variants_for_entry(f.entry_id).size(), 3u);
}

TEST(Generation, SameInputsSameOutputs) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock());
  const auto id = m.new_session(f.entry_id).session_id;
  m.add_click(id, {4, 4, Polarity::Include});
  GenerationParams p{"a plaza"};
  p.seed = 42;
  p.num_variants = 2;
  const auto a = wait_done(m, m.submit_generation(id, p).job_id);
  const auto b = wait_done(m, m.submit_generation(id, p).job_id);
  ASSERT_EQ(a.variant_ids.size(), 2u);
  ASSERT_EQ(b.variant_ids.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(f.store.variant(a.variant_ids[i])->image_ref,
              f.store.variant(b.variant_ids[i])->image_ref);
  }
  EXPECT_NE(f.store.variant(a.variant_ids[0])->image_ref,
            f.store.variant(a.variant_ids[1])->image_ref);
}

TEST(Generation, SeedDrawnWhenAbsent) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock());
  const auto id = m.new_session(f.entry_id).session_id;
  m.add_click(id, {4, 4, Polarity::Include});
  const auto a = m.submit_generation(id, {"x"});
  const auto b = m.submit_generation(id, {"x"});
  EXPECT_NE(a.seed, b.seed);
  const auto done = wait_done(m, a.job_id);
  EXPECT_EQ(f.store.variant(done.variant_ids.at(0))->seed, a.seed);
  wait_done(m, b.job_id);
}

TEST(Generation, BackendFailureMarksJobFailed) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(),
                   BackendRef::http(testing_support::closed_port_url(), 500ms));
  const auto id = m.new_session(f.entry_id).session_id;
  m.add_click(id, {4, 4, Polarity::Include});
  const auto done = wait_done(m, m.submit_generation(id, {"x"}).job_id);
  EXPECT_EQ(done.state, JobState::Failed);
  EXPECT_FALSE(done.failure_reason.empty());
  EXPECT_TRUE(done.variant_ids.empty());
  EXPECT_TRUE(f.store.variants_for_entry(f.entry_id).empty());
}

TEST(Generation, WorkerPoolIsBounded) {
  Fixture f;
  PipelineOptions opts;
  opts.worker_count = 2;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock(40ms), opts);
  const auto id = m.new_session(f.entry_id).session_id;
  m.add_click(id, {4, 4, Polarity::Include});
  GenerationParams p{"x"};
  p.num_variants = 1;
  std::vector<std::string> ids;
  for (int i = 0; i < 6; ++i) ids.push_back(m.submit_generation(id, p).job_id);
  std::size_t max_running = 0;
  for (;;) {
    std::size_t running = 0, finished = 0;
    for (const auto& j : m.jobs()) {
      running += j.state == JobState::Running;
      finished += j.state == JobState::Succeeded || j.state == JobState::Failed;
    }
    max_running = std::max(max_running, running);
    if (finished == ids.size()) break;
    std::this_thread::sleep_for(1ms);
  }
  EXPECT_LE(max_running, 2u);
  EXPECT_GE(max_running, 1u);
  for (const auto& j : m.jobs()) EXPECT_EQ(j.state, JobState::Succeeded);
}

TEST(Generation, ShutdownFailsQueuedAndFinishesRunning) {
  Fixture f;
  PipelineOptions opts;
  opts.worker_count = 1;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock(100ms), opts);
  const auto id = m.new_session(f.entry_id).session_id;
  m.add_click(id, {4, 4, Polarity::Include});
  GenerationParams p{"x"};
  p.num_variants = 1;
  const auto first = m.submit_generation(id, p).job_id;
  while (m.poll_job(first).state == JobState::Queued) std::this_thread::sleep_for(1ms);
  const auto second = m.submit_generation(id, p).job_id;
  m.shutdown();
  EXPECT_EQ(m.poll_job(first).state, JobState::Succeeded);
  const auto failed = m.poll_job(second);
  EXPECT_EQ(failed.state, JobState::Failed);
  EXPECT_EQ(failed.failure_reason, "shutdown");
  EXPECT_EQ(code_of([&] { m.submit_generation(id, p); }), ErrorCode::ShuttingDown);
}

TEST(Generation, ConcurrentSessionsDoNotInterfere) {
  Fixture f;
  SessionManager m(f.store, BackendRef::mock(), BackendRef::mock());
  std::vector<std::thread> threads;
  std::atomic<int> failures{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      try {
        const auto id = m.new_session(f.entry_id).session_id;
        for (int i = 0; i < 5; ++i) m.add_click(id, {t + i, t, Polarity::Include});
        const auto s = m.session(id);
        if (s.clicks.size() != 5u || s.history.size() != 5u) ++failures;
        for (int i = 0; i < 5; ++i) m.undo_click(id);
        if (!m.session(id).clicks.empty()) ++failures;
      } catch (...) {
        ++failures;
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(failures.load(), 0);
  EXPECT_EQ(m.session_count(), 8u);
}
