#include <gtest/gtest.h>
#include <httplib.h>

#include <nlohmann/json.hpp>

#include "process.hpp"
#include "recitygen/store.hpp"
#include "store_fixtures.hpp"

using namespace recitygen;
using nlohmann::json;
using testing_support::ProcessResult;
using testing_support::TempDir;

namespace {

ProcessResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), RECITYGEN_CLI);
  return testing_support::run_process(args);
}

// Three questionnaire responses whose q1 answers are 4, 5, 5.
std::string three_response_fixture(const std::filesystem::path& dir) {
  Store store(dir);
  const auto entry = store.create_entry({39.95, 116.34}, testing_support::tiny_png());
  store.save_questionnaire(testing_support::questionnaire(entry.id, {4, 3, 3, 4, 2, 5, 3}));
  store.save_questionnaire(testing_support::questionnaire(entry.id, {5, 4, 4, 5, 3, 5, 4}));
  store.save_questionnaire(testing_support::questionnaire(entry.id, {5, 5, 4, 4, 4, 1, 5}));
  return entry.id;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t nl; (nl = text.find('\n', start)) != std::string::npos; start = nl + 1) {
    out.push_back(text.substr(start, nl - start));
  }
  return out;
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  auto r = cli({"--bogus"});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  r = cli({"stats", "--data-dir", "/tmp", "--frobnicate"});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  r = cli({});
  EXPECT_EQ(r.exit_code, 1);
  r = cli({"--help"});
  EXPECT_EQ(r.exit_code, 0);
  r = cli({"stats", "--data-dir", "/nonexistent/recitygen"});
  EXPECT_EQ(r.exit_code, 1);
}

TEST(Cli, StatsOnThreeResponseFixture) {
  TempDir dir;
  three_response_fixture(dir.path());
  const auto r = cli({"stats", "--data-dir", dir.path().string()});
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto out = lines(r.out);
  ASSERT_EQ(out.size(), 9u);
  EXPECT_EQ(out[0], "responses: 3");
  EXPECT_EQ(out[1], "q1: 1:0 2:0 3:0 4:1 5:2");
  EXPECT_EQ(out[6], "q6: 1:1 2:0 3:0 4:0 5:2");
  EXPECT_EQ(out[8], "ratings: 1:0 2:0 3:0 4:0 5:0");
}

TEST(Cli, ExportPreservesStats) {
  TempDir dir, target;
  three_response_fixture(dir.path());
  const auto out = target.path() / "events.jsonl";
  ASSERT_EQ(cli({"export", "--data-dir", dir.path().string(), "--out", out.string()}).exit_code, 0);
  EXPECT_EQ(cli({"stats", "--data-dir", target.path().string()}).out,
            cli({"stats", "--data-dir", dir.path().string()}).out);

  TempDir fresh;
  const auto imported = cli({"import", "--data-dir", fresh.path().string(), "--in", out.string()});
  ASSERT_EQ(imported.exit_code, 0) << imported.err;
  EXPECT_EQ(cli({"stats", "--data-dir", fresh.path().string()}).out,
            cli({"stats", "--data-dir", dir.path().string()}).out);
}

TEST(Cli, BatchGenerateIsDeterministic) {
  TempDir a, b;
  const auto entry = three_response_fixture(a.path());
  std::filesystem::copy(a.path(), b.path(), std::filesystem::copy_options::recursive |
                                                std::filesystem::copy_options::overwrite_existing);
  std::vector<std::vector<std::string>> refs;
  for (const auto* dir : {&a, &b}) {
    const auto r = cli({"batch-generate", "--data-dir", dir->path().string(), "--entry", entry, "--prompt",
                        "a shaded plaza", "--seed", "7", "-n", "2"});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto ids = lines(r.out);
    ASSERT_EQ(ids.size(), 2u);
    Store store(dir->path());
    std::vector<std::string> hashes;
    for (const auto& id : ids) {
      const auto v = store.variant(id);
      ASSERT_TRUE(v);
      EXPECT_EQ(v->seed, 7u);
      EXPECT_EQ(v->prompt, "a shaded plaza");
      hashes.push_back(v->image_ref);
    }
    refs.push_back(hashes);
  }
  EXPECT_EQ(refs[0], refs[1]);
  EXPECT_NE(refs[0][0], refs[0][1]);
}

TEST(Cli, BatchGenerateValidation) {
  TempDir dir;
  const auto entry = three_response_fixture(dir.path());
  const auto events = Store(dir.path()).event_count();
  auto r = cli({"batch-generate", "--data-dir", dir.path().string(), "--entry", "01ARZ3NDEKTSV4RRFFQ69G5FAV",
                "--prompt", "x", "--seed", "1"});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("unknown_entry"), std::string::npos);
  r = cli({"batch-generate", "--data-dir", dir.path().string(), "--entry", entry, "--prompt", "", "--seed", "1"});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("prompt_empty"), std::string::npos);
  r = cli({"batch-generate", "--data-dir", dir.path().string(), "--entry", entry, "--prompt", "x", "--seed", "1",
           "-n", "0"});
  EXPECT_EQ(r.exit_code, 1);
  r = cli({"batch-generate", "--data-dir", dir.path().string(), "--entry", entry, "--prompt", "x", "--seed", "1",
           "--inpainter", testing_support::closed_port_url()});
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("backend_unreachable"), std::string::npos);
  EXPECT_EQ(Store(dir.path()).event_count(), events);
}

TEST(Cli, ServeAnswersHealthAndRejectsBusyPort) {
  TempDir dir;
  testing_support::ChildProcess server({RECITYGEN_CLI, "serve", "--port", "0", "--data-dir",
                                        dir.path().string(), "--segmenter", "mock", "--inpainter", "mock"});
  const int port = testing_support::banner_port(server.read_line());
  ASSERT_GT(port, 0);
  httplib::Client client("127.0.0.1", port);
  const auto health = client.Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);

  TempDir other;
  const auto busy = cli({"serve", "--port", std::to_string(port), "--data-dir", other.path().string()});
  EXPECT_EQ(busy.exit_code, 2);
  EXPECT_NE(busy.err.find("port_in_use"), std::string::npos);

  server.signal(SIGTERM);
  EXPECT_EQ(server.wait(), 0);
}

TEST(Cli, SigtermLetsRunningJobFinish) {
  TempDir dir;
  const std::string entry = [&] {
    Store store(dir.path());
    return store.create_entry({39.95, 116.34}, encode_png(testing_support::two_region(16, 16, 8))).id;
  }();
  testing_support::ChildProcess server({RECITYGEN_CLI, "serve", "--port", "0", "--data-dir",
                                        dir.path().string(), "--workers", "1", "--inpainter",
                                        "mock:delay_ms=400"});
  const int port = testing_support::banner_port(server.read_line());
  ASSERT_GT(port, 0);
  httplib::Client client("127.0.0.1", port);
  const auto session = client.Post("/api/entries/" + entry + "/sessions", "{}", "application/json");
  ASSERT_TRUE(session);
  const std::string sid = json::parse(session->body)["session_id"];
  ASSERT_EQ(client.Post("/api/sessions/" + sid + "/clicks", R"({"x":2,"y":2,"polarity":"+"})", "application/json")->status,
            200);
  std::vector<std::string> jobs;
  for (int i = 0; i < 2; ++i) {
    const auto r = client.Post("/api/sessions/" + sid + "/generate", R"({"prompt":"trees","seed":3,"num_variants":2})",
                               "application/json");
    ASSERT_EQ(r->status, 202);
    jobs.push_back(json::parse(r->body)["job_id"]);
  }
  // wait for the first job to start
  for (;;) {
    const auto r = client.Get("/api/jobs/" + jobs[0]);
    if (json::parse(r->body)["state"] == "running") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  server.signal(SIGTERM);
  EXPECT_EQ(server.wait(), 0);

  Store store(dir.path());
  const auto variants = store.variants_for_entry(entry);
  ASSERT_EQ(variants.size(), 2u);  // first job finished, second was failed while queued
  for (const auto& v : variants) EXPECT_EQ(v.job_id, jobs[0]);
}
