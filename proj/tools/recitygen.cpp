// recitygen: run the service, inspect or move the corpus, replay generations.
//
// Exit codes: 0 success, 1 invalid input (usage, validation, unknown ids),
// 2 runtime failure (I/O, backend, bind).

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "recitygen/api.hpp"
#include "recitygen/error.hpp"
#include "recitygen/ids.hpp"
#include "recitygen/session.hpp"
#include "recitygen/store.hpp"

namespace fs = std::filesystem;
using namespace recitygen;

namespace {

constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

int exit_code_for(const Error& e) {
  const int status = http_status_for(e.code());
  return status >= 400 && status < 500 ? kExitInvalid : kExitRuntime;
}

// Commands other than serve work on an existing corpus only.
void require_data_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::InvalidArgument, "no data directory at " + dir.string());
}

BackendRef backend_flag(const std::string& text) { return BackendRef::parse(text); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recitygen: participatory urban-design feedback service"};
  app.require_subcommand(1);

  // Defaults come from the environment; flags override them.
  ServiceConfig config;
  std::string segmenter, inpainter;
  int ttl_minutes = 120;
  std::size_t max_upload_mb = 16;
  bool env_ok = true;
  std::string env_error;
  try {
    config.apply_env();
  } catch (const Error& e) {
    env_ok = false;
    env_error = e.what();
  }
  segmenter = config.segmenter.kind == BackendKind::Mock ? "mock" : config.segmenter.endpoint;
  inpainter = config.inpainter.kind == BackendKind::Mock ? "mock" : config.inpainter.endpoint;
  std::string data_dir = config.data_dir.string();

  auto* serve = app.add_subcommand("serve", "Run the REST service until SIGINT/SIGTERM");
  serve->add_option("--host", config.host, "Listen address")->capture_default_str();
  serve->add_option("--port", config.port, "Listen port, 0 for any free port")->capture_default_str();
  serve->add_option("--data-dir", data_dir, "Store directory")->capture_default_str();
  serve->add_option("--segmenter", segmenter, "mock, mock:delay_ms=N or an http:// URL")->capture_default_str();
  serve->add_option("--inpainter", inpainter, "mock, mock:delay_ms=N or an http:// URL")->capture_default_str();
  serve->add_option("--workers", config.worker_count, "Generation worker threads")->capture_default_str();
  serve->add_option("--session-ttl", ttl_minutes, "Idle session lifetime in minutes")->capture_default_str();
  serve->add_option("--max-upload-mb", max_upload_mb, "Request body limit in MiB")->capture_default_str();
  serve->add_option("--cors-origin", config.cors_origin, "Access-Control-Allow-Origin, empty to disable")
      ->capture_default_str();

  fs::path out, in;
  auto* exporter = app.add_subcommand("export", "Write the event log and blobs to a new location");
  exporter->add_option("--data-dir", data_dir, "Store directory")->capture_default_str();
  exporter->add_option("--out", out, "Target events.jsonl; blobs go next to it")->required();

  auto* importer = app.add_subcommand("import", "Append an exported event log to a store");
  importer->add_option("--data-dir", data_dir, "Store directory")->capture_default_str();
  importer->add_option("--in", in, "Exported events.jsonl")->required()->check(CLI::ExistingFile);

  auto* stats = app.add_subcommand("stats", "Print questionnaire and rating histograms");
  stats->add_option("--data-dir", data_dir, "Store directory")->capture_default_str();

  std::string entry_id, prompt;
  std::uint64_t seed = 0;
  int count = 3;
  auto* batch = app.add_subcommand("batch-generate", "Inpaint an entry's full image and store the variants");
  batch->add_option("--data-dir", data_dir, "Store directory")->capture_default_str();
  batch->add_option("--entry", entry_id, "Feedback entry id")->required();
  batch->add_option("--prompt", prompt, "Text prompt")->required();
  batch->add_option("--seed", seed, "Generation seed")->required();
  batch->add_option("-n,--count", count, "Number of variants")->capture_default_str();
  batch->add_option("--inpainter", inpainter, "mock, mock:delay_ms=N or an http:// URL")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    const auto chosen = app.get_subcommands();
    std::cerr << (chosen.empty() ? app.help() : chosen.front()->help());
    return kExitInvalid;
  }
  if (!env_ok) {
    std::cerr << "recitygen: " << env_error << "\n";
    return kExitInvalid;
  }

  try {
    config.data_dir = data_dir;
    if (*serve) {
      config.segmenter = backend_flag(segmenter);
      config.inpainter = backend_flag(inpainter);
      config.session_ttl = std::chrono::minutes(ttl_minutes);
      config.max_upload_bytes = max_upload_mb << 20;
      config.validate();
      try {
        recitygen::serve(config, [&](int port) {
          std::cout << "listening on http://" << config.host << ":" << port << std::endl;
        });
      } catch (const Error& e) {
        std::cerr << "recitygen: " << e.what() << "\n";
        return kExitRuntime;
      }
      return 0;
    }

    if (*batch) {
      // validate everything before touching the store
      if (const auto problem = prompt_problem(prompt)) {
        throw Error(*problem, *problem == ErrorCode::PromptEmpty ? "prompt is empty" : "prompt exceeds 500 characters");
      }
      if (count < 1 || count > kMaxVariants) throw Error(ErrorCode::InvalidRequest, "-n must be within 1..8");
      const BackendRef backend = backend_flag(inpainter);
      require_data_dir(config.data_dir);
      Store store(config.data_dir);
      const auto entry = store.entry(entry_id);
      if (!entry) throw Error(ErrorCode::UnknownEntry, "no entry " + entry_id);
      const auto image = store.load_image(entry->image_ref);
      const auto variants =
          run_generation(store, backend, image, BinaryMask::full(image.width(), image.height()), entry->id,
                         process_ids().next(), prompt, seed, count, GenerationParams{}.feather_radius,
                         GenerationParams{}.dilate_k);
      for (const auto& v : variants) std::cout << v.variant_id << "\n";
      return 0;
    }

    require_data_dir(config.data_dir);
    Store store(config.data_dir);
    for (const auto& warning : store.recovery_warnings()) std::cerr << "recitygen: " << warning << "\n";
    if (*stats) {
      std::cout << store.aggregate_stats().to_text();
    } else if (*exporter) {
      const auto n = store.export_jsonl(out);
      std::cerr << "exported " << n << " events to " << out.string() << "\n";
    } else if (*importer) {
      const auto n = store.import_jsonl(in);
      std::cerr << "imported " << n << " events from " << in.string() << "\n";
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "recitygen: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "recitygen: " << e.what() << "\n";
    return kExitRuntime;
  }
}
