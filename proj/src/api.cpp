#include "recitygen/api.hpp"

#include <httplib.h>
#include <pthread.h>
#include <signal.h>
#include <sys/socket.h>

#include <atomic>
#include <charconv>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <nlohmann/json.hpp>
#include <thread>

#include "recitygen/mask_ops.hpp"
#include "recitygen/session.hpp"
#include "recitygen/store.hpp"

namespace recitygen {

using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";

// A malformed request body or parameter. Reported as invalid_request.
Error bad_request(const std::string& what) { return Error(ErrorCode::InvalidRequest, what); }

json error_body(std::string_view code, const std::string& message) {
  return json{{"code", code}, {"message", message}};
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw bad_request("body must be a JSON object");
  return body;
}

std::int64_t int_field(const json& body, const char* key) {
  const auto it = body.find(key);
  if (it == body.end()) throw bad_request(std::string("missing field '") + key + "'");
  if (!it->is_number_integer()) throw bad_request(std::string("'") + key + "' must be an integer");
  return it->get<std::int64_t>();
}

std::string text_field(const json& body, const char* key) {
  const auto it = body.find(key);
  if (it == body.end() || it->is_null()) return {};
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<std::int64_t>());
  throw bad_request(std::string("'") + key + "' must be a string");
}

int clamp_int(std::int64_t v) {
  // keeps out-of-range values out of range after narrowing
  return static_cast<int>(std::clamp<std::int64_t>(v, std::numeric_limits<int>::min(),
                                                   std::numeric_limits<int>::max()));
}

double parse_double(const std::string& text, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::InvalidGeo, std::string(what) + " is not a number");
  }
  return v;
}

json entry_json(const FeedbackEntry& e) {
  return json{{"id", e.id},
              {"lat", e.geo.lat},
              {"lon", e.geo.lon},
              {"image_ref", e.image_ref},
              {"created_at", e.created_at},
              {"note", e.note ? json(*e.note) : json(nullptr)}};
}

json variant_json(const GeneratedVariant& v) {
  return json{{"variant_id", v.variant_id}, {"job_id", v.job_id},   {"entry_id", v.entry_id},
              {"image_ref", v.image_ref},   {"prompt", v.prompt},   {"seed", v.seed},
              {"backend_id", v.backend_id}, {"created_at", v.created_at}};
}

json session_json(const MaskSession& s) {
  json clicks = json::array();
  for (const auto& c : s.clicks) {
    clicks.push_back({{"x", c.x}, {"y", c.y}, {"polarity", c.polarity == Polarity::Include ? "+" : "-"}});
  }
  json candidates = json::array();
  for (const auto& c : s.candidates) {
    candidates.push_back({{"rle", rle_encode(c.mask)},
                          {"width", c.mask.width()},
                          {"height", c.mask.height()},
                          {"score", c.score}});
  }
  return json{{"session_id", s.session_id}, {"entry_id", s.entry_id},     {"width", s.width},
              {"height", s.height},         {"clicks", clicks},           {"candidates", candidates},
              {"selected", s.selected},     {"can_undo", !s.history.empty()}};
}

json job_json(const GenerationJob& j) {
  json out{{"job_id", j.job_id},       {"session_id", j.session_id}, {"entry_id", j.entry_id},
           {"state", state_name(j.state)}, {"prompt", j.prompt},     {"seed", j.seed},
           {"num_variants", j.num_variants}, {"created_at", j.created_at}};
  if (j.state == JobState::Succeeded) out["variant_ids"] = j.variant_ids;
  if (j.state == JobState::Failed) out["error"] = j.failure_reason;
  if (j.started_at) out["started_at"] = *j.started_at;
  if (j.finished_at) out["finished_at"] = *j.finished_at;
  return out;
}

json health_json(const HealthStatus& h) {
  return json{{"state", state_name(h.state)}, {"detail", h.detail}};
}

json stats_json(const Stats& s) {
  json questions = json::object();
  for (int q = 0; q < kQuestionCount; ++q) questions["q" + std::to_string(q + 1)] = s.questions[q];
  return json{{"responses", s.responses},
              {"questions", questions},
              {"rating_count", s.rating_count},
              {"ratings", s.ratings}};
}

Polarity parse_polarity(const json& body) {
  const auto it = body.find("polarity");
  if (it == body.end() || !it->is_string()) throw bad_request("'polarity' must be \"+\" or \"-\"");
  const auto p = it->get<std::string>();
  if (p == "+" || p == "include") return Polarity::Include;
  if (p == "-" || p == "exclude") return Polarity::Exclude;
  throw bad_request("'polarity' must be \"+\" or \"-\"");
}

}  // namespace

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownEntry:
    case ErrorCode::UnknownSession:
    case ErrorCode::UnknownJob:
    case ErrorCode::UnknownVariant:
    case ErrorCode::UnknownReference:
      return 404;
    case ErrorCode::NothingToUndo:
    case ErrorCode::NoMask:
    case ErrorCode::TooManyClicks:
      return 409;
    case ErrorCode::ImageTooLarge:
      return 413;
    case ErrorCode::BackendUnreachable:
    case ErrorCode::ProtocolError:
      return 502;
    case ErrorCode::ShuttingDown:
      return 503;
    case ErrorCode::BackendTimeout:
      return 504;
    case ErrorCode::IoError:
    case ErrorCode::CorruptLog:
    case ErrorCode::PortInUse:
    case ErrorCode::StoreOpenFailure:
      return 500;
    default:
      return 400;
  }
}

ApiError to_api_error(const Error& error) {
  return {http_status_for(error.code()), std::string(code_name(error.code())), error.detail()};
}

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw Error(ErrorCode::InvalidArgument, "port must be within 1..65535");
  if (worker_count < 1) throw Error(ErrorCode::InvalidArgument, "workers must be >= 1");
  if (max_upload_bytes == 0) throw Error(ErrorCode::InvalidArgument, "max upload must be > 0");
  if (session_ttl.count() < 1) throw Error(ErrorCode::InvalidArgument, "session ttl must be >= 1 minute");
  if (data_dir.empty()) throw Error(ErrorCode::InvalidArgument, "data dir is empty");
}

void ServiceConfig::apply_env() {
  const auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  };
  const auto integer = [](const std::string& text, const char* name) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
      throw Error(ErrorCode::InvalidArgument, std::string(name) + " is not an integer");
    }
    return v;
  };
  if (auto v = env("RECITYGEN_PORT")) port = integer(*v, "RECITYGEN_PORT");
  if (auto v = env("RECITYGEN_DATA_DIR")) data_dir = *v;
  if (auto v = env("RECITYGEN_SEGMENTER")) segmenter = BackendRef::parse(*v);
  if (auto v = env("RECITYGEN_INPAINTER")) inpainter = BackendRef::parse(*v);
  if (auto v = env("RECITYGEN_WORKERS")) worker_count = integer(*v, "RECITYGEN_WORKERS");
}

struct ApiService::Impl {
  Store store;
  SessionManager sessions;
  httplib::Server server;

  Impl(const ServiceConfig& c)
      : store(c.data_dir),
        sessions(store, c.segmenter, c.inpainter, PipelineOptions{c.worker_count, c.session_ttl}) {}

  void routes(const ServiceConfig& config);
};

ApiService::ApiService(ServiceConfig config) : config_(std::move(config)) {
  config_.validate();
  try {
    impl_ = std::make_unique<Impl>(config_);
  } catch (const Error& e) {
    throw Error(ErrorCode::StoreOpenFailure, config_.data_dir.string() + ": " + e.what());
  }
  impl_->routes(config_);
}

ApiService::~ApiService() { stop(); }

Store& ApiService::store() { return impl_->store; }
SessionManager& ApiService::sessions() { return impl_->sessions; }

int ApiService::bind() {
  auto& server = impl_->server;
  // httplib also sets SO_REUSEPORT, which would let a second server share the port.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  const int bound = config_.port == 0 ? server.bind_to_any_port(config_.host)
                                      : (server.bind_to_port(config_.host, config_.port) ? config_.port : -1);
  if (bound <= 0) {
    throw Error(ErrorCode::PortInUse, config_.host + ":" + std::to_string(config_.port) + " is not bindable");
  }
  port_ = bound;
  return port_;
}

void ApiService::run() { impl_->server.listen_after_bind(); }

void ApiService::stop() {
  if (!impl_) return;
  impl_->sessions.shutdown();
  impl_->server.stop();
}

void ApiService::Impl::routes(const ServiceConfig& config) {
  auto& svr = server;
  svr.set_payload_max_length(config.max_upload_bytes);
  if (!config.cors_origin.empty()) {
    svr.set_default_headers({{"Access-Control-Allow-Origin", config.cors_origin}});
    svr.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
  }

  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      const auto err = to_api_error(e);
      if (err.http_status >= 500) std::cerr << "recitygen: " << e.what() << "\n";
      send_json(res, err.http_status, error_body(err.code, err.message));
    } catch (const std::exception& e) {
      std::cerr << "recitygen: " << e.what() << "\n";
      send_json(res, 500, error_body(kInternalCode, e.what()));
    }
  });
  // Fills bodies for statuses httplib produces itself (404 route, 413 payload).
  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    const std::string_view code = res.status == 413   ? code_name(ErrorCode::ImageTooLarge)
                                  : res.status == 404 ? kNotFoundCode
                                  : res.status < 500  ? code_name(ErrorCode::InvalidRequest)
                                                      : kInternalCode;
    res.set_content(error_body(code, httplib::status_message(res.status)).dump(), kJson);
    return httplib::Server::HandlerResponse::Handled;
  });

  svr.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200,
              json{{"status", "ok"},
                   {"segmenter", health_json(health_check(sessions.segmenter()))},
                   {"inpainter", health_json(health_check(sessions.inpainter()))}});
  });

  svr.Post("/api/entries", [this](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data()) throw bad_request("expected multipart/form-data");
    if (!req.has_file("lat") || !req.has_file("lon")) throw Error(ErrorCode::InvalidGeo, "lat and lon are required");
    if (!req.has_file("image")) throw Error(ErrorCode::BadImage, "image part is missing");
    const GeoPoint geo{parse_double(req.get_file_value("lat").content, "lat"),
                       parse_double(req.get_file_value("lon").content, "lon")};
    std::optional<std::string> note;
    if (req.has_file("note") && !req.get_file_value("note").content.empty()) {
      note = req.get_file_value("note").content;
    }
    const auto& image = req.get_file_value("image").content;
    const auto entry = store.create_entry(geo, as_bytes(image), note);
    send_json(res, 201, json{{"entry_id", entry.id}, {"entry", entry_json(entry)}});
  });

  svr.Get("/api/entries", [this](const httplib::Request& req, httplib::Response& res) {
    std::vector<FeedbackEntry> found;
    if (req.has_param("bbox")) {
      const auto text = req.get_param_value("bbox");
      std::array<double, 4> v{};
      std::size_t start = 0;
      for (std::size_t i = 0; i < 4; ++i) {
        const auto comma = text.find(',', start);
        if ((i < 3) != (comma != std::string::npos)) {
          throw Error(ErrorCode::InvalidBox, "bbox must be minLat,minLon,maxLat,maxLon");
        }
        v[i] = parse_double(text.substr(start, comma - start), "bbox");
        start = comma + 1;
      }
      found = store.query_bbox(v[0], v[1], v[2], v[3]);
    } else {
      found = store.entries();
    }
    json list = json::array();
    for (const auto& e : found) list.push_back(entry_json(e));
    send_json(res, 200, json{{"entries", list}});
  });

  svr.Get(R"(/api/entries/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto entry = store.entry(req.matches[1]);
    if (!entry) throw Error(ErrorCode::UnknownEntry, "no entry " + std::string(req.matches[1]));
    json variants = json::array();
    for (const auto& v : store.variants_for_entry(entry->id)) variants.push_back(variant_json(v));
    send_json(res, 200, json{{"entry", entry_json(*entry)}, {"variants", variants}});
  });

  svr.Get(R"(/api/entries/([0-9A-Za-z]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto entry = store.entry(req.matches[1]);
    if (!entry) throw Error(ErrorCode::UnknownEntry, "no entry " + std::string(req.matches[1]));
    const auto png = store.read_blob(entry->image_ref);
    res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
  });

  svr.Post(R"(/api/entries/([0-9A-Za-z]+)/sessions)", [this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 201, session_json(sessions.new_session(req.matches[1])));
  });

  svr.Get(R"(/api/sessions/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, session_json(sessions.session(req.matches[1])));
  });

  svr.Post(R"(/api/sessions/([0-9A-Za-z]+)/clicks)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    const ClickPoint click{clamp_int(int_field(body, "x")), clamp_int(int_field(body, "y")),
                           parse_polarity(body)};
    send_json(res, 200, session_json(sessions.add_click(req.matches[1], click)));
  });

  svr.Post(R"(/api/sessions/([0-9A-Za-z]+)/undo)", [this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, session_json(sessions.undo_click(req.matches[1])));
  });

  svr.Post(R"(/api/sessions/([0-9A-Za-z]+)/select)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto index = int_field(parse_body(req), "index");
    if (index < 0) throw Error(ErrorCode::IndexOutOfRange, "index must be >= 0");
    send_json(res, 200, session_json(sessions.select_candidate(req.matches[1], static_cast<std::size_t>(index))));
  });

  svr.Post(R"(/api/sessions/([0-9A-Za-z]+)/generate)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    GenerationParams params;
    const auto prompt = body.find("prompt");
    if (prompt != body.end() && !prompt->is_string()) throw bad_request("'prompt' must be a string");
    if (prompt != body.end()) params.prompt = prompt->get<std::string>();
    if (const auto seed = body.find("seed"); seed != body.end() && !seed->is_null()) {
      if (!seed->is_number_unsigned()) throw bad_request("'seed' must be a non-negative integer");
      params.seed = seed->get<std::uint64_t>();
    }
    if (body.contains("num_variants") && !body["num_variants"].is_null()) {
      params.num_variants = clamp_int(int_field(body, "num_variants"));
    }
    const auto job = sessions.submit_generation(req.matches[1], std::move(params));
    send_json(res, 202, json{{"job_id", job.job_id}, {"seed", job.seed}, {"state", state_name(job.state)}});
  });

  svr.Get(R"(/api/jobs/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, job_json(sessions.poll_job(req.matches[1])));
  });

  svr.Get(R"(/api/variants/([0-9A-Za-z]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto variant = store.variant(req.matches[1]);
    if (!variant) throw Error(ErrorCode::UnknownVariant, "no variant " + std::string(req.matches[1]));
    const auto png = store.read_blob(variant->image_ref);
    res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
  });

  svr.Post(R"(/api/variants/([0-9A-Za-z]+)/rating)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    const std::string id = req.matches[1];
    if (!store.variant(id)) throw Error(ErrorCode::UnknownVariant, "no variant " + id);
    const auto score = body.find("score");
    if (score == body.end() || !score->is_number()) throw bad_request("'score' must be an integer");
    if (!score->is_number_integer()) throw Error(ErrorCode::ScoreOutOfRange, "score must be an integer 1..5");
    const auto rating = store.save_rating(id, clamp_int(score->get<std::int64_t>()));
    send_json(res, 201, json{{"variant_id", rating.variant_id}, {"score", rating.score},
                             {"created_at", rating.created_at}});
  });

  svr.Post(R"(/api/entries/([0-9A-Za-z]+)/questionnaire)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    QuestionnaireResponse q;
    q.entry_id = req.matches[1];
    if (!store.entry(q.entry_id)) throw Error(ErrorCode::UnknownEntry, "no entry " + q.entry_id);
    for (int i = 0; i < kQuestionCount; ++i) {
      const auto key = "q" + std::to_string(i + 1);
      const auto it = body.find(key);
      if (it == body.end() || !it->is_number()) throw bad_request("'" + key + "' must be an integer 1..5");
      if (!it->is_number_integer()) throw Error(ErrorCode::ScoreOutOfRange, key + " must be an integer 1..5");
      q.answers[static_cast<std::size_t>(i)] = clamp_int(it->get<std::int64_t>());
    }
    q.gender = text_field(body, "gender");
    q.education = text_field(body, "education");
    q.birth_year = text_field(body, "birth_year");
    q.profession = text_field(body, "profession");
    q.design_background = text_field(body, "design_background");
    q.open_feedback = text_field(body, "open_feedback");
    const auto saved = store.save_questionnaire(std::move(q));
    send_json(res, 201, json{{"entry_id", saved.entry_id}, {"created_at", saved.created_at}});
  });

  svr.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, stats_json(store.aggregate_stats()));
  });
}

void serve(const ServiceConfig& config, const std::function<void(int)>& on_ready) {
  // Block the signals before any thread exists so only the waiter sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ApiService service(config);
  const int port = service.bind();
  std::atomic<bool> signalled{false};
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    signalled = true;
    service.stop();
  });
  if (on_ready) on_ready(port);
  service.run();
  // The listener can also die on its own; wake the waiter so it can be joined.
  if (!signalled) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  service.stop();
}

}  // namespace recitygen
