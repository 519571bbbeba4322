#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "recitygen/error.hpp"
#include "recitygen/gateway.hpp"

namespace recitygen {

class Store;
class SessionManager;

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path data_dir = "data";
  BackendRef segmenter = BackendRef::mock();
  BackendRef inpainter = BackendRef::mock();
  int worker_count = 2;
  std::size_t max_upload_bytes = 16u << 20;
  std::chrono::minutes session_ttl{120};
  std::string cors_origin = "*";  // empty disables CORS headers

  void validate() const;
  // RECITYGEN_PORT, RECITYGEN_DATA_DIR, RECITYGEN_SEGMENTER,
  // RECITYGEN_INPAINTER and RECITYGEN_WORKERS override the matching fields.
  void apply_env();
};

struct ApiError {
  int http_status = 500;
  std::string code;
  std::string message;
};

// Codes outside ErrorCode that the service can also answer with.
inline constexpr std::string_view kNotFoundCode = "not_found";
inline constexpr std::string_view kInternalCode = "internal";

int http_status_for(ErrorCode code);
ApiError to_api_error(const Error& error);

class ApiService {
 public:
  // Opens the store and starts the job workers; throws StoreOpenFailure.
  explicit ApiService(ServiceConfig config);
  ~ApiService();
  ApiService(const ApiService&) = delete;
  ApiService& operator=(const ApiService&) = delete;

  // Throws PortInUse. Returns the bound port.
  int bind();
  // Serves until stop(); bind() must have succeeded.
  void run();
  // Fails queued jobs, waits for running ones, then closes the listener.
  void stop();

  int port() const noexcept { return port_; }
  const ServiceConfig& config() const noexcept { return config_; }
  Store& store();
  SessionManager& sessions();

 private:
  struct Impl;
  ServiceConfig config_;
  int port_ = 0;
  std::unique_ptr<Impl> impl_;
};

// Binds, reports the port through on_ready, and serves until SIGINT or SIGTERM.
void serve(const ServiceConfig& config, const std::function<void(int port)>& on_ready = {});

}  // namespace recitygen
