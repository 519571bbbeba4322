#include "recitygen/gateway.hpp"

#include <httplib.h>

#include <nlohmann/json.hpp>
#include <regex>
#include <thread>

#include "recitygen/codec.hpp"
#include "recitygen/mask_ops.hpp"

namespace recitygen {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

struct ParsedUrl {
  std::string scheme_host_port;
  std::string base_path;
};

ParsedUrl parse_url(const std::string& url) {
  static const std::regex pattern(R"(^(http://[A-Za-z0-9._~\-]+|http://\[[0-9A-Fa-f:.]+\])(:[0-9]{1,5})?(/[^\s?#]*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, pattern)) {
    throw Error(ErrorCode::InvalidBackend, "not an absolute http:// URL: '" + url + "'");
  }
  if (m[2].matched) {
    const int port = std::stoi(m[2].str().substr(1));
    if (port < 1 || port > 65535) throw Error(ErrorCode::InvalidBackend, "bad port in '" + url + "'");
  }
  std::string base = m[3].matched ? m[3].str() : "";
  while (!base.empty() && base.back() == '/') base.pop_back();
  return {m[1].str() + (m[2].matched ? m[2].str() : ""), base};
}

class WireClient {
 public:
  explicit WireClient(const BackendRef& backend)
      : url_(parse_url(backend.endpoint)), timeout_(backend.timeout), client_(url_.scheme_host_port) {
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client_.set_connection_timeout(secs.count(), usecs.count());
    client_.set_read_timeout(secs.count(), usecs.count());
    client_.set_write_timeout(secs.count(), usecs.count());
  }

  json post(const std::string& path, const json& body) {
    const std::string payload = body.dump();
    return call(path, [&](const std::string& full) {
      return client_.Post(full, payload, "application/json");
    });
  }

  httplib::Result get(const std::string& path) { return client_.Get(url_.base_path + path); }

 private:
  template <typename Send>
  json call(const std::string& path, Send send) {
    const std::string full = url_.base_path + path;
    httplib::Result result;
    // One retry on connection failure; none on timeout.
    for (int attempt = 0; attempt < 2; ++attempt) {
      const auto start = Clock::now();
      result = send(full);
      if (result) break;
      const auto err = result.error();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             ((err == httplib::Error::Read || err == httplib::Error::Write) &&
                              Clock::now() - start >= timeout_ * 9 / 10);
      if (timed_out) {
        throw Error(ErrorCode::BackendTimeout, path + " after " + std::to_string(timeout_.count()) + " ms");
      }
      if (err != httplib::Error::Connection || attempt == 1) {
        throw Error(ErrorCode::BackendUnreachable, path + ": " + httplib::to_string(err));
      }
    }
    const int status = result->status;
    if (status < 200 || status >= 300) {
      std::string detail = "HTTP " + std::to_string(status);
      const auto body = json::parse(result->body, nullptr, false);
      if (body.is_object() && body.contains("error") && body["error"].is_string()) {
        detail += ": " + body["error"].get<std::string>();
      }
      throw Error(status >= 500 ? ErrorCode::BackendUnreachable : ErrorCode::ProtocolError,
                  path + " " + detail);
    }
    auto body = json::parse(result->body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) {
      throw Error(ErrorCode::ProtocolError, path + ": response is not a JSON object");
    }
    return body;
  }

  ParsedUrl url_;
  std::chrono::milliseconds timeout_;
  httplib::Client client_;
};

void require_include(std::span<const ClickPoint> clicks) {
  for (const auto& c : clicks) {
    if (c.polarity == Polarity::Include) return;
  }
  throw Error(ErrorCode::NoIncludeClick, "at least one '+' click required");
}

template <typename T>
T field(const json& obj, const char* name, const char* context) {
  if (!obj.is_object() || !obj.contains(name)) {
    throw Error(ErrorCode::ProtocolError, std::string(context) + ": missing '" + name + "'");
  }
  try {
    return obj.at(name).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::ProtocolError, std::string(context) + ": bad type for '" + name + "'");
  }
}

std::vector<MaskCandidate> http_segment(const BackendRef& backend, const ImageBuffer& image,
                                        std::span<const ClickPoint> clicks) {
  json points = json::array();
  for (const auto& c : clicks) {
    points.push_back({{"x", c.x}, {"y", c.y}, {"label", c.polarity == Polarity::Include ? 1 : 0}});
  }
  const json request{{"image_png", base64_encode(encode_png(image))}, {"points", points}};
  WireClient client(backend);
  const json response = client.post("/v1/segment", request);
  const auto masks = field<json>(response, "masks", "segment response");
  if (!masks.is_array() || masks.empty()) {
    throw Error(ErrorCode::ProtocolError, "segment response: 'masks' must be a non-empty array");
  }
  std::vector<MaskCandidate> out;
  for (const auto& m : masks) {
    const int w = field<int>(m, "width", "mask");
    const int h = field<int>(m, "height", "mask");
    const double score = field<double>(m, "score", "mask");
    const auto raw = field<std::vector<std::int64_t>>(m, "rle", "mask");
    if (w != image.width() || h != image.height()) {
      throw Error(ErrorCode::ProtocolError, "mask is " + std::to_string(w) + "x" + std::to_string(h) +
                                                " for a " + std::to_string(image.width()) + "x" +
                                                std::to_string(image.height()) + " image");
    }
    if (!(score >= 0.0 && score <= 1.0)) {
      throw Error(ErrorCode::ProtocolError, "mask score outside [0,1]");
    }
    RunLengths runs;
    runs.reserve(raw.size());
    for (const auto r : raw) {
      if (r < 0) throw Error(ErrorCode::ProtocolError, "negative run length");
      runs.push_back(static_cast<std::uint64_t>(r));
    }
    try {
      out.push_back({rle_decode(runs, w, h), score});
    } catch (const Error& e) {
      throw Error(ErrorCode::ProtocolError, "mask rle: " + std::string(e.what()));
    }
  }
  sort_candidates(out);
  return out;
}

std::vector<ImageBuffer> http_inpaint(const BackendRef& backend, const InpaintRequest& req) {
  const json request{{"image_png", base64_encode(encode_png(req.image))},
                     {"mask_png", base64_encode(encode_png(req.alpha))},
                     {"prompt", req.prompt},
                     {"seed", req.seed},
                     {"num_images", req.num_variants}};
  WireClient client(backend);
  const json response = client.post("/v1/inpaint", request);
  const auto images = field<std::vector<std::string>>(response, "images", "inpaint response");
  if (static_cast<int>(images.size()) != req.num_variants) {
    throw Error(ErrorCode::ProtocolError, "expected " + std::to_string(req.num_variants) +
                                              " images, got " + std::to_string(images.size()));
  }
  std::vector<ImageBuffer> variants;
  for (const auto& b64 : images) {
    try {
      auto img = decode_png_rgb(base64_decode(b64));
      if (img.width() != req.image.width() || img.height() != req.image.height()) {
        throw Error(ErrorCode::ProtocolError, "variant dimensions differ from the request image");
      }
      variants.push_back(std::move(img));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ProtocolError) throw;
      throw Error(ErrorCode::ProtocolError, std::string("variant payload: ") + e.what());
    }
  }
  return variants;
}

// Guarantees alpha-0 identity on a backend result under the backend's policy.
void enforce_outside_mask(const InpaintRequest& req, OutsideMaskPolicy policy,
                          std::vector<ImageBuffer>& variants) {
  const auto src = req.image.data();
  for (auto& variant : variants) {
    auto dst = variant.data();
    for (std::size_t p = 0; p < req.image.pixel_count(); ++p) {
      if (req.alpha.at(p) != 0) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        if (dst[p * 3 + c] == src[p * 3 + c]) continue;
        if (policy == OutsideMaskPolicy::Reject) {
          throw Error(ErrorCode::ProtocolError,
                      "backend modified unmasked pixel " + std::to_string(p));
        }
        dst[p * 3 + c] = src[p * 3 + c];
      }
    }
  }
}

}  // namespace

BackendRef BackendRef::mock(std::chrono::milliseconds delay) {
  BackendRef ref;
  ref.mock_delay = delay;
  return ref;
}

BackendRef BackendRef::http(std::string endpoint, std::chrono::milliseconds timeout) {
  parse_url(endpoint);
  BackendRef ref;
  ref.kind = BackendKind::Http;
  ref.endpoint = std::move(endpoint);
  ref.timeout = timeout;
  return ref;
}

BackendRef BackendRef::parse(std::string_view spec) {
  if (spec == "mock") return mock();
  constexpr std::string_view kDelay = "mock:delay_ms=";
  if (spec.substr(0, kDelay.size()) == kDelay) {
    const std::string digits(spec.substr(kDelay.size()));
    if (digits.empty() || digits.size() > 7 ||
        digits.find_first_not_of("0123456789") != std::string::npos) {
      throw Error(ErrorCode::InvalidBackend, "bad mock delay in '" + std::string(spec) + "'");
    }
    return mock(std::chrono::milliseconds{std::stoll(digits)});
  }
  return http(std::string(spec));
}

std::string BackendRef::describe() const {
  if (kind == BackendKind::Mock) return "mock";
  return endpoint;
}

std::string_view state_name(HealthStatus::State state) {
  switch (state) {
    case HealthStatus::State::Ok: return "ok";
    case HealthStatus::State::Degraded: return "degraded";
    case HealthStatus::State::Down: return "down";
  }
  return "down";
}

std::size_t utf8_length(std::string_view text) noexcept {
  std::size_t n = 0;
  for (const unsigned char c : text) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::optional<ErrorCode> prompt_problem(std::string_view prompt) noexcept {
  const auto first = prompt.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return ErrorCode::PromptEmpty;
  if (utf8_length(prompt) > kMaxPromptChars) return ErrorCode::PromptTooLong;
  return std::nullopt;
}

void validate(const InpaintRequest& request) {
  if (request.alpha.width() != request.image.width() ||
      request.alpha.height() != request.image.height()) {
    throw Error(ErrorCode::InvalidRequest, "alpha dimensions differ from image dimensions");
  }
  if (const auto problem = prompt_problem(request.prompt)) {
    throw Error(ErrorCode::InvalidRequest, std::string(code_name(*problem)));
  }
  if (request.num_variants < 1 || request.num_variants > kMaxVariants) {
    throw Error(ErrorCode::InvalidRequest, "num_variants must be within 1..8");
  }
}

std::vector<MaskCandidate> segment(const BackendRef& backend, const ImageBuffer& image,
                                   std::span<const ClickPoint> clicks) {
  for (const auto& c : clicks) {
    if (!in_bounds(c, image.width(), image.height())) {
      throw Error(ErrorCode::OutOfBounds,
                  "click (" + std::to_string(c.x) + "," + std::to_string(c.y) + ") outside image");
    }
  }
  require_include(clicks);
  if (backend.kind == BackendKind::Mock) {
    if (backend.mock_delay.count() > 0) std::this_thread::sleep_for(backend.mock_delay);
    return fallback_segment(image, clicks, SegmentationParams{});
  }
  return http_segment(backend, image, clicks);
}

ImageBuffer mock_inpaint_variant(const ImageBuffer& image, const AlphaMask& alpha,
                                 std::string_view prompt, std::uint64_t seed, int index) {
  ImageBuffer out = image;
  const std::uint64_t base =
      fnv1a64(prompt) ^ seed ^ (static_cast<std::uint64_t>(index) * 0x9E3779B97F4A7C15ULL);
  auto dst = out.data();
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    if (alpha.at(p) == 0) continue;
    const std::uint64_t word = mix64(base ^ static_cast<std::uint64_t>(p));
    for (std::size_t c = 0; c < 3; ++c) {
      dst[p * 3 + c] = static_cast<std::uint8_t>((word >> (8 * c)) & 0xFF);
    }
  }
  return out;
}

InpaintResult inpaint(const BackendRef& backend, const InpaintRequest& request) {
  validate(request);
  const auto start = Clock::now();
  InpaintResult result;
  if (backend.kind == BackendKind::Mock) {
    if (backend.mock_delay.count() > 0) std::this_thread::sleep_for(backend.mock_delay);
    for (int i = 0; i < request.num_variants; ++i) {
      result.variants.push_back(
          mock_inpaint_variant(request.image, request.alpha, request.prompt, request.seed, i));
    }
  } else {
    result.variants = http_inpaint(backend, request);
  }
  enforce_outside_mask(request, backend.outside_mask, result.variants);
  result.backend_id = backend.describe();
  result.elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start);
  return result;
}

HealthStatus health_check(const BackendRef& backend) {
  if (backend.kind == BackendKind::Mock) return {HealthStatus::State::Ok, ""};
  try {
    WireClient client(backend);
    auto result = client.get("/v1/health");
    if (!result) {
      const auto err = result.error();
      const std::string why = err == httplib::Error::Connection ? "connection refused"
                              : err == httplib::Error::ConnectionTimeout ? "timeout"
                                                                         : httplib::to_string(err);
      return {HealthStatus::State::Down, why};
    }
    if (result->status == 200) return {HealthStatus::State::Ok, ""};
    return {HealthStatus::State::Degraded, "HTTP " + std::to_string(result->status)};
  } catch (const Error& e) {
    return {HealthStatus::State::Down, e.what()};
  }
}

}  // namespace recitygen
