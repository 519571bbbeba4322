#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace recitygen {

// Closed set of failure kinds shared by every module. The snake_case names
// returned by code_name() are the stable machine codes of the REST API.
enum class ErrorCode {
  // mask-engine
  DimensionMismatch,
  NoIncludeClick,
  OutOfBounds,
  IncludeInsideBarrier,
  RunSumMismatch,
  IllegalZeroRun,
  InvalidArgument,
  // codecs
  BadImage,
  ImageTooLarge,
  // backend-gateway
  BackendUnreachable,
  BackendTimeout,
  ProtocolError,
  InvalidRequest,
  InvalidBackend,
  // session-pipeline
  UnknownEntry,
  UnknownSession,
  FirstClickMustInclude,
  TooManyClicks,
  NothingToUndo,
  IndexOutOfRange,
  NoMask,
  PromptEmpty,
  PromptTooLong,
  UnknownJob,
  ShuttingDown,
  // feedback-store
  IoError,
  CorruptLog,
  InvalidGeo,
  InvalidBox,
  UnknownReference,
  UnknownVariant,
  ScoreOutOfRange,
  InvalidField,
  // api-service
  PortInUse,
  StoreOpenFailure,
};

constexpr std::string_view code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "dimension_mismatch";
    case ErrorCode::NoIncludeClick: return "no_include_click";
    case ErrorCode::OutOfBounds: return "out_of_bounds";
    case ErrorCode::IncludeInsideBarrier: return "include_inside_barrier";
    case ErrorCode::RunSumMismatch: return "run_sum_mismatch";
    case ErrorCode::IllegalZeroRun: return "illegal_zero_run";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::BadImage: return "bad_image";
    case ErrorCode::ImageTooLarge: return "too_large";
    case ErrorCode::BackendUnreachable: return "backend_unreachable";
    case ErrorCode::BackendTimeout: return "backend_timeout";
    case ErrorCode::ProtocolError: return "protocol_error";
    case ErrorCode::InvalidRequest: return "invalid_request";
    case ErrorCode::InvalidBackend: return "invalid_backend";
    case ErrorCode::UnknownEntry: return "unknown_entry";
    case ErrorCode::UnknownSession: return "unknown_session";
    case ErrorCode::FirstClickMustInclude: return "first_click_must_include";
    case ErrorCode::TooManyClicks: return "too_many_clicks";
    case ErrorCode::NothingToUndo: return "nothing_to_undo";
    case ErrorCode::IndexOutOfRange: return "index_out_of_range";
    case ErrorCode::NoMask: return "no_mask";
    case ErrorCode::PromptEmpty: return "prompt_empty";
    case ErrorCode::PromptTooLong: return "prompt_too_long";
    case ErrorCode::UnknownJob: return "unknown_job";
    case ErrorCode::ShuttingDown: return "shutting_down";
    case ErrorCode::IoError: return "io_error";
    case ErrorCode::CorruptLog: return "corrupt_log";
    case ErrorCode::InvalidGeo: return "invalid_geo";
    case ErrorCode::InvalidBox: return "invalid_box";
    case ErrorCode::UnknownReference: return "unknown_reference";
    case ErrorCode::UnknownVariant: return "unknown_variant";
    case ErrorCode::ScoreOutOfRange: return "score_out_of_range";
    case ErrorCode::InvalidField: return "invalid_field";
    case ErrorCode::PortInUse: return "port_in_use";
    case ErrorCode::StoreOpenFailure: return "store_open_failure";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(code_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace recitygen
