#include "combo/error.hpp"

namespace combo {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::invalid_scheme: return "invalid-scheme";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::missing_segment: return "missing-segment";
    case Errc::duplicate_segment: return "duplicate-segment";
    case Errc::segment_length: return "segment-length";
    case Errc::empty_providers: return "empty-providers";
    case Errc::non_positive_weight: return "non-positive-weight";
    case Errc::duplicate_provider: return "duplicate-provider";
    case Errc::insufficient_peers: return "insufficient-peers";
    case Errc::join_rejected: return "join-rejected";
    case Errc::numeric_failure: return "numeric-failure";
    case Errc::invalid_config: return "invalid-config";
    case Errc::parse_error: return "parse-error";
    case Errc::unsupported_version: return "unsupported-version";
    case Errc::inconsistent_trace: return "inconsistent-trace";
  }
  return "unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

}  // namespace combo
