#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace combo {

enum class Errc {
  invalid_argument,
  invalid_scheme,
  dimension_mismatch,
  missing_segment,
  duplicate_segment,
  segment_length,
  empty_providers,
  non_positive_weight,
  duplicate_provider,
  insufficient_peers,
  join_rejected,
  numeric_failure,
  invalid_config,
  parse_error,
  unsupported_version,
  inconsistent_trace,
};

std::string_view to_string(Errc code) noexcept;

// Every failure raised by the library carries one of the codes above so
// callers (CLI, bindings, tests) can branch on the kind without parsing text.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace combo
