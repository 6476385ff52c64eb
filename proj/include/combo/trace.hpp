#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "combo/aggregation.hpp"
#include "combo/gossip.hpp"
#include "combo/model_params.hpp"
#include "combo/tasks.hpp"

namespace combo {

inline constexpr int kTraceVersion = 1;

struct ProviderEntry {
  std::size_t segment = 0;
  std::size_t replica = 0;
  WorkerId provider{};
  std::uint32_t failed = 0;  // failed contacts before this provider answered
  std::size_t params = 0;    // segment length, i.e. flow size in parameters
};

struct FailureEntry {
  std::size_t segment = 0;
  std::size_t replica = 0;
  WorkerId target{};
};

struct TraceInit {
  int version = kTraceVersion;
  std::string mode;
  std::vector<WorkerId> workers;
  std::size_t dim = 0;
  std::size_t segments = 0;
  std::size_t replicas = 0;
  std::size_t local_steps = 0;
  std::uint64_t seed = 0;
  std::vector<SegmentRange> scheme;
  WeightTable weights;
  std::string config;  // the full run config as JSON text
  Metrics metrics;     // of the shared initial model
  std::optional<std::vector<double>> model;
};

struct TraceWorker {
  std::uint64_t round = 0;
  WorkerId worker{};
  std::uint64_t steps = 0;
  Metrics metrics;          // of the aggregated model W_{t,i}
  double oracle_dev = 0.0;  // ||W_{t,i} - W_t||
  std::vector<ProviderEntry> providers;
  std::vector<FailureEntry> failures;
  std::vector<std::size_t> short_segments;
  std::uint64_t rng = 0;  // plan stream draws after this round
  std::optional<std::vector<double>> model;
  std::optional<std::vector<double>> updated;
};

struct TraceJoin {
  std::uint64_t round = 0;  // first round the newcomer takes part in
  WorkerId worker{};
  std::uint64_t weight = 0;
  std::vector<ProviderEntry> providers;
  std::vector<FailureEntry> failures;
  std::optional<std::vector<double>> model;
};

struct TraceChurn {
  std::uint64_t round = 0;
  ChurnKind kind = ChurnKind::crash;
  WorkerId worker{};
};

// A churn event that could not be applied (a refused join, or an event for
// a worker that never joined).
struct TraceReject {
  std::uint64_t round = 0;
  ChurnKind kind = ChurnKind::join;
  WorkerId worker{};
  std::string reason;
};

struct TraceRound {
  std::uint64_t round = 0;
  std::vector<WorkerId> alive;
  std::optional<WorkerId> server;
  Metrics mean;  // federation mean over the alive workers
  std::optional<std::vector<double>> oracle;
};

struct Trace {
  TraceInit init;
  std::vector<TraceChurn> churn;
  std::vector<TraceJoin> joins;
  std::vector<TraceReject> rejects;
  std::vector<TraceWorker> workers;
  std::vector<TraceRound> rounds;
  std::optional<std::string> error;  // set when the run stopped early
};

// One JSON object per line: init first, then per round any churn and join
// records, the worker records and a closing round record; a final error
// record when the run aborted.
void write_trace(const Trace& trace, std::ostream& out);
std::string trace_to_string(const Trace& trace);

// Throws Errc::parse_error (with the line number) on malformed input and
// Errc::unsupported_version for any version other than kTraceVersion.
Trace read_trace(std::istream& in);
Trace trace_from_string(const std::string& text);
Trace load_trace(const std::string& path);

}  // namespace combo
