#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "combo/config.hpp"
#include "combo/gossip.hpp"
#include "combo/netsim.hpp"
#include "combo/tasks.hpp"
#include "combo/trace.hpp"

namespace combo {

// Builds the task a config describes; task streams derive from config.seed.
std::unique_ptr<Task> make_task(const RunConfig& config);

// Identical starting point of every worker.
ModelParams initial_model(const RunConfig& config, std::size_t dim);

struct RunHooks {
  StepObserver on_step;
  std::function<void(const Federation&, const RoundResult&)> on_round;
};

/// Runs the logical simulation a config describes and returns its trace.
///
/// A numeric failure (divergence) stops the run; the trace then holds every
/// completed round and `error` carries the diagnostic. Other errors throw.
Trace run(const RunConfig& config, const RunHooks& hooks = {});

// Byte-level demands of a trace under a network config.
NetTrace demands(const Trace& trace, const NetConfig& net);

struct TimelineRow {
  std::uint64_t round = 0;
  WorkerId worker{};
  double update_start = 0.0;
  double update_end = 0.0;
  double aggregation = 0.0;
  double bytes = 0.0;
  Metrics metrics;

  double sync_time() const noexcept { return aggregation - update_end; }
};

struct TimelineRound {
  std::uint64_t round = 0;
  double time = 0.0;  // latest aggregation of the round
  Metrics mean;
  double mean_sync_time = 0.0;
  double bytes = 0.0;
};

struct TimelineData {
  std::string mode;
  std::size_t workers = 0;
  std::size_t segments = 0;
  std::size_t replicas = 0;
  std::size_t local_steps = 0;
  std::uint64_t seed = 0;
  double model_bytes = 0.0;
  NetConfig net;
  Metrics initial;  // round 0 at time 0
  std::vector<TimelineRow> rows;
  std::vector<TimelineRound> rounds;
  double total_bytes = 0.0;
  std::optional<std::string> error;

  double mean_sync_time() const;
};

/// Replays a trace on the simulated network and attaches wall-clock times.
TimelineData attach_times(const Trace& trace, const NetConfig& net);

void write_timeline(const TimelineData& timeline, std::ostream& out);
TimelineData read_timeline(std::istream& in);
TimelineData load_timeline(const std::string& path);

// Aggregation divergence over a trace recorded with record_models.
double measure_rho(const Trace& trace);

struct SweepPoint {
  std::string value;
  std::string trace_path;
  std::string timeline_path;
};

/// Runs `base` once per value of `key`, writing trace and timeline files
/// into `out_dir` plus the report tables for the whole set.
std::vector<SweepPoint> sweep(const RunConfig& base, std::string_view key,
                              const std::vector<std::string>& values, const std::string& out_dir);

}  // namespace combo
