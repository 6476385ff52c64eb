#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "combo/ids.hpp"

namespace combo {

struct NetConfig {
  double per_pair_bw = 10e6;      // bits/s, cap on any single flow
  double node_capacity = 100e6;   // bits/s, separately for ingress and egress
  std::uint64_t bytes_per_parameter = 8;
  // Wire size of one full model. When set, a segment of k parameters out of
  // dim weighs model_bytes * k / dim instead of k * bytes_per_parameter.
  std::optional<double> model_bytes;
  double compute_time_per_step = 0.01;             // seconds per SGD step
  std::map<WorkerId, double> compute_multiplier;   // per-worker slowdown
  double failure_detection_delay = 0.0;            // seconds per failed contact

  double step_time(WorkerId worker) const;
  void validate() const;
};

struct FlowEndpoints {
  WorkerId src{};
  WorkerId dst{};
};

/// Max-min fair rates (bits/s) for a set of concurrently active flows.
///
/// Progressive filling: all unfrozen flows rise together; a flow freezes
/// when it reaches per_pair_bw or when the egress of its source or the
/// ingress of its destination fills node_capacity. Returns one rate per
/// input flow, in input order.
std::vector<double> allocate_rates(std::span<const FlowEndpoints> flows,
                                   const NetConfig& config);

struct Flow {
  WorkerId src{};
  WorkerId dst{};
  double size = 0.0;          // bytes
  double release_time = 0.0;  // seconds
  double completion_time = 0.0;
  double delivered = 0.0;     // integral of rate over time, in bytes
};

// Runs a fixed set of flows to completion on an otherwise idle network.
// Rates are re-allocated at every arrival and completion; ties are broken by
// (time, flow index). Zero-byte flows complete at their release time.
std::vector<Flow> simulate_flows(std::vector<Flow> flows, const NetConfig& config);

// Logical-trace demands, already converted to bytes.
struct PullDemand {
  WorkerId provider{};
  double bytes = 0.0;
  std::uint32_t failed_attempts = 0;  // contacts that failed before this one
};

struct WorkerDemand {
  WorkerId worker{};
  std::uint64_t steps = 0;
  std::vector<PullDemand> pulls;
};

struct JoinDemand {
  WorkerId worker{};
  std::vector<PullDemand> pulls;
};

struct RoundDemand {
  std::uint64_t round = 0;
  std::vector<WorkerDemand> workers;
  std::vector<JoinDemand> joins;     // newcomers admitted before this round
  std::optional<WorkerId> server;    // FedAvg only
};

struct NetTrace {
  std::vector<RoundDemand> rounds;
  double model_bytes = 0.0;  // full-model wire size (FedAvg transfers)
};

struct WorkerTiming {
  std::uint64_t round = 0;
  WorkerId worker{};
  double update_start = 0.0;
  double update_end = 0.0;
  double aggregation = 0.0;
  double bytes_received = 0.0;

  double sync_time() const noexcept { return aggregation - update_end; }
};

struct Timeline {
  std::vector<WorkerTiming> entries;  // sorted by (round, worker)
  std::vector<double> round_end;      // per trace round: latest aggregation
  double total_bytes = 0.0;

  const WorkerTiming* find(std::uint64_t round, WorkerId worker) const;
  double mean_sync_time() const;
};

/// Wall-clock replay of a segmented-gossip trace.
///
/// A pull from provider j for round t is released once j has finished its
/// round-t local update and the requester has entered round t, plus one
/// failure_detection_delay per failed contact before it. A worker
/// aggregates when its own update and all its pulls are done, and starts
/// the next round at that instant. Throws Errc::inconsistent_trace when a
/// provider is not a participant of the round or a worker repeats.
Timeline simulate(const NetTrace& trace, const NetConfig& config);

/// Wall-clock replay of a FedAvg trace: every client uploads its full model
/// to the round's server, the server aggregates once all uploads and its own
/// update are done, then sends the aggregate back. The server's own transfer
/// is loopback and costs nothing. `server` applies to rounds that do not
/// record one; the server must participate in every round.
Timeline fedavg_timing(const NetTrace& trace, std::optional<WorkerId> server,
                       const NetConfig& config);

}  // namespace combo
