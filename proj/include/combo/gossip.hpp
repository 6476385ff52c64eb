#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "combo/aggregation.hpp"
#include "combo/ids.hpp"
#include "combo/model_params.hpp"
#include "combo/rng.hpp"
#include "combo/tasks.hpp"

namespace combo {

struct PullRequest {
  WorkerId requester{};
  WorkerId target{};
  std::size_t segment = 0;
  std::size_t replica = 0;
  std::uint64_t round = 0;

  friend bool operator==(const PullRequest&, const PullRequest&) = default;
};

// S x R requests of one worker for one round, segment-major.
struct PullPlan {
  WorkerId requester{};
  std::uint64_t round = 0;
  std::vector<PullRequest> requests;
};

/// Chooses a target for each of the S x R segment requests.
///
/// Targets come from a pool that is shuffled and consumed without
/// replacement, and refilled with a fresh shuffle once no usable peer is left
/// in it. The R targets of one segment are always distinct, and when
/// S x R <= |alive_peers| every target is distinct. Throws
/// Errc::insufficient_peers when fewer than R peers are alive.
PullPlan plan_pulls(WorkerId worker, std::span<const WorkerId> alive_peers,
                    std::size_t segments, std::size_t replicas, std::uint64_t round,
                    Rng& rng);

enum class Phase { updating, awaiting_segments, aggregating, offline };

struct WorkerState {
  WorkerId id{};
  ModelParams model;
  std::uint64_t dataset_size = 0;
  std::uint64_t round = 0;
  Phase phase = Phase::updating;
  std::vector<PullRequest> pending;
  std::vector<Segment> received;
  std::map<WorkerId, bool> peers;  // peer -> offline flag

  // Peers not currently flagged offline, ascending.
  std::vector<WorkerId> reachable_peers() const;
};

/// Re-routes a request whose target turned out to be unreachable.
///
/// Flags the target offline in the worker's peer list and picks a new
/// target uniformly among reachable peers outside `segment_providers` (the
/// peers already assigned to that segment this round). Returns nullopt when
/// no such peer exists; the segment then aggregates with fewer replicas.
std::optional<PullRequest> handle_peer_failure(WorkerState& worker,
                                               const PullRequest& failed,
                                               std::span<const WorkerId> segment_providers,
                                               Rng& rng);

enum class ChurnKind { join, graceful_leave, crash, recover };

// Applied at the boundary before logical round `round` starts.
struct ChurnEvent {
  ChurnKind kind = ChurnKind::crash;
  WorkerId worker{};
  std::uint64_t round = 0;
};

struct ProtocolConfig {
  std::size_t segments = 10;  // S
  std::size_t replicas = 2;   // R
  SgdConfig sgd;
  std::uint64_t seed = 0;
};

// One successfully served pull.
struct Provision {
  std::size_t segment = 0;
  std::size_t replica = 0;
  WorkerId provider{};
  std::uint32_t failed_attempts = 0;  // failed contacts before this one
};

struct WorkerRound {
  WorkerId worker{};
  std::uint64_t round = 0;
  ModelParams updated;     // after the local SGD steps
  ModelParams aggregated;  // W_{t,i}
  std::vector<Provision> pulls;
  std::vector<PullRequest> failures;
  std::vector<std::size_t> short_segments;  // aggregated with fewer than R replicas
  std::uint64_t rng_draws = 0;
};

struct RoundResult {
  std::uint64_t round = 0;
  std::vector<WorkerRound> workers;  // ascending worker id
  ModelParams oracle;                // FedAvg aggregate of the post-update models
  std::optional<WorkerId> server;    // FedAvg rounds only
};

struct JoinResult {
  WorkerId worker{};
  std::uint64_t round = 0;  // the round the newcomer enters
  std::vector<Provision> pulls;
  std::vector<PullRequest> failures;
  ModelParams model;
};

using StepObserver = std::function<void(WorkerId, std::span<const double>)>;

/// Bulk-synchronous federation of segmented-gossip workers.
///
/// All workers start from the same initial parameters. Membership changes
/// (join, leave, crash, recover) happen between rounds; each worker's view
/// of its peers is updated only by contact, as a real deployment would.
class Federation {
 public:
  Federation(const Task& task, SegmentationScheme scheme, ProtocolConfig config,
             ModelParams initial, std::span<const WorkerId> members);

  // Steps (1)-(4) for every live worker: local update, segment pulling with
  // failure re-routing, and segment-wise aggregation.
  RoundResult step_round();

  JoinResult join(WorkerId id);
  // Admits a newcomer with a given model and no pulls (FedAvg download).
  void admit(WorkerId id, ModelParams model);
  void leave(WorkerId id);
  void crash(WorkerId id);
  void recover(WorkerId id);
  void apply(const ChurnEvent& event);

  // Building blocks shared with the baselines.
  std::uint64_t begin_round();
  ModelParams update_worker(WorkerId id);
  void finish_worker(WorkerId id, ModelParams aggregated);

  std::vector<WorkerId> alive() const;
  bool is_alive(WorkerId id) const;
  bool is_member(WorkerId id) const;
  const WorkerState& worker(WorkerId id) const;
  std::uint64_t round() const noexcept { return round_; }
  const SegmentationScheme& scheme() const noexcept { return scheme_; }
  const ProtocolConfig& config() const noexcept { return config_; }
  const Task& task() const noexcept { return task_; }
  WeightTable weights() const;
  std::uint64_t plan_draws(WorkerId id) const;

  // Sees every iterate at which a local gradient is taken.
  void set_step_observer(StepObserver observer) { observer_ = std::move(observer); }

 private:
  enum class Liveness { up, crashed, left };

  struct Member {
    WorkerState state;
    Liveness liveness = Liveness::up;
    MinibatchSampler sampler;
    Rng plan_rng;
  };

  Member& member(WorkerId id);
  const Member& member(WorkerId id) const;
  Member make_member(WorkerId id, ModelParams model) const;
  // Contact from `from` to `to`: `to` learns of `from`, clearing any flag.
  void register_contact(WorkerId from, WorkerId to);

  struct PullOutcome {
    std::vector<Provision> pulls;
    std::vector<PullRequest> failures;
    std::vector<Segment> segments;
    std::vector<std::size_t> short_segments;
  };
  template <typename ModelOf>
  PullOutcome execute_pulls(WorkerState& requester, const PullPlan& plan, Rng& rng,
                            std::size_t replicas, ModelOf model_of);

  const Task& task_;
  SegmentationScheme scheme_;
  ProtocolConfig config_;
  std::map<WorkerId, Member> members_;
  std::uint64_t round_ = 0;
  StepObserver observer_;
};

}  // namespace combo
