#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "combo/gossip.hpp"
#include "combo/netsim.hpp"
#include "combo/tasks.hpp"

namespace combo {

enum class RunMode { combo, gossip, fedavg };
enum class TaskKind { quadratic, logistic };

std::string_view to_string(RunMode mode) noexcept;
std::string_view to_string(ChurnKind kind) noexcept;
RunMode parse_run_mode(std::string_view text);
ChurnKind parse_churn_kind(std::string_view text);

struct TargetSpec {
  std::string metric = "loss";  // loss | accuracy | suboptimality
  std::optional<double> value;
};

// Everything one simulation needs. Defaults follow the reference setup:
// S=10, R=2, tau=40, alpha=0.1, batch 128, 10/100 Mbps links.
struct RunConfig {
  std::size_t workers = 30;
  std::size_t dim = 20;
  std::size_t segments = 10;
  std::size_t replicas = 2;
  std::size_t local_steps = 40;
  double learning_rate = 0.1;
  std::size_t batch_size = 128;
  TaskKind task = TaskKind::quadratic;
  QuadraticSpec quadratic;  // dim, workers and seed are taken from this struct's fields
  LogisticSpec logistic;    // features = dim - 1
  double init_scale = 0.0;  // initial parameters ~ N(0, init_scale^2), shared by all workers
  RunMode mode = RunMode::combo;
  NetConfig net;
  std::vector<ChurnEvent> churn;
  std::uint64_t seed = 1;
  std::uint64_t rounds = 50;
  TargetSpec target;
  bool record_models = false;

  // Number of task workers: the initial n plus any joiner ids.
  std::size_t task_workers() const;
};

// Throws Errc::invalid_config with a message naming the violated constraint.
void validate(const RunConfig& config);

RunConfig config_from_json(std::string_view text);
std::string config_to_json(const RunConfig& config);
RunConfig load_config(const std::string& path);

NetConfig net_config_from_json(std::string_view text);
std::string net_config_to_json(const NetConfig& config);
// Accepts either a bare network config or a run config (its "net" block, or
// the defaults when it has none).
NetConfig load_net_config(const std::string& path);

// Applies a sweep override such as ("S", "5") or ("mode", "fedavg").
// Recognised keys: S, R, n, tau, seed, mode, alpha, rounds.
RunConfig with_override(RunConfig config, std::string_view key, std::string_view value);

}  // namespace combo
