#include "combo/baselines.hpp"

#include <string>

#include "combo/aggregation.hpp"
#include "combo/error.hpp"

namespace combo {

RoundResult fedavg_round(Federation& federation, WorkerId server) {
  if (!federation.is_alive(server)) {
    throw Error(Errc::invalid_argument,
                "fedavg server " + std::to_string(raw(server)) + " is not alive");
  }
  const std::vector<WorkerId> alive = federation.alive();
  const WeightTable weights = federation.weights();
  RoundResult result{federation.begin_round(), {}, ModelParams::zeros(1), server};

  std::vector<ModelParams> updated;
  std::vector<std::uint64_t> w;
  updated.reserve(alive.size());
  for (WorkerId id : alive) {
    updated.push_back(federation.update_worker(id));
    w.push_back(weights.at(id));
  }
  result.oracle = global_average_oracle(updated, w);
  for (std::size_t k = 0; k < alive.size(); ++k) {
    federation.finish_worker(alive[k], result.oracle);
    result.workers.push_back({alive[k], result.round, updated[k], result.oracle, {}, {}, {},
                              federation.plan_draws(alive[k])});
  }
  return result;
}

std::optional<WorkerId> pick_server(std::span<const WorkerId> alive, Rng& rng) {
  if (alive.empty()) return std::nullopt;
  return alive[rng.below(alive.size())];
}

RunConfig make_naive_gossip_config(RunConfig config) {
  config.segments = 1;
  config.mode = RunMode::gossip;
  return config;
}

}  // namespace combo
