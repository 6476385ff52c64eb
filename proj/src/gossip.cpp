#include "combo/gossip.hpp"

#include <algorithm>
#include <string>

#include "combo/error.hpp"

namespace combo {

PullPlan plan_pulls(WorkerId worker, std::span<const WorkerId> alive_peers,
                    std::size_t segments, std::size_t replicas, std::uint64_t round,
                    Rng& rng) {
  if (segments == 0) {
    throw Error(Errc::invalid_argument, "a plan needs at least one segment");
  }
  if (std::find(alive_peers.begin(), alive_peers.end(), worker) != alive_peers.end()) {
    throw Error(Errc::invalid_argument, "a worker cannot pull from itself");
  }
  if (alive_peers.size() < replicas) {
    throw Error(Errc::insufficient_peers,
                std::to_string(alive_peers.size()) + " alive peers cannot supply " +
                    std::to_string(replicas) + " distinct replicas");
  }
  PullPlan plan{worker, round, {}};
  plan.requests.reserve(segments * replicas);

  std::vector<WorkerId> pool;
  std::size_t head = 0;
  auto refill = [&] {
    pool.erase(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(head));
    head = 0;
    std::vector<WorkerId> fresh(alive_peers.begin(), alive_peers.end());
    rng.shuffle(std::span<WorkerId>(fresh));
    pool.insert(pool.end(), fresh.begin(), fresh.end());
  };

  std::vector<WorkerId> used;
  for (std::size_t l = 0; l < segments; ++l) {
    used.clear();
    for (std::size_t r = 0; r < replicas; ++r) {
      auto usable = [&] {
        for (std::size_t p = head; p < pool.size(); ++p) {
          if (std::find(used.begin(), used.end(), pool[p]) == used.end()) return p;
        }
        return pool.size();
      };
      std::size_t p = usable();
      if (p == pool.size()) {
        refill();
        p = usable();
      }
      const WorkerId target = pool[p];
      if (p == head) {
        ++head;
      } else {
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(p));
      }
      used.push_back(target);
      plan.requests.push_back({worker, target, l, r, round});
    }
  }
  return plan;
}

std::vector<WorkerId> WorkerState::reachable_peers() const {
  std::vector<WorkerId> out;
  out.reserve(peers.size());
  for (const auto& [peer, offline] : peers) {
    if (!offline) out.push_back(peer);
  }
  return out;
}

std::optional<PullRequest> handle_peer_failure(WorkerState& worker,
                                               const PullRequest& failed,
                                               std::span<const WorkerId> segment_providers,
                                               Rng& rng) {
  worker.peers[failed.target] = true;
  std::vector<WorkerId> candidates;
  for (const auto& peer : worker.reachable_peers()) {
    if (peer == worker.id) continue;
    if (std::find(segment_providers.begin(), segment_providers.end(), peer) !=
        segment_providers.end()) {
      continue;
    }
    candidates.push_back(peer);
  }
  if (candidates.empty()) return std::nullopt;
  PullRequest next = failed;
  next.target = candidates[rng.below(candidates.size())];
  return next;
}

// ---------------------------------------------------------------------------

Federation::Federation(const Task& task, SegmentationScheme scheme, ProtocolConfig config,
                       ModelParams initial, std::span<const WorkerId> members)
    : task_(task), scheme_(std::move(scheme)), config_(config) {
  if (scheme_.dim() != task_.dim() || initial.dim() != task_.dim()) {
    throw Error(Errc::dimension_mismatch, "task, scheme and initial model must share dim");
  }
  if (config_.segments != scheme_.num_segments()) {
    throw Error(Errc::invalid_config, "protocol S differs from the scheme's segment count");
  }
  if (members.empty()) {
    throw Error(Errc::invalid_config, "a federation needs at least one worker");
  }
  for (WorkerId id : members) {
    if (members_.contains(id)) {
      throw Error(Errc::invalid_config, "worker " + std::to_string(raw(id)) + " listed twice");
    }
    members_.emplace(id, make_member(id, initial));
  }
  for (auto& [id, m] : members_) {
    for (WorkerId other : members) {
      if (other != id) m.state.peers.emplace(other, false);
    }
  }
}

Federation::Member Federation::make_member(WorkerId id, ModelParams model) const {
  if (raw(id) >= task_.num_workers()) {
    throw Error(Errc::invalid_config,
                "task has no data for worker " + std::to_string(raw(id)));
  }
  const auto size = task_.dataset_size(id);
  WorkerState state{id, std::move(model), size, round_, Phase::updating, {}, {}, {}};
  return Member{std::move(state), Liveness::up,
                MinibatchSampler(static_cast<std::size_t>(size),
                                 derive_seed(config_.seed, "minibatch", raw(id))),
                Rng(derive_seed(config_.seed, "plan", raw(id)))};
}

Federation::Member& Federation::member(WorkerId id) {
  auto it = members_.find(id);
  if (it == members_.end()) {
    throw Error(Errc::invalid_argument, "unknown worker " + std::to_string(raw(id)));
  }
  return it->second;
}

const Federation::Member& Federation::member(WorkerId id) const {
  auto it = members_.find(id);
  if (it == members_.end()) {
    throw Error(Errc::invalid_argument, "unknown worker " + std::to_string(raw(id)));
  }
  return it->second;
}

const WorkerState& Federation::worker(WorkerId id) const { return member(id).state; }

bool Federation::is_member(WorkerId id) const { return members_.contains(id); }

bool Federation::is_alive(WorkerId id) const {
  auto it = members_.find(id);
  return it != members_.end() && it->second.liveness == Liveness::up;
}

std::vector<WorkerId> Federation::alive() const {
  std::vector<WorkerId> out;
  for (const auto& [id, m] : members_) {
    if (m.liveness == Liveness::up) out.push_back(id);
  }
  return out;
}

WeightTable Federation::weights() const {
  WeightTable out;
  for (const auto& [id, m] : members_) out.emplace(id, m.state.dataset_size);
  return out;
}

std::uint64_t Federation::plan_draws(WorkerId id) const { return member(id).plan_rng.draws(); }

void Federation::register_contact(WorkerId from, WorkerId to) {
  member(to).state.peers[from] = false;
}

template <typename ModelOf>
Federation::PullOutcome Federation::execute_pulls(WorkerState& requester, const PullPlan& plan,
                                                  Rng& rng, std::size_t replicas,
                                                  ModelOf model_of) {
  PullOutcome out;
  std::vector<std::vector<WorkerId>> assigned(scheme_.num_segments());
  for (const auto& req : plan.requests) assigned[req.segment].push_back(req.target);
  std::vector<std::size_t> served(scheme_.num_segments(), 0);

  for (const auto& planned : plan.requests) {
    PullRequest req = planned;
    std::uint32_t failed = 0;
    while (true) {
      if (is_alive(req.target)) {
        register_contact(requester.id, req.target);
        requester.peers[req.target] = false;
        const ModelParams& source = model_of(req.target);
        const auto& range = scheme_.range(req.segment);
        const auto values = source.values().subspan(range.begin, range.size());
        out.segments.push_back({req.segment, {values.begin(), values.end()}, req.target});
        out.pulls.push_back({req.segment, req.replica, req.target, failed});
        ++served[req.segment];
        break;
      }
      out.failures.push_back(req);
      ++failed;
      auto next = handle_peer_failure(requester, req, assigned[req.segment], rng);
      if (!next) break;
      assigned[req.segment].push_back(next->target);
      req = *next;
    }
  }
  for (std::size_t l = 0; l < served.size(); ++l) {
    if (served[l] < replicas) out.short_segments.push_back(l);
  }
  requester.received = out.segments;
  requester.pending.clear();
  return out;
}

std::uint64_t Federation::begin_round() { return ++round_; }

ModelParams Federation::update_worker(WorkerId id) {
  Member& m = member(id);
  if (m.liveness != Liveness::up) {
    throw Error(Errc::invalid_argument, "worker " + std::to_string(raw(id)) + " is offline");
  }
  m.state.phase = Phase::updating;
  IterateVisitor visit;
  if (observer_) {
    visit = [this, id](std::span<const double> w) { observer_(id, w); };
  }
  return local_update(task_, id, m.state.model, config_.sgd, m.sampler, visit);
}

void Federation::finish_worker(WorkerId id, ModelParams aggregated) {
  WorkerState& st = member(id).state;
  st.model = std::move(aggregated);
  st.round = round_;
  st.phase = Phase::updating;
  st.pending.clear();
  st.received.clear();
}

RoundResult Federation::step_round() {
  const std::uint64_t t = begin_round();
  const auto live = alive();
  std::map<WorkerId, ModelParams> updated;
  for (WorkerId id : live) updated.emplace(id, update_worker(id));

  const auto table = weights();
  std::vector<ModelParams> models;
  std::vector<std::uint64_t> model_weights;
  for (const auto& [id, model] : updated) {
    models.push_back(model);
    model_weights.push_back(table.at(id));
  }
  RoundResult result{t, {}, global_average_oracle(models, model_weights), std::nullopt};

  for (WorkerId id : live) {
    Member& m = member(id);
    WorkerState& st = m.state;
    st.phase = Phase::awaiting_segments;
    const auto peers = st.reachable_peers();
    const std::size_t replicas = std::min(config_.replicas, peers.size());
    PullPlan plan{id, t, {}};
    if (replicas > 0) {
      plan = plan_pulls(id, peers, config_.segments, replicas, t, m.plan_rng);
    }
    st.pending = plan.requests;
    auto outcome = execute_pulls(st, plan, m.plan_rng, config_.replicas,
                                 [&](WorkerId j) -> const ModelParams& { return updated.at(j); });
    st.phase = Phase::aggregating;
    auto merged = aggregate_model(LocalModel{id, updated.at(id)}, outcome.segments, scheme_, table);
    result.workers.push_back({id, t, updated.at(id), std::move(merged), std::move(outcome.pulls),
                              std::move(outcome.failures), std::move(outcome.short_segments),
                              m.plan_rng.draws()});
  }
  for (const auto& w : result.workers) finish_worker(w.worker, w.aggregated);
  return result;
}

JoinResult Federation::join(WorkerId id) {
  if (members_.contains(id)) {
    throw Error(Errc::invalid_argument, "worker " + std::to_string(raw(id)) + " already joined");
  }
  // The worker list handed to a newcomer holds every registered worker that
  // has not left; crashes are discovered on contact like any other pull.
  std::vector<WorkerId> listed;
  for (const auto& [other, m] : members_) {
    if (m.liveness != Liveness::left) listed.push_back(other);
  }
  if (alive().size() < config_.replicas || listed.empty()) {
    throw Error(Errc::join_rejected,
                "federation has " + std::to_string(alive().size()) + " alive workers, R=" +
                    std::to_string(config_.replicas));
  }
  Member m = make_member(id, members_.begin()->second.state.model);
  for (WorkerId other : listed) m.state.peers.emplace(other, false);
  m.state.phase = Phase::awaiting_segments;
  const auto plan = plan_pulls(id, listed, config_.segments, config_.replicas, round_ + 1, m.plan_rng);
  m.state.pending = plan.requests;
  auto outcome = execute_pulls(m.state, plan, m.plan_rng, config_.replicas,
                               [&](WorkerId j) -> const ModelParams& { return member(j).state.model; });
  std::vector<bool> covered(scheme_.num_segments(), false);
  for (const auto& p : outcome.pulls) covered[p.segment] = true;
  for (std::size_t l = 0; l < covered.size(); ++l) {
    if (!covered[l]) {
      throw Error(Errc::join_rejected, "no reachable provider for segment " + std::to_string(l));
    }
  }
  auto table = weights();
  table.emplace(id, m.state.dataset_size);
  m.state.phase = Phase::aggregating;
  auto model = aggregate_model(std::nullopt, outcome.segments, scheme_, table);
  m.state.model = model;
  m.state.round = round_;
  m.state.phase = Phase::updating;
  m.state.received.clear();
  members_.emplace(id, std::move(m));
  return {id, round_ + 1, std::move(outcome.pulls), std::move(outcome.failures), std::move(model)};
}

void Federation::admit(WorkerId id, ModelParams model) {
  if (members_.contains(id)) {
    throw Error(Errc::invalid_argument, "worker " + std::to_string(raw(id)) + " already joined");
  }
  Member m = make_member(id, std::move(model));
  for (auto& [other, om] : members_) {
    if (om.liveness == Liveness::left) continue;
    m.state.peers.emplace(other, false);
    om.state.peers[id] = false;
  }
  members_.emplace(id, std::move(m));
}

void Federation::leave(WorkerId id) {
  Member& m = member(id);
  if (m.liveness == Liveness::left) {
    throw Error(Errc::invalid_argument, "worker " + std::to_string(raw(id)) + " already left");
  }
  m.liveness = Liveness::left;
  m.state.phase = Phase::offline;
  for (auto& [other, om] : members_) om.state.peers.erase(id);
}

void Federation::crash(WorkerId id) {
  Member& m = member(id);
  if (m.liveness != Liveness::up) {
    throw Error(Errc::invalid_argument, "worker " + std::to_string(raw(id)) + " is not running");
  }
  m.liveness = Liveness::crashed;
  m.state.phase = Phase::offline;
}

void Federation::recover(WorkerId id) {
  Member& m = member(id);
  if (m.liveness != Liveness::crashed) {
    throw Error(Errc::invalid_argument, "worker " + std::to_string(raw(id)) + " has not crashed");
  }
  m.liveness = Liveness::up;
  m.state.phase = Phase::updating;
  m.state.round = round_;
}

void Federation::apply(const ChurnEvent& event) {
  switch (event.kind) {
    case ChurnKind::join: join(event.worker); break;
    case ChurnKind::graceful_leave: leave(event.worker); break;
    case ChurnKind::crash: crash(event.worker); break;
    case ChurnKind::recover: recover(event.worker); break;
  }
}

}  // namespace combo
