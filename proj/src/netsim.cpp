#include "combo/netsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>

#include "combo/error.hpp"

namespace combo {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kBitsPerByte = 8.0;
// A flow counts as finished once less than this fraction of it remains.
constexpr double kCompletionSlack = 1e-10;
// Fair shares closer than this (relative) freeze in the same filling step.
constexpr double kShareTie = 1e-12;

bool is_set(double t) { return !std::isnan(t); }
constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

// Progressive filling over node-indexed endpoints. Egress of node k is
// resource 2k, ingress is 2k + 1.
void fill_rates(std::span<const std::uint32_t> src, std::span<const std::uint32_t> dst,
                std::size_t node_count, const NetConfig& config, std::span<double> rates) {
  const std::size_t flows = src.size();
  const std::size_t resources = 2 * node_count;
  std::vector<double> frozen_sum(resources, 0.0);
  std::vector<std::size_t> unfrozen(resources, 0);
  std::vector<std::vector<std::size_t>> members(resources);
  for (std::size_t f = 0; f < flows; ++f) {
    const std::size_t e = 2 * src[f];
    const std::size_t i = 2 * dst[f] + 1;
    ++unfrozen[e];
    ++unfrozen[i];
    members[e].push_back(f);
    members[i].push_back(f);
  }
  std::vector<bool> frozen(flows, false);
  std::size_t remaining = flows;
  std::vector<double> share(resources, kInf);

  auto freeze = [&](std::size_t f, double rate) {
    frozen[f] = true;
    rates[f] = rate;
    --remaining;
    for (std::size_t r : {2 * static_cast<std::size_t>(src[f]), 2 * static_cast<std::size_t>(dst[f]) + 1}) {
      frozen_sum[r] += rate;
      --unfrozen[r];
    }
  };

  while (remaining > 0) {
    double level = config.per_pair_bw;
    for (std::size_t r = 0; r < resources; ++r) {
      if (unfrozen[r] == 0) {
        share[r] = kInf;
        continue;
      }
      const double slack = std::max(0.0, config.node_capacity - frozen_sum[r]);
      share[r] = slack / static_cast<double>(unfrozen[r]);
      level = std::min(level, share[r]);
    }
    if (level >= config.per_pair_bw) {
      for (std::size_t f = 0; f < flows; ++f) {
        if (!frozen[f]) freeze(f, config.per_pair_bw);
      }
      break;
    }
    const double cut = level * (1.0 + kShareTie);
    for (std::size_t r = 0; r < resources; ++r) {
      if (share[r] > cut) continue;
      for (std::size_t f : members[r]) {
        if (!frozen[f]) freeze(f, level);
      }
    }
  }
}

class FluidNetwork {
 public:
  struct Completion {
    std::size_t id;
    double delivered;
  };

  explicit FluidNetwork(const NetConfig& config) : config_(config) {}

  double now() const noexcept { return now_; }
  bool idle() const noexcept { return active_.empty(); }

  void add(std::size_t id, WorkerId src, WorkerId dst, double bytes) {
    active_.push_back({id, raw(src), raw(dst), bytes, bytes, 0.0, 0.0});
    node_count_ = std::max<std::size_t>(node_count_, std::max(raw(src), raw(dst)) + 1);
    dirty_ = true;
  }

  double next_completion() {
    if (active_.empty()) return kInf;
    reallocate();
    double best = kInf;
    for (const auto& a : active_) {
      if (a.rate > 0.0) best = std::min(best, now_ + a.remaining * kBitsPerByte / a.rate);
    }
    return best;
  }

  // Moves the clock to t (never past the next completion) and returns the
  // flows that finished, ordered by id.
  std::vector<Completion> advance(double t) {
    std::vector<Completion> done;
    if (t <= now_) {
      t = now_;
    }
    if (!active_.empty()) {
      reallocate();
      const double dt = t - now_;
      for (auto& a : active_) {
        const double moved = std::min(a.remaining, a.rate * dt / kBitsPerByte);
        a.remaining -= moved;
        a.delivered += moved;
      }
      std::vector<Active> keep;
      keep.reserve(active_.size());
      for (auto& a : active_) {
        if (a.remaining <= kCompletionSlack * a.size) {
          done.push_back({a.id, a.delivered});
        } else {
          keep.push_back(a);
        }
      }
      if (!done.empty()) {
        active_.swap(keep);
        dirty_ = true;
      }
    }
    now_ = t;
    std::sort(done.begin(), done.end(),
              [](const Completion& a, const Completion& b) { return a.id < b.id; });
    return done;
  }

 private:
  struct Active {
    std::size_t id;
    std::uint32_t src;
    std::uint32_t dst;
    double size;
    double remaining;
    double delivered;
    double rate;
  };

  void reallocate() {
    if (!dirty_) return;
    std::vector<std::uint32_t> src(active_.size());
    std::vector<std::uint32_t> dst(active_.size());
    std::vector<double> rates(active_.size());
    for (std::size_t k = 0; k < active_.size(); ++k) {
      src[k] = active_[k].src;
      dst[k] = active_[k].dst;
    }
    fill_rates(src, dst, node_count_, config_, rates);
    for (std::size_t k = 0; k < active_.size(); ++k) active_[k].rate = rates[k];
    dirty_ = false;
  }

  const NetConfig& config_;
  std::vector<Active> active_;
  std::size_t node_count_ = 0;
  double now_ = 0.0;
  bool dirty_ = false;
};

struct Timer {
  double time;
  std::uint64_t seq;
  int kind;
  std::size_t index;

  bool operator>(const Timer& o) const {
    if (time != o.time) return time > o.time;
    return seq > o.seq;
  }
};

using TimerQueue = std::priority_queue<Timer, std::vector<Timer>, std::greater<>>;

// ---------------------------------------------------------------------------
// Trace replay shared by the gossip and FedAvg drivers.

enum class Mode { gossip, fedavg };

class TraceReplay {
 public:
  TraceReplay(const NetTrace& trace, const NetConfig& config, Mode mode,
              std::optional<WorkerId> default_server)
      : trace_(trace), config_(config), mode_(mode), net_(config) {
    config_.validate();
    build(default_server);
  }

  Timeline run() {
    set_boundary(0, 0.0);
    while (true) {
      const double t_timer = timers_.empty() ? kInf : timers_.top().time;
      // Timers due now need no rate update; batching them saves one
      // reallocation per simultaneous release.
      if (t_timer <= net_.now()) {
        const Timer timer = timers_.top();
        timers_.pop();
        on_timer(timer);
        continue;
      }
      const double t_net = net_.next_completion();
      if (t_timer == kInf && t_net == kInf) break;
      if (t_timer <= t_net) {
        const Timer timer = timers_.top();
        timers_.pop();
        for (const auto& c : net_.advance(timer.time)) on_complete(c.id, c.delivered);
        on_timer(timer);
      } else {
        for (const auto& c : net_.advance(t_net)) on_complete(c.id, c.delivered);
      }
    }
    return finish();
  }

 private:
  enum TimerKind { kComputeEnd = 0, kRelease = 1 };
  enum class FlowKind { pull, join, upload, download };

  struct Node {
    WorkerId worker{};
    std::size_t round = 0;
    std::uint64_t steps = 0;
    double start = kUnset;
    double update_end = kUnset;
    double aggregation = kUnset;
    std::size_t pending = 0;
    double last_completion = 0.0;
    double bytes_received = 0.0;
    bool late_start = false;
    bool joining = false;
    std::size_t join_pending = 0;
    double join_done = 0.0;
    std::vector<std::size_t> requested;    // pulls or the download this node waits for
    std::vector<std::size_t> served;       // pulls or the upload tied to this node's update
    std::vector<std::size_t> join_flows;   // this node's join pulls
    std::vector<std::size_t> join_served;  // join pulls this node provides
  };

  struct FlowState {
    FlowKind kind;
    std::size_t requester;  // receiving node
    std::size_t provider;   // sending node
    double bytes;
    std::uint32_t failed;
    bool released = false;
  };

  [[noreturn]] void inconsistent(const std::string& what) const {
    throw Error(Errc::inconsistent_trace, what);
  }

  std::size_t node_at(std::size_t k, WorkerId w) const {
    auto it = index_[k].find(w);
    return it == index_[k].end() ? kNone : it->second;
  }

  void build(std::optional<WorkerId> default_server) {
    const auto& rounds = trace_.rounds;
    index_.resize(rounds.size());
    boundary_.assign(rounds.size() + 1, kUnset);
    servers_.assign(rounds.size(), kNone);
    for (std::size_t k = 0; k < rounds.size(); ++k) {
      if (rounds[k].workers.empty()) {
        inconsistent("round " + std::to_string(rounds[k].round) + " has no participants");
      }
      for (const auto& w : rounds[k].workers) {
        if (!index_[k].emplace(w.worker, nodes_.size()).second) {
          inconsistent("worker " + std::to_string(raw(w.worker)) + " repeats in round " +
                       std::to_string(rounds[k].round));
        }
        Node n;
        n.worker = w.worker;
        n.round = k;
        n.steps = w.steps;
        nodes_.push_back(std::move(n));
      }
    }
    for (std::size_t k = 0; k < rounds.size(); ++k) {
      const auto& round = rounds[k];
      for (const auto& j : round.joins) {
        const std::size_t jn = node_at(k, j.worker);
        if (jn == kNone) {
          inconsistent("joiner " + std::to_string(raw(j.worker)) + " missing from round " +
                       std::to_string(round.round));
        }
        nodes_[jn].joining = true;
        for (const auto& p : j.pulls) {
          const std::size_t pn = provider_node(k, p, j.worker);
          const std::size_t f = add_flow(FlowKind::join, jn, pn, p);
          nodes_[jn].join_flows.push_back(f);
          nodes_[pn].join_served.push_back(f);
          ++nodes_[jn].join_pending;
        }
      }
      for (const auto& w : round.workers) {
        const std::size_t n = node_at(k, w.worker);
        if (!nodes_[n].joining && k > 0 && node_at(k - 1, w.worker) == kNone) {
          nodes_[n].late_start = true;
        }
        if (mode_ == Mode::gossip) {
          for (const auto& p : w.pulls) {
            const std::size_t pn = provider_node(k, p, w.worker);
            const std::size_t f = add_flow(FlowKind::pull, n, pn, p);
            nodes_[n].requested.push_back(f);
            nodes_[pn].served.push_back(f);
            ++nodes_[n].pending;
          }
        }
      }
      if (mode_ == Mode::fedavg) {
        const auto server = round.server ? round.server : default_server;
        if (!server) inconsistent("FedAvg round " + std::to_string(round.round) + " has no server");
        const std::size_t s = node_at(k, *server);
        if (s == kNone) {
          inconsistent("server " + std::to_string(raw(*server)) + " is not in round " +
                       std::to_string(round.round));
        }
        servers_[k] = s;
        for (const auto& w : round.workers) {
          if (w.worker == *server) continue;
          const std::size_t n = node_at(k, w.worker);
          const PullDemand up{w.worker, trace_.model_bytes, 0};
          const std::size_t fu = add_flow(FlowKind::upload, s, n, up);
          nodes_[n].served.push_back(fu);
          ++nodes_[s].pending;
          const PullDemand down{*server, trace_.model_bytes, 0};
          const std::size_t fd = add_flow(FlowKind::download, n, s, down);
          nodes_[n].requested.push_back(fd);
          nodes_[s].served.push_back(fd);
        }
      }
    }
  }

  std::size_t provider_node(std::size_t k, const PullDemand& p, WorkerId requester) const {
    if (p.provider == requester) {
      inconsistent("worker " + std::to_string(raw(requester)) + " pulls from itself");
    }
    if (!(p.bytes >= 0.0) || !std::isfinite(p.bytes)) {
      inconsistent("negative or non-finite flow size");
    }
    const std::size_t pn = node_at(k, p.provider);
    if (pn == kNone) {
      inconsistent("provider " + std::to_string(raw(p.provider)) + " is not in round " +
                   std::to_string(trace_.rounds[k].round));
    }
    return pn;
  }

  std::size_t add_flow(FlowKind kind, std::size_t requester, std::size_t provider,
                       const PullDemand& p) {
    flows_.push_back({kind, requester, provider, p.bytes, p.failed_attempts});
    total_bytes_ += p.bytes;
    return flows_.size() - 1;
  }

  void schedule(double time, TimerKind kind, std::size_t index) {
    timers_.push({std::max(time, net_.now()), seq_++, kind, index});
  }

  void start_node(std::size_t n, double t) {
    Node& node = nodes_[n];
    if (is_set(node.start)) return;
    node.start = t;
    schedule(t + static_cast<double>(node.steps) * config_.step_time(node.worker), kComputeEnd, n);
    if (mode_ == Mode::gossip) {
      for (std::size_t f : node.requested) try_release(f);
    }
    for (std::size_t f : node.join_served) try_release(f);
  }

  void try_release(std::size_t f) {
    FlowState& flow = flows_[f];
    if (flow.released) return;
    const Node& req = nodes_[flow.requester];
    const Node& prov = nodes_[flow.provider];
    const double delay = static_cast<double>(flow.failed) * config_.failure_detection_delay;
    double release = kUnset;
    switch (flow.kind) {
      case FlowKind::pull:
        if (is_set(req.start) && is_set(prov.update_end)) {
          release = std::max(prov.update_end, req.start + delay);
        }
        break;
      case FlowKind::join: {
        const double b = boundary_[req.round];
        if (is_set(b) && is_set(prov.start)) release = std::max(b, prov.start) + delay;
        break;
      }
      case FlowKind::upload:
        if (is_set(prov.update_end)) release = prov.update_end;
        break;
      case FlowKind::download:
        if (is_set(prov.aggregation)) release = prov.aggregation;
        break;
    }
    if (!is_set(release)) return;
    flow.released = true;
    schedule(release, kRelease, f);
  }

  void on_timer(const Timer& timer) {
    if (timer.kind == kComputeEnd) {
      Node& node = nodes_[timer.index];
      node.update_end = timer.time;
      for (std::size_t f : node.served) {
        if (flows_[f].kind != FlowKind::download) try_release(f);
      }
      if (mode_ == Mode::gossip) {
        check_aggregate(timer.index);
      } else if (servers_[node.round] == timer.index) {
        check_server(timer.index);
      }
      return;
    }
    const FlowState& flow = flows_[timer.index];
    if (flow.bytes <= 0.0) {
      on_complete(timer.index, 0.0);
    } else {
      net_.add(timer.index, nodes_[flow.provider].worker, nodes_[flow.requester].worker, flow.bytes);
    }
  }

  void on_complete(std::size_t f, double delivered) {
    const double t = net_.now();
    FlowState& flow = flows_[f];
    Node& req = nodes_[flow.requester];
    static_cast<void>(delivered);
    switch (flow.kind) {
      case FlowKind::pull:
        req.bytes_received += flow.bytes;
        req.last_completion = std::max(req.last_completion, t);
        --req.pending;
        check_aggregate(flow.requester);
        break;
      case FlowKind::join:
        req.bytes_received += flow.bytes;
        req.join_done = std::max(req.join_done, t);
        if (--req.join_pending == 0) {
          start_node(flow.requester, std::max(boundary_[req.round], req.join_done));
        }
        break;
      case FlowKind::upload:
        req.bytes_received += flow.bytes;
        req.last_completion = std::max(req.last_completion, t);
        --req.pending;
        check_server(flow.requester);
        break;
      case FlowKind::download:
        req.bytes_received += flow.bytes;
        req.aggregation = t;
        next_round(flow.requester, t);
        break;
    }
  }

  void check_aggregate(std::size_t n) {
    Node& node = nodes_[n];
    if (!is_set(node.update_end) || node.pending > 0 || is_set(node.aggregation)) return;
    node.aggregation = std::max(node.update_end, node.last_completion);
    next_round(n, node.aggregation);
  }

  void check_server(std::size_t s) {
    Node& node = nodes_[s];
    if (!is_set(node.update_end) || node.pending > 0 || is_set(node.aggregation)) return;
    node.aggregation = std::max(node.update_end, node.last_completion);
    for (std::size_t f : node.served) {
      if (flows_[f].kind == FlowKind::download) try_release(f);
    }
    next_round(s, node.aggregation);
  }

  void next_round(std::size_t n, double t) {
    const std::size_t k = nodes_[n].round + 1;
    if (k > trace_.rounds.size()) return;
    if (!is_set(boundary_[k])) set_boundary(k, t);
    if (k == trace_.rounds.size()) return;
    const std::size_t next = node_at(k, nodes_[n].worker);
    if (next != kNone && !nodes_[next].late_start && !nodes_[next].joining) {
      start_node(next, t);
    }
  }

  // The first worker to enter round k fixes the boundary at which workers
  // returning after an absence, and newcomers, enter that round.
  void set_boundary(std::size_t k, double t) {
    boundary_[k] = t;
    if (k >= trace_.rounds.size()) return;
    for (const auto& [worker, n] : index_[k]) {
      Node& node = nodes_[n];
      if (node.joining) {
        if (node.join_flows.empty()) {
          start_node(n, t);
        } else {
          for (std::size_t f : node.join_flows) try_release(f);
        }
      } else if (k == 0 || node.late_start) {
        start_node(n, t);
      }
    }
  }

  Timeline finish() {
    Timeline out;
    out.total_bytes = total_bytes_;
    out.round_end.assign(trace_.rounds.size(), 0.0);
    out.entries.reserve(nodes_.size());
    for (std::size_t k = 0; k < trace_.rounds.size(); ++k) {
      for (const auto& [worker, n] : index_[k]) {
        const Node& node = nodes_[n];
        if (!is_set(node.aggregation)) {
          inconsistent("worker " + std::to_string(raw(worker)) + " never finished round " +
                       std::to_string(trace_.rounds[k].round));
        }
        out.entries.push_back({trace_.rounds[k].round, worker, node.start, node.update_end,
                               node.aggregation, node.bytes_received});
        out.round_end[k] = std::max(out.round_end[k], node.aggregation);
      }
    }
    return out;
  }

  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  const NetTrace& trace_;
  const NetConfig& config_;
  Mode mode_;
  FluidNetwork net_;
  TimerQueue timers_;
  std::uint64_t seq_ = 0;
  std::vector<Node> nodes_;
  std::vector<FlowState> flows_;
  std::vector<std::map<WorkerId, std::size_t>> index_;
  std::vector<double> boundary_;
  std::vector<std::size_t> servers_;
  double total_bytes_ = 0.0;
};

}  // namespace

double NetConfig::step_time(WorkerId worker) const {
  auto it = compute_multiplier.find(worker);
  return compute_time_per_step * (it == compute_multiplier.end() ? 1.0 : it->second);
}

void NetConfig::validate() const {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (!positive(per_pair_bw)) throw Error(Errc::invalid_config, "per_pair_bw must be positive");
  if (!positive(node_capacity)) throw Error(Errc::invalid_config, "node_capacity must be positive");
  if (bytes_per_parameter == 0) throw Error(Errc::invalid_config, "bytes_per_parameter must be positive");
  if (model_bytes && !(*model_bytes >= 0.0 && std::isfinite(*model_bytes))) {
    throw Error(Errc::invalid_config, "model_bytes must be non-negative");
  }
  if (!positive(compute_time_per_step)) {
    throw Error(Errc::invalid_config, "compute_time_per_step must be positive");
  }
  for (const auto& [worker, m] : compute_multiplier) {
    if (!positive(m)) {
      throw Error(Errc::invalid_config,
                  "compute multiplier of worker " + std::to_string(raw(worker)) + " must be positive");
    }
  }
  if (!(failure_detection_delay >= 0.0) || !std::isfinite(failure_detection_delay)) {
    throw Error(Errc::invalid_config, "failure_detection_delay must be >= 0");
  }
}

std::vector<double> allocate_rates(std::span<const FlowEndpoints> flows,
                                   const NetConfig& config) {
  std::vector<std::uint32_t> src(flows.size());
  std::vector<std::uint32_t> dst(flows.size());
  std::size_t nodes = 0;
  for (std::size_t f = 0; f < flows.size(); ++f) {
    src[f] = raw(flows[f].src);
    dst[f] = raw(flows[f].dst);
    nodes = std::max<std::size_t>(nodes, std::max(src[f], dst[f]) + 1);
  }
  std::vector<double> rates(flows.size(), 0.0);
  fill_rates(src, dst, nodes, config, rates);
  return rates;
}

std::vector<Flow> simulate_flows(std::vector<Flow> flows, const NetConfig& config) {
  config.validate();
  std::vector<std::size_t> order(flows.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!(flows[k].size >= 0.0) || !(flows[k].release_time >= 0.0)) {
      throw Error(Errc::invalid_argument, "flow sizes and release times must be >= 0");
    }
    order[k] = k;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return flows[a].release_time < flows[b].release_time;
  });
  FluidNetwork net(config);
  std::size_t next = 0;
  auto finish = [&](std::size_t id, double delivered) {
    flows[id].completion_time = net.now();
    flows[id].delivered = delivered;
  };
  while (next < order.size() || !net.idle()) {
    const double t_release = next < order.size() ? flows[order[next]].release_time : kInf;
    const double t_done = net.next_completion();
    if (t_release <= t_done) {
      for (const auto& c : net.advance(t_release)) finish(c.id, c.delivered);
      const std::size_t id = order[next++];
      if (flows[id].size <= 0.0) {
        finish(id, 0.0);
      } else {
        net.add(id, flows[id].src, flows[id].dst, flows[id].size);
      }
    } else {
      for (const auto& c : net.advance(t_done)) finish(c.id, c.delivered);
    }
  }
  return flows;
}

const WorkerTiming* Timeline::find(std::uint64_t round, WorkerId worker) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), std::pair{round, worker},
                             [](const WorkerTiming& e, const std::pair<std::uint64_t, WorkerId>& key) {
                               return std::pair{e.round, e.worker} < key;
                             });
  if (it == entries.end() || it->round != round || it->worker != worker) return nullptr;
  return &*it;
}

double Timeline::mean_sync_time() const {
  if (entries.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& e : entries) acc += e.sync_time();
  return acc / static_cast<double>(entries.size());
}

Timeline simulate(const NetTrace& trace, const NetConfig& config) {
  return TraceReplay(trace, config, Mode::gossip, std::nullopt).run();
}

Timeline fedavg_timing(const NetTrace& trace, std::optional<WorkerId> server,
                       const NetConfig& config) {
  return TraceReplay(trace, config, Mode::fedavg, server).run();
}

}  // namespace combo
