#include <algorithm>
#include <cmath>

#include "combo/error.hpp"
#include "combo/netsim.hpp"
#include "combo/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace combo;

namespace {

constexpr double kMB10 = 10e6;  // bytes

FlowEndpoints link(std::uint32_t s, std::uint32_t d) { return {worker_id(s), worker_id(d)}; }

std::vector<FlowEndpoints> random_flow_set(Rng& rng) {
  const std::uint32_t nodes = 2 + static_cast<std::uint32_t>(rng.below(14));
  const std::size_t count = 1 + rng.below(60);
  std::vector<FlowEndpoints> flows;
  for (std::size_t k = 0; k < count; ++k) {
    const auto s = static_cast<std::uint32_t>(rng.below(nodes));
    auto d = static_cast<std::uint32_t>(rng.below(nodes - 1));
    if (d >= s) ++d;
    flows.push_back(link(s, d));
  }
  return flows;
}

// Checks the max-min definition directly: feasible, and every flow is held
// by its pair cap or by a saturated resource on which it has the top rate.
void check_max_min(const std::vector<FlowEndpoints>& flows, const std::vector<double>& rates,
                   const NetConfig& cfg) {
  const double eps = 1e-9;
  std::map<std::pair<int, WorkerId>, double> load, top;
  for (std::size_t f = 0; f < flows.size(); ++f) {
    REQUIRE(rates[f] > 0);
    REQUIRE(rates[f] <= cfg.per_pair_bw * (1 + eps));
    for (auto key : {std::make_pair(0, flows[f].src), std::make_pair(1, flows[f].dst)}) {
      load[key] += rates[f];
      top[key] = std::max(top[key], rates[f]);
    }
  }
  for (const auto& [key, l] : load) REQUIRE(l <= cfg.node_capacity * (1 + eps));
  for (std::size_t f = 0; f < flows.size(); ++f) {
    bool held = rates[f] >= cfg.per_pair_bw * (1 - eps);
    for (auto key : {std::make_pair(0, flows[f].src), std::make_pair(1, flows[f].dst)}) {
      held = held || (load[key] >= cfg.node_capacity * (1 - eps) && rates[f] >= top[key] * (1 - eps));
    }
    REQUIRE(held);
  }
}

// n workers; worker i pulls segment l from worker i+1+l (mod n), R = 1.
NetTrace ring_trace(std::uint32_t n, std::size_t s, double model_bytes, std::size_t rounds,
                    std::uint64_t steps = 40) {
  NetTrace tr;
  tr.model_bytes = model_bytes;
  for (std::size_t t = 1; t <= rounds; ++t) {
    RoundDemand rd{t, {}, {}, std::nullopt};
    for (std::uint32_t i = 0; i < n; ++i) {
      WorkerDemand w{worker_id(i), steps, {}};
      for (std::size_t l = 0; l < s; ++l) {
        w.pulls.push_back({worker_id((i + 1 + static_cast<std::uint32_t>(l)) % n), model_bytes / static_cast<double>(s), 0});
      }
      rd.workers.push_back(std::move(w));
    }
    tr.rounds.push_back(std::move(rd));
  }
  return tr;
}

NetTrace star_trace(std::uint32_t n, double model_bytes, std::size_t rounds, std::uint32_t server) {
  NetTrace tr;
  tr.model_bytes = model_bytes;
  for (std::size_t t = 1; t <= rounds; ++t) {
    RoundDemand rd{t, {}, {}, worker_id(server)};
    for (std::uint32_t i = 0; i < n; ++i) rd.workers.push_back({worker_id(i), 40, {}});
    tr.rounds.push_back(std::move(rd));
  }
  return tr;
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return Errc::invalid_argument;
}

}  // namespace

TEST_SUITE("netsim") {
  TEST_CASE("allocate_rates examples") {
    const NetConfig cfg;
    const std::vector<FlowEndpoints> one{link(0, 1)};
    CHECK(allocate_rates(one, cfg)[0] == 10e6);

    std::vector<FlowEndpoints> ten, twenty;
    for (std::uint32_t s = 1; s <= 10; ++s) ten.push_back(link(s, 0));
    for (std::uint32_t s = 1; s <= 20; ++s) twenty.push_back(link(s, 0));
    const auto r10 = allocate_rates(ten, cfg);
    double sum = 0;
    for (double r : r10) {
      CHECK(r == doctest::Approx(10e6).epsilon(1e-12));
      sum += r;
    }
    CHECK(sum == doctest::Approx(100e6).epsilon(1e-12));
    for (double r : allocate_rates(twenty, cfg)) CHECK(r == doctest::Approx(5e6).epsilon(1e-12));
  }

  TEST_CASE("property: allocation matches the exact progressive-filling oracle") {
    Rng rng(9001);
    NetConfig cfg;
    double worst = 0;
    for (int trial = 0; trial < 500; ++trial) {
      const auto flows = random_flow_set(rng);
      // Vary the caps so the pair cap and node budgets both bind in the set.
      cfg.per_pair_bw = 1e6 * static_cast<double>(1 + rng.below(20));
      cfg.node_capacity = 1e7 * static_cast<double>(1 + rng.below(10));
      const auto rates = allocate_rates(flows, cfg);
      std::vector<oracle::Link> links;
      for (const auto& f : flows) links.push_back({raw(f.src), raw(f.dst)});
      const auto exact = oracle::max_min(links, static_cast<std::int64_t>(cfg.per_pair_bw),
                                         static_cast<std::int64_t>(cfg.node_capacity));
      for (std::size_t f = 0; f < flows.size(); ++f) {
        worst = std::max(worst, oracle::rel_err(rates[f], exact[f].convert_to<double>()));
      }
      check_max_min(flows, rates, cfg);
    }
    CHECK(worst <= 1e-12);
  }

  TEST_CASE("simulate_flows: idle 10 MB transfer takes 8 s") {
    const NetConfig cfg;
    const auto out = simulate_flows({{worker_id(0), worker_id(1), kMB10, 0.0}}, cfg);
    CHECK(out[0].completion_time == doctest::Approx(8.0).epsilon(1e-12));
    const auto later = simulate_flows({{worker_id(0), worker_id(1), kMB10, 2.5}}, cfg);
    CHECK(later[0].completion_time == doctest::Approx(10.5).epsilon(1e-12));
  }

  TEST_CASE("property: volume conservation and causality on random flow schedules") {
    Rng rng(77);
    const NetConfig cfg;
    for (int trial = 0; trial < 200; ++trial) {
      const auto ends = random_flow_set(rng);
      std::vector<Flow> flows;
      for (const auto& e : ends) {
        flows.push_back({e.src, e.dst, 1e3 + 1e6 * rng.uniform(), 2.0 * rng.uniform()});
      }
      const auto out = simulate_flows(flows, cfg);
      for (const auto& f : out) {
        REQUIRE(f.completion_time >= f.release_time);
        REQUIRE(oracle::rel_err(f.delivered, f.size) <= 1e-9);
        // Never faster than the pair cap allows.
        REQUIRE(f.completion_time - f.release_time >= f.size * 8 / cfg.per_pair_bw * (1 - 1e-12));
      }
    }
  }

  TEST_CASE("property: on one shared bottleneck, added flows never speed others up") {
    Rng rng(5150);
    const NetConfig cfg;
    for (int trial = 0; trial < 200; ++trial) {
      // Star into node 0 from distinct senders, one shared ingress budget.
      const std::size_t k = 1 + rng.below(25);
      std::vector<Flow> base;
      for (std::size_t j = 0; j < k; ++j) {
        base.push_back({worker_id(static_cast<std::uint32_t>(j + 1)), worker_id(0),
                        1e5 + 1e6 * rng.uniform(), rng.uniform()});
      }
      const auto before = simulate_flows(base, cfg);
      auto more = base;
      more.push_back({worker_id(static_cast<std::uint32_t>(k + 1)), worker_id(0), 1e5 + 1e6 * rng.uniform(),
                      rng.uniform()});
      const auto after = simulate_flows(more, cfg);
      for (std::size_t j = 0; j < k; ++j) {
        REQUIRE(after[j].completion_time >= before[j].completion_time * (1 - 1e-12));
      }
    }
  }

  TEST_CASE("max-min is not monotone across bottlenecks in general") {
    // a->x and a->y share a's egress; b->y shares y's ingress with a->y.
    // A third flow out of a slows a->y, which frees ingress at y for b->y.
    NetConfig cfg;
    cfg.per_pair_bw = 1e9;
    const std::vector<FlowEndpoints> base{link(0, 2), link(0, 3), link(1, 3)};
    auto more = base;
    more.push_back(link(0, 4));
    const double b_before = allocate_rates(base, cfg)[2];
    const double b_after = allocate_rates(more, cfg)[2];
    CHECK(b_before == doctest::Approx(50e6));
    CHECK(b_after == doctest::Approx(200e6 / 3));
  }

  TEST_CASE("simulate: compute only") {
    NetTrace tr;
    tr.rounds.push_back({1, {{worker_id(0), 40, {}}}, {}, std::nullopt});
    tr.rounds.push_back({2, {{worker_id(0), 40, {}}}, {}, std::nullopt});
    const auto tl = simulate(tr, NetConfig{});
    REQUIRE(tl.entries.size() == 2);
    CHECK(tl.entries[0].aggregation == doctest::Approx(0.4));
    CHECK(tl.entries[0].sync_time() == 0.0);
    CHECK(tl.entries[1].update_start == tl.entries[0].aggregation);
    CHECK(tl.round_end[1] == doctest::Approx(0.8));
  }

  TEST_CASE("property: sync time falls with S until the nodes saturate, then stays flat") {
    // Balanced load: worker i pulls its S x R segments from i+1, ..., i+S*R,
    // so every node sends and receives the same S x R flows.
    const NetConfig cfg;
    const std::uint32_t n = 30;
    const std::size_t r = 2;
    auto sync = [&](std::size_t s) {
      NetTrace tr;
      tr.model_bytes = kMB10;
      for (std::size_t t = 1; t <= 3; ++t) {
        RoundDemand rd{t, {}, {}, std::nullopt};
        for (std::uint32_t i = 0; i < n; ++i) {
          WorkerDemand w{worker_id(i), 40, {}};
          for (std::size_t k = 1; k <= s * r; ++k) {
            w.pulls.push_back({worker_id((i + static_cast<std::uint32_t>(k)) % n), kMB10 / static_cast<double>(s), 0});
          }
          rd.workers.push_back(std::move(w));
        }
        tr.rounds.push_back(std::move(rd));
      }
      return simulate(tr, cfg).mean_sync_time();
    };
    // Saturation starts once S x R flows at the pair cap fill the node budget.
    const auto knee = static_cast<std::size_t>(std::ceil(cfg.node_capacity / (r * cfg.per_pair_bw)));
    CHECK(knee == 5);
    double prev = sync(1);
    CHECK(prev == doctest::Approx(8.0));
    for (std::size_t s = 2; s <= knee; ++s) {
      const double now = sync(s);
      CHECK(now < prev);
      prev = now;
    }
    const double flat = sync(knee);
    CHECK(flat == doctest::Approx(2 * kMB10 * 8 / cfg.node_capacity));
    for (std::size_t s = knee + 1; s <= 14; ++s) CHECK(std::abs(sync(s) - flat) <= 0.01 * flat);
  }

  TEST_CASE("simulate: two segments halve the unsaturated sync time") {
    const NetConfig cfg;
    const auto one = simulate(ring_trace(5, 1, kMB10, 3), cfg);
    const auto two = simulate(ring_trace(5, 2, kMB10, 3), cfg);
    CHECK(one.mean_sync_time() == doctest::Approx(8.0).epsilon(1e-9));
    CHECK(two.mean_sync_time() == doctest::Approx(4.0).epsilon(1e-9));
  }

  TEST_CASE("simulate: zero-byte flows cost nothing") {
    const auto tl = simulate(ring_trace(4, 3, 0.0, 2), NetConfig{});
    for (const auto& e : tl.entries) CHECK(e.sync_time() == 0.0);
  }

  TEST_CASE("simulate: timeline invariants") {
    Rng rng(31337);
    NetConfig cfg;
    cfg.compute_multiplier[worker_id(2)] = 3.0;
    cfg.compute_multiplier[worker_id(5)] = 0.5;
    NetTrace tr;
    tr.model_bytes = 4e6;
    const std::uint32_t n = 8;
    for (std::size_t t = 1; t <= 6; ++t) {
      RoundDemand rd{t, {}, {}, std::nullopt};
      for (std::uint32_t i = 0; i < n; ++i) {
        WorkerDemand w{worker_id(i), 10, {}};
        for (int k = 0; k < 6; ++k) {
          auto p = static_cast<std::uint32_t>(rng.below(n - 1));
          if (p >= i) ++p;
          w.pulls.push_back({worker_id(p), 1e6 * rng.uniform(), 0});
        }
        rd.workers.push_back(std::move(w));
      }
      tr.rounds.push_back(std::move(rd));
    }
    const auto tl = simulate(tr, cfg);
    REQUIRE(tl.entries.size() == 6 * n);
    for (const auto& e : tl.entries) {
      CHECK(e.update_end == doctest::Approx(e.update_start + 10 * cfg.step_time(e.worker)));
      CHECK(e.aggregation >= e.update_end);
      if (e.round > 1) {
        const auto* prev = tl.find(e.round - 1, e.worker);
        REQUIRE(prev);
        CHECK(e.update_start == prev->aggregation);
      }
    }
    // A pull from j cannot complete before j finished its update.
    for (std::size_t k = 0; k < tr.rounds.size(); ++k) {
      for (const auto& w : tr.rounds[k].workers) {
        const auto* me = tl.find(k + 1, w.worker);
        for (const auto& p : w.pulls) CHECK(me->aggregation >= tl.find(k + 1, p.provider)->update_end);
      }
    }
  }

  TEST_CASE("simulate: failure detection delays the re-routed pull") {
    NetConfig cfg;
    cfg.failure_detection_delay = 2.0;
    NetTrace tr;
    tr.model_bytes = kMB10;
    tr.rounds.push_back({1,
                         {{worker_id(0), 40, {{worker_id(1), kMB10, 1}}}, {worker_id(1), 40, {}}},
                         {},
                         std::nullopt});
    const auto tl = simulate(tr, cfg);
    // Released at max(update end 0.4, start 0 + 2 s), then 8 s of transfer.
    CHECK(tl.find(1, worker_id(0))->aggregation == doctest::Approx(10.0));
  }

  TEST_CASE("simulate: rejects inconsistent traces") {
    const NetConfig cfg;
    NetTrace self;
    self.rounds.push_back({1, {{worker_id(0), 1, {{worker_id(0), 1.0, 0}}}}, {}, std::nullopt});
    CHECK(code_of([&] { simulate(self, cfg); }) == Errc::inconsistent_trace);
    NetTrace missing;
    missing.rounds.push_back({1, {{worker_id(0), 1, {{worker_id(7), 1.0, 0}}}}, {}, std::nullopt});
    CHECK(code_of([&] { simulate(missing, cfg); }) == Errc::inconsistent_trace);
    NetTrace twice;
    twice.rounds.push_back({1, {{worker_id(0), 1, {}}, {worker_id(0), 1, {}}}, {}, std::nullopt});
    CHECK(code_of([&] { simulate(twice, cfg); }) == Errc::inconsistent_trace);
    NetTrace empty;
    empty.rounds.push_back({1, {}, {}, std::nullopt});
    CHECK(code_of([&] { simulate(empty, cfg); }) == Errc::inconsistent_trace);
    CHECK(code_of([&] { fedavg_timing(star_trace(3, 1.0, 1, 9), std::nullopt, cfg); }) ==
          Errc::inconsistent_trace);
  }

  TEST_CASE("simulate: a joiner starts after its join pulls") {
    const NetConfig cfg;
    NetTrace tr;
    tr.model_bytes = kMB10;
    tr.rounds.push_back({1, {{worker_id(0), 40, {}}, {worker_id(1), 40, {}}}, {}, std::nullopt});
    RoundDemand r2{2, {{worker_id(0), 40, {}}, {worker_id(1), 40, {}}, {worker_id(2), 40, {}}}, {}, std::nullopt};
    r2.joins.push_back({worker_id(2), {{worker_id(0), kMB10 / 2, 0}, {worker_id(1), kMB10 / 2, 0}}});
    tr.rounds.push_back(std::move(r2));
    const auto tl = simulate(tr, cfg);
    const auto* j = tl.find(2, worker_id(2));
    REQUIRE(j);
    // Boundary at 0.4 s, then 5 MB from each of two peers at 10 Mbps.
    CHECK(j->update_start == doctest::Approx(0.4 + 4.0));
    CHECK(j->bytes_received == doctest::Approx(kMB10));
  }

  TEST_CASE("fedavg_timing examples") {
    const NetConfig cfg;
    const auto two = fedavg_timing(star_trace(2, kMB10, 2, 0), std::nullopt, cfg);
    const auto* client = two.find(1, worker_id(1));
    const auto* server = two.find(1, worker_id(0));
    CHECK(client->sync_time() == doctest::Approx(16.0).epsilon(1e-12));
    CHECK(server->sync_time() == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(server->bytes_received == doctest::Approx(kMB10));

    const auto eleven = fedavg_timing(star_trace(11, kMB10, 1, 0), std::nullopt, cfg);
    CHECK(eleven.find(1, worker_id(0))->sync_time() >= 8.0 * (1 - 1e-12));

    const auto alone = fedavg_timing(star_trace(1, kMB10, 2, 0), std::nullopt, cfg);
    for (const auto& e : alone.entries) CHECK(e.sync_time() == 0.0);

    // An explicit default server applies to rounds that name none.
    NetTrace unnamed = star_trace(3, kMB10, 1, 0);
    unnamed.rounds[0].server.reset();
    CHECK(code_of([&] { fedavg_timing(unnamed, std::nullopt, cfg); }) == Errc::inconsistent_trace);
    const auto named = fedavg_timing(unnamed, worker_id(2), cfg);
    CHECK(named.find(1, worker_id(2))->bytes_received == doctest::Approx(2 * kMB10));
  }

  TEST_CASE("fedavg sync time grows linearly in n past ingress saturation") {
    const NetConfig cfg;
    std::vector<double> sync;
    for (std::uint32_t n : {21, 31, 41}) {
      sync.push_back(fedavg_timing(star_trace(n, kMB10, 1, 0), std::nullopt, cfg).find(1, worker_id(1))->sync_time());
    }
    // Upload (n-1) x 80 Mbit through 100 Mbps, then the same for downloads.
    CHECK(sync[0] == doctest::Approx(2 * 20 * 0.8));
    CHECK(sync[1] == doctest::Approx(2 * 30 * 0.8));
    CHECK(sync[2] == doctest::Approx(2 * 40 * 0.8));
  }

  TEST_CASE("identical inputs give identical timelines") {
    const NetConfig cfg;
    const auto a = simulate(ring_trace(7, 3, kMB10, 4), cfg);
    const auto b = simulate(ring_trace(7, 3, kMB10, 4), cfg);
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t k = 0; k < a.entries.size(); ++k) {
      CHECK(a.entries[k].aggregation == b.entries[k].aggregation);
    }
  }

  TEST_CASE("net config validation") {
    NetConfig bad;
    bad.per_pair_bw = 0;
    CHECK(code_of([&] { bad.validate(); }) == Errc::invalid_config);
    bad = NetConfig{};
    bad.failure_detection_delay = -1;
    CHECK(code_of([&] { bad.validate(); }) == Errc::invalid_config);
    bad = NetConfig{};
    bad.compute_multiplier[worker_id(1)] = 0;
    CHECK(code_of([&] { bad.validate(); }) == Errc::invalid_config);
  }
}
