#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "combo/config.hpp"
#include "combo/error.hpp"
#include "combo/harness.hpp"
#include "combo/report.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace combo;
namespace fs = std::filesystem;

namespace {

RunConfig small(std::size_t n = 6, std::size_t s = 3, std::size_t r = 2) {
  RunConfig c;
  c.workers = n;
  c.dim = 12;
  c.segments = s;
  c.replicas = r;
  c.local_steps = 3;
  c.rounds = 6;
  c.seed = 13;
  return c;
}

std::string invalid_message(const std::string& json) {
  try {
    config_from_json(json);
  } catch (const Error& e) {
    if (e.code() == Errc::invalid_config) return e.what();
    return std::string("wrong code: ") + e.what();
  }
  return "accepted";
}

Errc read_error(const std::string& text) {
  try {
    trace_from_string(text);
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::invalid_argument;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("combo_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("harness-cli") {
  TEST_CASE("config validation names the violated constraint") {
    CHECK(invalid_message(R"({"workers": 4, "replicas": 4})").find("replicas (R)") != std::string::npos);
    CHECK(invalid_message(R"({"dim": 4, "segments": 5})").find("segments (S)") != std::string::npos);
    CHECK(invalid_message(R"({"learning_rate": 0.9})").find("1/L") != std::string::npos);
    CHECK(invalid_message(R"({"sgements": 2})").find("unknown key 'sgements'") != std::string::npos);
    CHECK(invalid_message(R"({"mode": "central"})").find("mode must be") != std::string::npos);
    CHECK(invalid_message(R"({"workers": 4, "replicas": 2, "churn": [{"kind": "crash", "worker": 7, "round": 2}]})")
              .find("not running") != std::string::npos);
    CHECK(invalid_message(R"({"workers": 4, "replicas": 2, "churn": [{"kind": "recover", "worker": 1, "round": 2}]})")
              .find("has not crashed") != std::string::npos);
    CHECK(invalid_message(R"({"rounds": 5, "churn": [{"kind": "crash", "worker": 1, "round": 6}]})")
              .find("round must lie") != std::string::npos);
    CHECK(invalid_message(R"({"target": {"metric": "accuracy", "value": 0.8}})").find("logistic") != std::string::npos);
    CHECK(invalid_message(R"([1, 2])").find("JSON object") != std::string::npos);
    // R = n is fine for FedAvg, which ignores R.
    CHECK(invalid_message(R"({"workers": 4, "replicas": 4, "mode": "fedavg"})") == "accepted");
  }

  TEST_CASE("config JSON round trip") {
    auto c = small();
    c.churn = {{ChurnKind::crash, worker_id(1), 2}, {ChurnKind::recover, worker_id(1), 4}};
    c.net.compute_multiplier[worker_id(2)] = 3.0;
    c.target.value = 0.1;
    const auto text = config_to_json(c);
    CHECK(config_to_json(config_from_json(text)) == text);
  }

  TEST_CASE("with_override applies sweep keys and re-validates") {
    const auto c = small();
    CHECK(with_override(c, "S", "4").segments == 4);
    CHECK(with_override(c, "R", "5").replicas == 5);
    CHECK(with_override(c, "mode", "fedavg").mode == RunMode::fedavg);
    CHECK(with_override(c, "alpha", "0.25").learning_rate == 0.25);
    CHECK_THROWS_AS(with_override(c, "R", "6"), Error);
    CHECK_THROWS_AS(with_override(c, "S", "x"), Error);
    CHECK_THROWS_AS(with_override(c, "batch", "4"), Error);
  }

  TEST_CASE("rounds=0 gives only the initialization record") {
    auto c = small();
    c.rounds = 0;
    const auto text = trace_to_string(run(c));
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    CHECK(text.find("\"type\":\"init\"") != std::string::npos);
  }

  TEST_CASE("trace round trip and version check") {
    auto c = small();
    c.record_models = true;
    c.churn = {{ChurnKind::crash, worker_id(2), 2}, {ChurnKind::join, worker_id(6), 3}};
    const auto text = trace_to_string(run(c));
    CHECK(trace_to_string(trace_from_string(text)) == text);

    auto bumped = text;
    bumped.replace(bumped.find("\"version\":1"), 11, "\"version\":2");
    CHECK(read_error(bumped) == Errc::unsupported_version);

    auto broken = text;
    const auto second = broken.find('\n') + 1;
    const auto third = broken.find('\n', second) + 1;
    broken.insert(third, "{not json\n");
    try {
      trace_from_string(broken);
      FAIL("malformed trace accepted");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::parse_error);
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK(read_error("{\"type\":\"worker\"}\n") == Errc::parse_error);
  }

  TEST_CASE("one record per live worker and round") {
    auto c = small(8, 4, 2);
    c.churn = {{ChurnKind::crash, worker_id(3), 2}, {ChurnKind::graceful_leave, worker_id(5), 4}};
    const auto t = run(c);
    std::map<std::uint64_t, std::set<std::uint32_t>> seen;
    for (const auto& w : t.workers) CHECK(seen[w.round].insert(raw(w.worker)).second);
    for (const auto& r : t.rounds) {
      std::set<std::uint32_t> alive;
      for (auto id : r.alive) alive.insert(raw(id));
      CHECK(seen[r.round] == alive);
    }
    CHECK(seen[1].size() == 8);
    CHECK(seen[2].size() == 7);
    CHECK(seen[5].size() == 6);
  }

  TEST_CASE("property: providers were alive at their round") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      auto c = small(8, 4, 2);
      c.rounds = 8;
      c.seed = seed;
      c.churn = {{ChurnKind::crash, worker_id(1), 2},
                 {ChurnKind::join, worker_id(8), 3},
                 {ChurnKind::graceful_leave, worker_id(4), 4},
                 {ChurnKind::recover, worker_id(1), 6},
                 {ChurnKind::crash, worker_id(8), 7}};
      const auto t = run(c);
      std::map<std::uint64_t, std::set<WorkerId>> alive;
      for (const auto& r : t.rounds) alive[r.round] = {r.alive.begin(), r.alive.end()};
      REQUIRE(alive.size() == 8);
      for (const auto& w : t.workers) {
        for (const auto& p : w.providers) CHECK(alive[w.round].count(p.provider) == 1);
      }
      for (const auto& j : t.joins) {
        for (const auto& p : j.providers) CHECK(alive[j.round].count(p.provider) == 1);
      }
    }
  }

  TEST_CASE("default config: federation loss decreases over the first 10 rounds") {
    RunConfig c;
    c.rounds = 10;
    const auto t = run(c);
    double prev = t.init.metrics.loss;
    REQUIRE(t.rounds.size() == 10);
    for (const auto& r : t.rounds) {
      CHECK(r.mean.loss < prev);
      prev = r.mean.loss;
    }
  }

  TEST_CASE("identical configs give identical traces, timelines and reports") {
    auto c = small();
    c.churn = {{ChurnKind::crash, worker_id(0), 3}};
    c.net.model_bytes = 1e6;
    const auto a = trace_to_string(run(c));
    const auto b = trace_to_string(run(c));
    CHECK(a == b);
    auto timeline = [&](const std::string& text) {
      std::ostringstream out;
      write_timeline(attach_times(trace_from_string(text), c.net), out);
      return out.str();
    };
    CHECK(timeline(a) == timeline(b));
    const auto da = scratch("det_a"), db = scratch("det_b");
    for (const auto& dir : {da, db}) {
      std::istringstream in(timeline(a));
      const std::vector<TimelineData> tl{read_timeline(in)};
      const std::vector<std::string> labels{"x"};
      write_report(build_report(tl, labels, "loss", 0.5), dir.string());
    }
    for (const auto& e : fs::directory_iterator(da)) {
      CHECK(slurp(e.path()) == slurp(db / e.path().filename()));
    }
  }

  TEST_CASE("measure_rho examples") {
    auto c = small(5, 3, 4);
    c.record_models = true;
    CHECK(measure_rho(run(c)) < 1e-9);

    auto one = small(1, 3, 0);
    one.record_models = true;
    CHECK(measure_rho(run(one)) == 0.0);

    auto plain = small();
    CHECK_THROWS_AS(measure_rho(run(plain)), Error);
  }

  TEST_CASE("measure_rho matches an independent recompute (n=4, S=2, R=1)") {
    auto c = small(4, 2, 1);
    c.dim = 9;
    c.rounds = 5;
    c.record_models = true;
    const auto t = run(c);
    std::map<std::uint64_t, std::map<std::uint32_t, const TraceWorker*>> by_round;
    for (const auto& w : t.workers) by_round[w.round][raw(w.worker)] = &w;
    double rho = 0;
    for (const auto& [round, ws] : by_round) {
      std::vector<std::vector<double>> models;
      std::vector<std::uint64_t> weights;
      for (const auto& [id, w] : ws) {
        models.push_back(*w->updated);
        weights.push_back(t.init.weights.at(worker_id(id)));
      }
      const auto global = oracle::weighted_mean(models, weights);
      for (const auto& [id, w] : ws) {
        std::vector<std::vector<oracle::Provider>> per(2);
        for (auto& seg : per) seg.push_back({id, t.init.weights.at(worker_id(id)), *w->updated});
        for (const auto& p : w->providers) {
          const auto pid = raw(p.provider);
          per[p.segment].push_back({pid, t.init.weights.at(p.provider), *ws.at(pid)->updated});
        }
        const auto agg = oracle::aggregate(9, 2, per);
        CHECK(oracle::rel_err_vec(agg, *w->model) <= 1e-12);
        rho = std::max(rho, oracle::norm([&] {
                         std::vector<double> d(9);
                         for (std::size_t k = 0; k < 9; ++k) d[k] = agg[k] - global[k];
                         return d;
                       }()));
      }
    }
    CHECK(rho > 0);
    CHECK(measure_rho(t) == doctest::Approx(rho).epsilon(1e-9));
  }

  TEST_CASE("report: already-met and unreached targets") {
    auto c = small();
    c.task = TaskKind::quadratic;
    const auto tl = attach_times(run(c), c.net);
    const double initial = tl.initial.loss;
    const auto met = time_to_target(tl, "loss", initial * 2);
    REQUIRE(met);
    CHECK(met->round == 0);
    CHECK(met->time == 0.0);
    CHECK_FALSE(time_to_target(tl, "loss", -1.0));

    const std::vector<TimelineData> tls{tl};
    const std::vector<std::string> labels{"run"};
    const auto rep = build_report(tls, labels, "loss", -1.0);
    CHECK(rep.time_to_target_csv.find(",no,") != std::string::npos);
    const auto hit = build_report(tls, labels, "loss", initial * 2);
    CHECK(hit.time_to_target_csv.find(",yes,0,0") != std::string::npos);
  }

  TEST_CASE("a diverging run keeps its partial trace") {
    auto c = small();
    c.task = TaskKind::logistic;
    c.learning_rate = 1e6;
    c.local_steps = 20;
    c.rounds = 30;
    const auto t = run(c);
    REQUIRE(t.error);
    CHECK(t.rounds.size() < 30);
    const auto text = trace_to_string(t);
    CHECK(trace_from_string(text).error == t.error);
  }

  TEST_CASE("sweep writes one trace and timeline per value plus the report") {
    const auto dir = scratch("sweep");
    auto c = small();
    c.target.value = 1e9;
    const std::vector<std::string> values{"1", "2", "4"};
    const auto points = sweep(c, "S", values, dir.string());
    REQUIRE(points.size() == 3);
    for (const auto& p : points) {
      CHECK(fs::exists(p.trace_path));
      CHECK(fs::exists(p.timeline_path));
      CHECK(load_timeline(p.timeline_path).segments == std::stoul(p.value));
    }
    for (const char* f : {"curves.csv", "worker_curves.csv", "time_to_target.csv", "sync_vs_S.csv",
                          "ttt_vs_R.csv", "ttt_by_mode.csv"}) {
      CHECK(fs::exists(dir / f));
    }
  }
}
