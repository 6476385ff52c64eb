#include "combo/harness.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "combo/baselines.hpp"
#include "combo/error.hpp"
#include "combo/report.hpp"
#include "json.hpp"

namespace combo {

using nlohmann::json;

namespace {

double distance(const ModelParams& a, const ModelParams& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<double> copy(const ModelParams& m) { return {m.values().begin(), m.values().end()}; }

Metrics mean_metrics(const std::vector<Metrics>& all) {
  Metrics m;
  if (all.empty()) return m;
  double loss = 0.0, acc = 0.0, sub = 0.0;
  bool has_acc = true, has_sub = true;
  for (const auto& x : all) {
    loss += x.loss;
    if (x.accuracy) acc += *x.accuracy; else has_acc = false;
    if (x.suboptimality) sub += *x.suboptimality; else has_sub = false;
  }
  const double n = static_cast<double>(all.size());
  m.loss = loss / n;
  if (has_acc) m.accuracy = acc / n;
  if (has_sub) m.suboptimality = sub / n;
  return m;
}

std::vector<ProviderEntry> provider_entries(const std::vector<Provision>& pulls,
                                            const SegmentationScheme& scheme) {
  std::vector<ProviderEntry> out;
  out.reserve(pulls.size());
  for (const auto& p : pulls) {
    out.push_back({p.segment, p.replica, p.provider, p.failed_attempts, scheme.range(p.segment).size()});
  }
  return out;
}

std::vector<FailureEntry> failure_entries(const std::vector<PullRequest>& failures) {
  std::vector<FailureEntry> out;
  out.reserve(failures.size());
  for (const auto& f : failures) out.push_back({f.segment, f.replica, f.target});
  return out;
}

void put_metrics(json& j, const Metrics& m) {
  j["loss"] = m.loss;
  if (m.accuracy) j["accuracy"] = *m.accuracy;
  if (m.suboptimality) j["suboptimality"] = *m.suboptimality;
}

Metrics get_metrics(const json& j) {
  Metrics m;
  m.loss = j.at("loss").get<double>();
  if (j.contains("accuracy")) m.accuracy = j.at("accuracy").get<double>();
  if (j.contains("suboptimality")) m.suboptimality = j.at("suboptimality").get<double>();
  return m;
}

}  // namespace

std::unique_ptr<Task> make_task(const RunConfig& c) {
  if (c.task == TaskKind::quadratic) {
    QuadraticSpec spec = c.quadratic;
    spec.dim = c.dim;
    spec.workers = c.task_workers();
    spec.seed = c.seed;
    return std::make_unique<QuadraticTask>(QuadraticTask::generate(spec));
  }
  LogisticSpec spec = c.logistic;
  spec.features = c.dim - 1;
  spec.workers = c.task_workers();
  spec.seed = c.seed;
  return std::make_unique<LogisticTask>(LogisticTask::generate(spec));
}

ModelParams initial_model(const RunConfig& c, std::size_t dim) {
  if (c.init_scale == 0.0) return ModelParams::zeros(dim);
  Rng rng(derive_seed(c.seed, "init"));
  std::vector<double> v(dim);
  for (auto& x : v) x = c.init_scale * rng.normal();
  return ModelParams(std::move(v));
}

Trace run(const RunConfig& input, const RunHooks& hooks) {
  validate(input);
  const RunConfig c = input.mode == RunMode::gossip ? make_naive_gossip_config(input) : input;
  const auto task = make_task(c);
  const auto scheme = make_scheme(c.dim, c.segments);
  const ModelParams init = initial_model(c, c.dim);

  ProtocolConfig proto;
  proto.segments = c.segments;
  proto.replicas = c.replicas;
  proto.sgd = {c.learning_rate, c.batch_size, c.local_steps};
  proto.seed = c.seed;

  std::vector<WorkerId> ids;
  for (std::uint32_t i = 0; i < c.workers; ++i) ids.push_back(worker_id(i));
  Federation fed(*task, scheme, proto, init, ids);
  if (hooks.on_step) fed.set_step_observer(hooks.on_step);

  Trace tr;
  TraceInit& in = tr.init;
  in.mode = std::string(to_string(c.mode));
  in.workers = ids;
  in.dim = c.dim;
  in.segments = c.segments;
  in.replicas = c.replicas;
  in.local_steps = c.local_steps;
  in.seed = c.seed;
  in.scheme.assign(scheme.ranges().begin(), scheme.ranges().end());
  in.weights = fed.weights();
  in.config = config_to_json(input);
  in.metrics = task->evaluate(init);
  if (c.record_models) in.model = copy(init);

  const bool fedavg = c.mode == RunMode::fedavg;
  Rng server_rng(derive_seed(c.seed, "server"));
  std::optional<WorkerId> server;
  auto ensure_server = [&]() {
    if (!server || !fed.is_alive(*server)) {
      const auto alive = fed.alive();
      server = pick_server(alive, server_rng);
    }
  };

  auto apply = [&](const ChurnEvent& e, std::uint64_t t) {
    auto reject = [&](const std::string& why) { tr.rejects.push_back({t, e.kind, e.worker, why}); };
    if (e.kind == ChurnKind::join) {
      if (fedavg) {
        ensure_server();
        if (!server) return reject("no live server");
        fed.admit(e.worker, fed.worker(*server).model);
        TraceJoin j{t, e.worker, task->dataset_size(e.worker), {}, {}, std::nullopt};
        for (std::size_t l = 0; l < scheme.num_segments(); ++l) {
          j.providers.push_back({l, 0, *server, 0, scheme.range(l).size()});
        }
        if (c.record_models) j.model = copy(fed.worker(e.worker).model);
        tr.joins.push_back(std::move(j));
        return;
      }
      try {
        const JoinResult jr = fed.join(e.worker);
        TraceJoin j{t, e.worker, task->dataset_size(e.worker), provider_entries(jr.pulls, scheme),
                    failure_entries(jr.failures), std::nullopt};
        if (c.record_models) j.model = copy(jr.model);
        tr.joins.push_back(std::move(j));
      } catch (const Error& err) {
        if (err.code() != Errc::join_rejected) throw;
        reject(err.what());
      }
      return;
    }
    if (!fed.is_member(e.worker)) return reject("worker is not a member");
    try {
      fed.apply(e);
      tr.churn.push_back({t, e.kind, e.worker});
    } catch (const Error& err) {
      if (err.code() != Errc::invalid_argument) throw;
      reject(err.what());
    }
  };

  std::size_t next_event = 0;
  try {
    for (std::uint64_t t = 1; t <= c.rounds; ++t) {
      for (; next_event < c.churn.size() && c.churn[next_event].round <= t; ++next_event) {
        apply(c.churn[next_event], t);
      }
      if (fed.alive().empty()) {
        tr.error = "no live workers left at round " + std::to_string(t);
        break;
      }
      RoundResult result = [&] {
        if (!fedavg) return fed.step_round();
        ensure_server();
        return fedavg_round(fed, *server);
      }();

      TraceRound round{result.round, {}, result.server, {}, std::nullopt};
      std::vector<Metrics> all;
      for (const auto& w : result.workers) {
        TraceWorker x;
        x.round = w.round;
        x.worker = w.worker;
        x.steps = c.local_steps;
        x.metrics = task->evaluate(w.aggregated);
        x.oracle_dev = distance(w.aggregated, result.oracle);
        x.providers = provider_entries(w.pulls, scheme);
        x.failures = failure_entries(w.failures);
        x.short_segments = w.short_segments;
        x.rng = w.rng_draws;
        if (c.record_models) {
          x.model = copy(w.aggregated);
          x.updated = copy(w.updated);
        }
        all.push_back(x.metrics);
        round.alive.push_back(w.worker);
        tr.workers.push_back(std::move(x));
      }
      round.mean = mean_metrics(all);
      if (c.record_models) round.oracle = copy(result.oracle);
      tr.rounds.push_back(std::move(round));
      if (hooks.on_round) hooks.on_round(fed, result);
    }
  } catch (const Error& e) {
    if (e.code() != Errc::numeric_failure) throw;
    tr.error = e.what();
  }
  return tr;
}

NetTrace demands(const Trace& trace, const NetConfig& net) {
  net.validate();
  const double dim = static_cast<double>(trace.init.dim);
  auto bytes_of = [&](std::size_t params) {
    const double k = static_cast<double>(params);
    return net.model_bytes ? *net.model_bytes * k / dim
                           : k * static_cast<double>(net.bytes_per_parameter);
  };
  auto pulls_of = [&](const std::vector<ProviderEntry>& providers) {
    std::vector<PullDemand> out;
    out.reserve(providers.size());
    for (const auto& p : providers) out.push_back({p.provider, bytes_of(p.params), p.failed});
    return out;
  };

  NetTrace nt;
  nt.model_bytes = net.model_bytes ? *net.model_bytes : dim * static_cast<double>(net.bytes_per_parameter);
  std::map<std::uint64_t, std::size_t> index;
  for (const auto& r : trace.rounds) {
    index[r.round] = nt.rounds.size();
    nt.rounds.push_back({r.round, {}, {}, r.server});
  }
  for (const auto& w : trace.workers) {
    auto it = index.find(w.round);
    if (it == index.end()) continue;  // round aborted before its record
    nt.rounds[it->second].workers.push_back({w.worker, w.steps, pulls_of(w.providers)});
  }
  for (const auto& j : trace.joins) {
    auto it = index.find(j.round);
    if (it == index.end()) continue;
    nt.rounds[it->second].joins.push_back({j.worker, pulls_of(j.providers)});
  }
  return nt;
}

double TimelineData::mean_sync_time() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.sync_time();
  return s / static_cast<double>(rows.size());
}

TimelineData attach_times(const Trace& trace, const NetConfig& net) {
  const NetTrace nt = demands(trace, net);
  const bool fedavg = trace.init.mode == "fedavg";
  const Timeline tl = fedavg ? fedavg_timing(nt, std::nullopt, net) : simulate(nt, net);

  TimelineData out;
  out.mode = trace.init.mode;
  out.workers = trace.init.workers.size();
  out.segments = trace.init.segments;
  out.replicas = trace.init.replicas;
  out.local_steps = trace.init.local_steps;
  out.seed = trace.init.seed;
  out.model_bytes = nt.model_bytes;
  out.net = net;
  out.initial = trace.init.metrics;
  out.total_bytes = tl.total_bytes;
  out.error = trace.error;

  std::map<std::pair<std::uint64_t, WorkerId>, const Metrics*> metrics;
  for (const auto& w : trace.workers) metrics[{w.round, w.worker}] = &w.metrics;
  std::map<std::uint64_t, std::pair<double, double>> per_round;  // sync sum, bytes
  std::map<std::uint64_t, std::size_t> counts;
  for (const auto& e : tl.entries) {
    TimelineRow row{e.round, e.worker, e.update_start, e.update_end, e.aggregation,
                    e.bytes_received, *metrics.at({e.round, e.worker})};
    per_round[e.round].first += row.sync_time();
    per_round[e.round].second += row.bytes;
    ++counts[e.round];
    out.rows.push_back(std::move(row));
  }
  for (std::size_t k = 0; k < nt.rounds.size(); ++k) {
    const auto& r = trace.rounds[k];
    const auto& agg = per_round[r.round];
    out.rounds.push_back({r.round, tl.round_end[k], r.mean,
                          agg.first / static_cast<double>(std::max<std::size_t>(counts[r.round], 1)),
                          agg.second});
  }
  return out;
}

void write_timeline(const TimelineData& t, std::ostream& out) {
  json h{{"type", "timeline"},  {"version", kTraceVersion}, {"mode", t.mode},
         {"workers", t.workers}, {"segments", t.segments},   {"replicas", t.replicas},
         {"local_steps", t.local_steps}, {"seed", t.seed},   {"model_bytes", t.model_bytes},
         {"total_bytes", t.total_bytes}};
  h["net"] = json::parse(net_config_to_json(t.net));
  put_metrics(h, t.initial);
  out << h.dump() << '\n';
  std::size_t k = 0;
  for (const auto& r : t.rounds) {
    for (; k < t.rows.size() && t.rows[k].round <= r.round; ++k) {
      const auto& x = t.rows[k];
      json j{{"type", "worker"},           {"round", x.round},          {"worker", raw(x.worker)},
             {"update_start", x.update_start}, {"update_end", x.update_end},
             {"aggregation", x.aggregation},   {"sync_time", x.sync_time()}, {"bytes", x.bytes}};
      put_metrics(j, x.metrics);
      out << j.dump() << '\n';
    }
    json j{{"type", "round"}, {"round", r.round}, {"time", r.time},
           {"mean_sync_time", r.mean_sync_time}, {"bytes", r.bytes}};
    put_metrics(j, r.mean);
    out << j.dump() << '\n';
  }
  if (t.error) out << json{{"type", "error"}, {"message", *t.error}}.dump() << '\n';
}

TimelineData read_timeline(std::istream& in) {
  TimelineData t;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "timeline line " + std::to_string(lineno);
    try {
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (!header) {
        if (type != "timeline") throw Error(Errc::parse_error, where + ": first record must be the timeline header");
        const int version = j.at("version").get<int>();
        if (version != kTraceVersion) {
          throw Error(Errc::unsupported_version, where + ": timeline version " + std::to_string(version));
        }
        t.mode = j.at("mode").get<std::string>();
        t.workers = j.at("workers").get<std::size_t>();
        t.segments = j.at("segments").get<std::size_t>();
        t.replicas = j.at("replicas").get<std::size_t>();
        t.local_steps = j.at("local_steps").get<std::size_t>();
        t.seed = j.at("seed").get<std::uint64_t>();
        t.model_bytes = j.at("model_bytes").get<double>();
        t.total_bytes = j.at("total_bytes").get<double>();
        t.net = net_config_from_json(j.at("net").dump());
        t.initial = get_metrics(j);
        header = true;
      } else if (type == "worker") {
        t.rows.push_back({j.at("round").get<std::uint64_t>(),
                          worker_id(j.at("worker").get<std::uint32_t>()),
                          j.at("update_start").get<double>(), j.at("update_end").get<double>(),
                          j.at("aggregation").get<double>(), j.at("bytes").get<double>(),
                          get_metrics(j)});
      } else if (type == "round") {
        t.rounds.push_back({j.at("round").get<std::uint64_t>(), j.at("time").get<double>(),
                            get_metrics(j), j.at("mean_sync_time").get<double>(),
                            j.at("bytes").get<double>()});
      } else if (type == "error") {
        t.error = j.at("message").get<std::string>();
      } else {
        throw Error(Errc::parse_error, where + ": unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw Error(Errc::parse_error, where + ": " + e.what());
    }
  }
  if (!header) throw Error(Errc::parse_error, "timeline is empty");
  return t;
}

TimelineData load_timeline(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::parse_error, "cannot open timeline " + path);
  return read_timeline(in);
}

double measure_rho(const Trace& trace) {
  std::map<std::uint64_t, AggregationSnapshot> rounds;
  for (const auto& r : trace.rounds) {
    if (!r.oracle) throw Error(Errc::invalid_argument, "trace was recorded without models");
    rounds.emplace(r.round, AggregationSnapshot{ModelParams(*r.oracle), {}});
  }
  for (const auto& w : trace.workers) {
    if (!w.model) throw Error(Errc::invalid_argument, "trace was recorded without models");
    auto it = rounds.find(w.round);
    if (it != rounds.end()) it->second.aggregated.emplace_back(*w.model);
  }
  std::vector<AggregationSnapshot> flat;
  for (auto& [round, snap] : rounds) flat.push_back(std::move(snap));
  return measure_rho(flat);
}

std::vector<SweepPoint> sweep(const RunConfig& base, std::string_view key,
                              const std::vector<std::string>& values, const std::string& out_dir) {
  if (values.empty()) throw Error(Errc::invalid_argument, "sweep needs at least one value");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<SweepPoint> points;
  std::vector<TimelineData> timelines;
  std::vector<std::string> labels;
  std::optional<std::string> failure;
  for (const auto& value : values) {
    const RunConfig cfg = with_override(base, key, value);
    const std::string stem = std::string(key) + "_" + value;
    SweepPoint p{value, (fs::path(out_dir) / (stem + ".trace.jsonl")).string(),
                 (fs::path(out_dir) / (stem + ".timeline.jsonl")).string()};
    const Trace tr = run(cfg);
    {
      std::ofstream out(p.trace_path);
      write_trace(tr, out);
    }
    TimelineData tl = attach_times(tr, cfg.net);
    {
      std::ofstream out(p.timeline_path);
      write_timeline(tl, out);
    }
    if (tr.error && !failure) failure = stem + ": " + *tr.error;
    labels.push_back(std::string(key) + "=" + value);
    timelines.push_back(std::move(tl));
    points.push_back(std::move(p));
  }
  write_report(build_report(timelines, labels, base.target.metric, base.target.value), out_dir);
  if (failure) throw Error(Errc::numeric_failure, *failure);
  return points;
}

}  // namespace combo
