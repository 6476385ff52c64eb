#include "combo/trace.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "combo/config.hpp"
#include "combo/error.hpp"
#include "json.hpp"

namespace combo {

using nlohmann::json;

namespace {

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

json ids(const std::vector<WorkerId>& v) {
  json a = json::array();
  for (WorkerId id : v) a.push_back(raw(id));
  return a;
}

std::vector<WorkerId> get_ids(const json& a) {
  std::vector<WorkerId> v;
  for (const auto& x : a) v.push_back(worker_id(x.get<std::uint32_t>()));
  return v;
}

json providers(const std::vector<ProviderEntry>& v) {
  json a = json::array();
  for (const auto& p : v) a.push_back({p.segment, p.replica, raw(p.provider), p.failed, p.params});
  return a;
}

std::vector<ProviderEntry> get_providers(const json& a) {
  std::vector<ProviderEntry> v;
  for (const auto& x : a) {
    if (!x.is_array() || x.size() != 5) throw Error(Errc::parse_error, "provider entry needs 5 fields");
    v.push_back({x[0].get<std::size_t>(), x[1].get<std::size_t>(),
                 worker_id(x[2].get<std::uint32_t>()), x[3].get<std::uint32_t>(),
                 x[4].get<std::size_t>()});
  }
  return v;
}

json failures(const std::vector<FailureEntry>& v) {
  json a = json::array();
  for (const auto& f : v) a.push_back({f.segment, f.replica, raw(f.target)});
  return a;
}

std::vector<FailureEntry> get_failures(const json& a) {
  std::vector<FailureEntry> v;
  for (const auto& x : a) {
    if (!x.is_array() || x.size() != 3) throw Error(Errc::parse_error, "failure entry needs 3 fields");
    v.push_back({x[0].get<std::size_t>(), x[1].get<std::size_t>(),
                 worker_id(x[2].get<std::uint32_t>())});
  }
  return v;
}

std::optional<std::vector<double>> get_vector(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  return j.at(key).get<std::vector<double>>();
}

void emit(std::ostream& out, const json& j) { out << j.dump() << '\n'; }

json init_json(const TraceInit& in) {
  json j;
  j["type"] = "init";
  j["version"] = in.version;
  j["mode"] = in.mode;
  j["workers"] = ids(in.workers);
  j["dim"] = in.dim;
  j["segments"] = in.segments;
  j["replicas"] = in.replicas;
  j["local_steps"] = in.local_steps;
  j["seed"] = in.seed;
  json scheme = json::array();
  for (const auto& r : in.scheme) scheme.push_back({r.begin, r.end});
  j["scheme"] = scheme;
  json weights = json::array();
  for (const auto& [id, w] : in.weights) weights.push_back({raw(id), w});
  j["weights"] = weights;
  j["config"] = json::parse(in.config.empty() ? "{}" : in.config);
  put_metrics(j, in.metrics);
  if (in.model) j["model"] = *in.model;
  return j;
}

}  // namespace

void write_trace(const Trace& trace, std::ostream& out) {
  out.precision(17);
  emit(out, init_json(trace.init));
  std::size_t c = 0, k = 0, w = 0, x = 0;
  auto reject = [&](const TraceReject& e) {
    emit(out, {{"type", "reject"}, {"round", e.round}, {"kind", std::string(to_string(e.kind))},
               {"worker", raw(e.worker)}, {"reason", e.reason}});
  };
  for (const auto& r : trace.rounds) {
    for (; x < trace.rejects.size() && trace.rejects[x].round <= r.round; ++x) reject(trace.rejects[x]);
    for (; c < trace.churn.size() && trace.churn[c].round <= r.round; ++c) {
      const auto& e = trace.churn[c];
      emit(out, {{"type", "churn"}, {"round", e.round}, {"kind", std::string(to_string(e.kind))},
                 {"worker", raw(e.worker)}});
    }
    for (; k < trace.joins.size() && trace.joins[k].round <= r.round; ++k) {
      const auto& jn = trace.joins[k];
      json j{{"type", "join"}, {"round", jn.round}, {"worker", raw(jn.worker)},
             {"weight", jn.weight}, {"providers", providers(jn.providers)},
             {"failures", failures(jn.failures)}};
      if (jn.model) j["model"] = *jn.model;
      emit(out, j);
    }
    for (; w < trace.workers.size() && trace.workers[w].round <= r.round; ++w) {
      const auto& x = trace.workers[w];
      json j{{"type", "worker"}, {"round", x.round}, {"worker", raw(x.worker)}, {"steps", x.steps}};
      put_metrics(j, x.metrics);
      j["oracle_dev"] = x.oracle_dev;
      j["providers"] = providers(x.providers);
      j["failures"] = failures(x.failures);
      j["short_segments"] = x.short_segments;
      j["rng"] = x.rng;
      if (x.model) j["model"] = *x.model;
      if (x.updated) j["updated"] = *x.updated;
      emit(out, j);
    }
    json j{{"type", "round"}, {"round", r.round}, {"alive", ids(r.alive)}};
    if (r.server) j["server"] = raw(*r.server);
    put_metrics(j, r.mean);
    if (r.oracle) j["oracle"] = *r.oracle;
    emit(out, j);
  }
  // Records of an unfinished round (run aborted mid-round).
  for (; c < trace.churn.size(); ++c) {
    const auto& e = trace.churn[c];
    emit(out, {{"type", "churn"}, {"round", e.round}, {"kind", std::string(to_string(e.kind))},
               {"worker", raw(e.worker)}});
  }
  for (; k < trace.joins.size(); ++k) {
    const auto& jn = trace.joins[k];
    emit(out, {{"type", "join"}, {"round", jn.round}, {"worker", raw(jn.worker)},
               {"weight", jn.weight}, {"providers", providers(jn.providers)},
               {"failures", failures(jn.failures)}});
  }
  for (; x < trace.rejects.size(); ++x) reject(trace.rejects[x]);
  if (trace.error) emit(out, {{"type", "error"}, {"message", *trace.error}});
}

std::string trace_to_string(const Trace& trace) {
  std::ostringstream ss;
  write_trace(trace, ss);
  return ss.str();
}

Trace read_trace(std::istream& in) {
  Trace trace;
  std::string line;
  std::size_t lineno = 0;
  bool have_init = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "trace line " + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(Errc::parse_error, where + ": " + e.what());
    }
    try {
      const std::string type = j.at("type").get<std::string>();
      if (!have_init) {
        if (type != "init") throw Error(Errc::parse_error, where + ": first record must be init");
        const int version = j.at("version").get<int>();
        if (version != kTraceVersion) {
          throw Error(Errc::unsupported_version,
                      where + ": trace version " + std::to_string(version) + " (supported: " +
                          std::to_string(kTraceVersion) + ")");
        }
        TraceInit& t = trace.init;
        t.version = version;
        t.mode = j.at("mode").get<std::string>();
        t.workers = get_ids(j.at("workers"));
        t.dim = j.at("dim").get<std::size_t>();
        t.segments = j.at("segments").get<std::size_t>();
        t.replicas = j.at("replicas").get<std::size_t>();
        t.local_steps = j.at("local_steps").get<std::size_t>();
        t.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& r : j.at("scheme")) {
          t.scheme.push_back({r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()});
        }
        for (const auto& w : j.at("weights")) {
          t.weights[worker_id(w.at(0).get<std::uint32_t>())] = w.at(1).get<std::uint64_t>();
        }
        t.config = j.at("config").dump();
        t.metrics = get_metrics(j);
        t.model = get_vector(j, "model");
        have_init = true;
      } else if (type == "churn") {
        trace.churn.push_back({j.at("round").get<std::uint64_t>(),
                               parse_churn_kind(j.at("kind").get<std::string>()),
                               worker_id(j.at("worker").get<std::uint32_t>())});
      } else if (type == "reject") {
        trace.rejects.push_back({j.at("round").get<std::uint64_t>(),
                                 parse_churn_kind(j.at("kind").get<std::string>()),
                                 worker_id(j.at("worker").get<std::uint32_t>()),
                                 j.at("reason").get<std::string>()});
      } else if (type == "join") {
        trace.joins.push_back({j.at("round").get<std::uint64_t>(),
                               worker_id(j.at("worker").get<std::uint32_t>()),
                               j.at("weight").get<std::uint64_t>(), get_providers(j.at("providers")),
                               get_failures(j.at("failures")), get_vector(j, "model")});
      } else if (type == "worker") {
        TraceWorker x;
        x.round = j.at("round").get<std::uint64_t>();
        x.worker = worker_id(j.at("worker").get<std::uint32_t>());
        x.steps = j.at("steps").get<std::uint64_t>();
        x.metrics = get_metrics(j);
        x.oracle_dev = j.at("oracle_dev").get<double>();
        x.providers = get_providers(j.at("providers"));
        x.failures = get_failures(j.at("failures"));
        x.short_segments = j.at("short_segments").get<std::vector<std::size_t>>();
        x.rng = j.at("rng").get<std::uint64_t>();
        x.model = get_vector(j, "model");
        x.updated = get_vector(j, "updated");
        trace.workers.push_back(std::move(x));
      } else if (type == "round") {
        TraceRound r;
        r.round = j.at("round").get<std::uint64_t>();
        r.alive = get_ids(j.at("alive"));
        if (j.contains("server")) r.server = worker_id(j.at("server").get<std::uint32_t>());
        r.mean = get_metrics(j);
        r.oracle = get_vector(j, "oracle");
        trace.rounds.push_back(std::move(r));
      } else if (type == "error") {
        trace.error = j.at("message").get<std::string>();
      } else {
        throw Error(Errc::parse_error, where + ": unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw Error(Errc::parse_error, where + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() == Errc::parse_error || e.code() == Errc::unsupported_version) {
        if (std::string(e.what()).find("trace line") != std::string::npos) throw;
      }
      throw Error(Errc::parse_error, where + ": " + e.what());
    }
  }
  if (!have_init) throw Error(Errc::parse_error, "trace is empty");
  return trace;
}

Trace trace_from_string(const std::string& text) {
  std::istringstream ss(text);
  return read_trace(ss);
}

Trace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::parse_error, "cannot open trace " + path);
  return read_trace(in);
}

}  // namespace combo
