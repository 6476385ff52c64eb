#include "combo/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "combo/error.hpp"
#include "json.hpp"

namespace combo {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(Errc::invalid_config, what); }

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    bad(std::string("key '") + key + "': " + e.what());
  }
}

void read_size_range(const json& j, std::uint64_t& lo, std::uint64_t& hi) {
  if (!j.contains("dataset_size")) return;
  const auto& v = j.at("dataset_size");
  if (v.is_number_unsigned()) {
    lo = hi = v.get<std::uint64_t>();
  } else if (v.is_array() && v.size() == 2) {
    lo = v[0].get<std::uint64_t>();
    hi = v[1].get<std::uint64_t>();
  } else {
    bad("dataset_size must be a positive integer or [min, max]");
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      bad(std::string("unknown key '") + key + "' in " + where);
    }
  }
}

NetConfig net_from(const json& j) {
  if (!j.is_object()) bad("net config must be an object");
  reject_unknown(j, {"per_pair_bw", "node_capacity", "bytes_per_parameter", "model_bytes",
                     "compute_time_per_step", "compute_multiplier", "failure_detection_delay"},
                 "net");
  NetConfig net;
  read(j, "per_pair_bw", net.per_pair_bw);
  read(j, "node_capacity", net.node_capacity);
  read(j, "bytes_per_parameter", net.bytes_per_parameter);
  if (j.contains("model_bytes") && !j.at("model_bytes").is_null()) {
    net.model_bytes = j.at("model_bytes").get<double>();
  }
  read(j, "compute_time_per_step", net.compute_time_per_step);
  read(j, "failure_detection_delay", net.failure_detection_delay);
  if (j.contains("compute_multiplier")) {
    for (const auto& [key, value] : j.at("compute_multiplier").items()) {
      std::uint32_t id = 0;
      auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
      if (ec != std::errc() || ptr != key.data() + key.size()) {
        bad("compute_multiplier keys must be worker ids, got '" + key + "'");
      }
      net.compute_multiplier[worker_id(id)] = value.get<double>();
    }
  }
  return net;
}

json net_to(const NetConfig& net) {
  json j;
  j["per_pair_bw"] = net.per_pair_bw;
  j["node_capacity"] = net.node_capacity;
  j["bytes_per_parameter"] = net.bytes_per_parameter;
  j["model_bytes"] = net.model_bytes ? json(*net.model_bytes) : json(nullptr);
  j["compute_time_per_step"] = net.compute_time_per_step;
  json mult = json::object();
  for (const auto& [id, m] : net.compute_multiplier) mult[std::to_string(raw(id))] = m;
  j["compute_multiplier"] = mult;
  j["failure_detection_delay"] = net.failure_detection_delay;
  return j;
}

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::parse_error, std::string(what) + ": " + e.what());
  }
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::invalid_config, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    bad("cannot parse '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

}  // namespace

std::string_view to_string(RunMode mode) noexcept {
  switch (mode) {
    case RunMode::combo: return "combo";
    case RunMode::gossip: return "gossip";
    case RunMode::fedavg: return "fedavg";
  }
  return "combo";
}

std::string_view to_string(ChurnKind kind) noexcept {
  switch (kind) {
    case ChurnKind::join: return "join";
    case ChurnKind::graceful_leave: return "leave";
    case ChurnKind::crash: return "crash";
    case ChurnKind::recover: return "recover";
  }
  return "crash";
}

RunMode parse_run_mode(std::string_view text) {
  if (text == "combo") return RunMode::combo;
  if (text == "gossip") return RunMode::gossip;
  if (text == "fedavg") return RunMode::fedavg;
  bad("mode must be combo, gossip or fedavg, got '" + std::string(text) + "'");
}

ChurnKind parse_churn_kind(std::string_view text) {
  if (text == "join") return ChurnKind::join;
  if (text == "leave") return ChurnKind::graceful_leave;
  if (text == "crash") return ChurnKind::crash;
  if (text == "recover") return ChurnKind::recover;
  bad("churn kind must be join, leave, crash or recover, got '" + std::string(text) + "'");
}

std::size_t RunConfig::task_workers() const {
  std::size_t count = workers;
  for (const auto& e : churn) {
    if (e.kind == ChurnKind::join) count = std::max<std::size_t>(count, raw(e.worker) + 1);
  }
  return count;
}

void validate(const RunConfig& c) {
  if (c.workers == 0) bad("workers (n) must be >= 1");
  if (c.dim == 0) bad("dim must be >= 1");
  if (c.segments == 0 || c.segments > c.dim) {
    bad("segments (S) must satisfy 1 <= S <= dim (S=" + std::to_string(c.segments) +
        ", dim=" + std::to_string(c.dim) + ")");
  }
  if (c.mode != RunMode::fedavg && c.replicas > c.workers - 1) {
    bad("replicas (R) must be <= n-1 (R=" + std::to_string(c.replicas) +
        ", n=" + std::to_string(c.workers) + ")");
  }
  if (c.local_steps == 0) bad("local_steps (tau) must be >= 1");
  if (!(c.learning_rate > 0.0)) bad("learning_rate must be > 0");
  if (c.batch_size == 0) bad("batch_size must be >= 1");
  if (!(c.init_scale >= 0.0)) bad("init_scale must be >= 0");
  if (c.task == TaskKind::quadratic) {
    if (!(c.quadratic.mu > 0.0) || c.quadratic.lipschitz < c.quadratic.mu) {
      bad("quadratic task needs 0 < mu <= lipschitz");
    }
    if (c.learning_rate > 1.0 / c.quadratic.lipschitz) {
      bad("learning_rate must be <= 1/L for the quadratic task");
    }
    if (c.quadratic.min_dataset_size == 0 || c.quadratic.max_dataset_size < c.quadratic.min_dataset_size) {
      bad("dataset_size must satisfy 1 <= min <= max");
    }
  } else {
    if (c.dim < 2) bad("logistic task needs dim >= 2 (features + bias)");
    if (c.logistic.min_dataset_size == 0 || c.logistic.max_dataset_size < c.logistic.min_dataset_size) {
      bad("dataset_size must satisfy 1 <= min <= max");
    }
    if (c.logistic.validation_size == 0) bad("validation_size must be >= 1");
  }
  if (c.target.metric != "loss" && c.target.metric != "accuracy" &&
      c.target.metric != "suboptimality") {
    bad("target metric must be loss, accuracy or suboptimality");
  }
  if (c.target.metric == "suboptimality" && c.task != TaskKind::quadratic) {
    bad("suboptimality target needs the quadratic task");
  }
  if (c.target.metric == "accuracy" && c.task != TaskKind::logistic) {
    bad("accuracy target needs the logistic task");
  }
  c.net.validate();

  // Replay membership to check that every event refers to a worker in a
  // state where the event makes sense.
  enum class State { up, crashed, left };
  std::map<std::uint32_t, State> members;
  for (std::uint32_t i = 0; i < c.workers; ++i) members[i] = State::up;
  std::uint64_t last_round = 0;
  for (const auto& e : c.churn) {
    const auto id = raw(e.worker);
    const std::string who = "churn event for worker " + std::to_string(id);
    if (e.round < 1 || e.round > std::max<std::uint64_t>(c.rounds, 1)) {
      bad(who + ": round must lie in [1, rounds]");
    }
    if (e.round < last_round) bad("churn events must be ordered by round");
    last_round = e.round;
    auto it = members.find(id);
    switch (e.kind) {
      case ChurnKind::join:
        if (it != members.end()) bad(who + ": join needs a new worker id");
        members[id] = State::up;
        break;
      case ChurnKind::graceful_leave:
        if (it == members.end() || it->second == State::left) bad(who + ": not a member");
        it->second = State::left;
        break;
      case ChurnKind::crash:
        if (it == members.end() || it->second != State::up) bad(who + ": not running");
        it->second = State::crashed;
        break;
      case ChurnKind::recover:
        if (it == members.end() || it->second != State::crashed) bad(who + ": has not crashed");
        it->second = State::up;
        break;
    }
  }
}

RunConfig config_from_json(std::string_view text) {
  const json j = parse_json(text, "run config");
  if (!j.is_object()) bad("run config must be a JSON object");
  reject_unknown(j, {"workers", "dim", "segments", "replicas", "local_steps", "learning_rate",
                     "batch_size", "task", "init_scale", "mode", "net", "churn", "seed", "rounds",
                     "target", "record_models"},
                 "run config");
  RunConfig c;
  read(j, "workers", c.workers);
  read(j, "dim", c.dim);
  read(j, "segments", c.segments);
  read(j, "replicas", c.replicas);
  read(j, "local_steps", c.local_steps);
  read(j, "learning_rate", c.learning_rate);
  read(j, "batch_size", c.batch_size);
  read(j, "init_scale", c.init_scale);
  read(j, "seed", c.seed);
  read(j, "rounds", c.rounds);
  read(j, "record_models", c.record_models);
  if (j.contains("mode")) c.mode = parse_run_mode(j.at("mode").get<std::string>());
  if (j.contains("task")) {
    const auto& t = j.at("task");
    const std::string kind = t.value("kind", "quadratic");
    if (kind == "quadratic") {
      reject_unknown(t, {"kind", "mu", "lipschitz", "center_spread", "center_offset",
                         "dataset_size", "identical_workers"},
                     "quadratic task");
      c.task = TaskKind::quadratic;
      read(t, "mu", c.quadratic.mu);
      read(t, "lipschitz", c.quadratic.lipschitz);
      read(t, "center_spread", c.quadratic.center_spread);
      read(t, "center_offset", c.quadratic.center_offset);
      read(t, "identical_workers", c.quadratic.identical_workers);
      read_size_range(t, c.quadratic.min_dataset_size, c.quadratic.max_dataset_size);
    } else if (kind == "logistic") {
      reject_unknown(t, {"kind", "separation", "noise", "l2", "validation_size", "dataset_size"},
                     "logistic task");
      c.task = TaskKind::logistic;
      read(t, "separation", c.logistic.separation);
      read(t, "noise", c.logistic.noise);
      read(t, "l2", c.logistic.l2);
      read(t, "validation_size", c.logistic.validation_size);
      read_size_range(t, c.logistic.min_dataset_size, c.logistic.max_dataset_size);
    } else {
      bad("task kind must be quadratic or logistic, got '" + kind + "'");
    }
  }
  if (j.contains("net")) c.net = net_from(j.at("net"));
  if (j.contains("churn")) {
    for (const auto& e : j.at("churn")) {
      reject_unknown(e, {"kind", "worker", "round"}, "churn event");
      if (!e.contains("kind") || !e.contains("worker") || !e.contains("round")) {
        bad("churn events need kind, worker and round");
      }
      c.churn.push_back({parse_churn_kind(e.at("kind").get<std::string>()),
                         worker_id(e.at("worker").get<std::uint32_t>()),
                         e.at("round").get<std::uint64_t>()});
    }
  }
  if (j.contains("target")) {
    const auto& t = j.at("target");
    reject_unknown(t, {"metric", "value"}, "target");
    read(t, "metric", c.target.metric);
    if (t.contains("value") && !t.at("value").is_null()) c.target.value = t.at("value").get<double>();
  }
  validate(c);
  return c;
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["workers"] = c.workers;
  j["dim"] = c.dim;
  j["segments"] = c.segments;
  j["replicas"] = c.replicas;
  j["local_steps"] = c.local_steps;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  if (c.task == TaskKind::quadratic) {
    j["task"] = {{"kind", "quadratic"},
                 {"mu", c.quadratic.mu},
                 {"lipschitz", c.quadratic.lipschitz},
                 {"center_spread", c.quadratic.center_spread},
                 {"center_offset", c.quadratic.center_offset},
                 {"dataset_size", {c.quadratic.min_dataset_size, c.quadratic.max_dataset_size}},
                 {"identical_workers", c.quadratic.identical_workers}};
  } else {
    j["task"] = {{"kind", "logistic"},
                 {"separation", c.logistic.separation},
                 {"noise", c.logistic.noise},
                 {"l2", c.logistic.l2},
                 {"validation_size", c.logistic.validation_size},
                 {"dataset_size", {c.logistic.min_dataset_size, c.logistic.max_dataset_size}}};
  }
  j["init_scale"] = c.init_scale;
  j["mode"] = std::string(to_string(c.mode));
  j["net"] = net_to(c.net);
  json churn = json::array();
  for (const auto& e : c.churn) {
    churn.push_back({{"kind", std::string(to_string(e.kind))}, {"worker", raw(e.worker)}, {"round", e.round}});
  }
  j["churn"] = churn;
  j["seed"] = c.seed;
  j["rounds"] = c.rounds;
  j["target"] = {{"metric", c.target.metric},
                 {"value", c.target.value ? json(*c.target.value) : json(nullptr)}};
  j["record_models"] = c.record_models;
  return j.dump();
}

RunConfig load_config(const std::string& path) { return config_from_json(slurp(path)); }

NetConfig net_config_from_json(std::string_view text) {
  const json j = parse_json(text, "net config");
  NetConfig net = net_from(j.contains("net") && j.at("net").is_object() ? j.at("net") : j);
  net.validate();
  return net;
}

std::string net_config_to_json(const NetConfig& config) { return net_to(config).dump(); }

NetConfig load_net_config(const std::string& path) {
  const std::string text = slurp(path);
  const json j = parse_json(text, path.c_str());
  if (!j.is_object()) bad(path + ": expected a JSON object");
  // A run config carries its network block (or the defaults) with it.
  for (const char* key : {"net", "workers", "segments", "replicas", "task", "mode", "rounds"}) {
    if (j.contains(key)) return config_from_json(text).net;
  }
  return net_config_from_json(text);
}

RunConfig with_override(RunConfig c, std::string_view key, std::string_view value) {
  if (key == "S" || key == "segments") {
    c.segments = parse_number<std::size_t>(key, value);
  } else if (key == "R" || key == "replicas") {
    c.replicas = parse_number<std::size_t>(key, value);
  } else if (key == "n" || key == "workers") {
    c.workers = parse_number<std::size_t>(key, value);
  } else if (key == "tau" || key == "local_steps") {
    c.local_steps = parse_number<std::size_t>(key, value);
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "rounds") {
    c.rounds = parse_number<std::uint64_t>(key, value);
  } else if (key == "alpha" || key == "learning_rate") {
    c.learning_rate = parse_number<double>(key, value);
  } else if (key == "mode") {
    c.mode = parse_run_mode(value);
  } else {
    bad("cannot vary '" + std::string(key) + "'; use S, R, n, tau, seed, rounds, alpha or mode");
  }
  validate(c);
  return c;
}

}  // namespace combo
