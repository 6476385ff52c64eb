#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "combo/aggregation.hpp"
#include "combo/config.hpp"
#include "combo/error.hpp"
#include "combo/gossip.hpp"
#include "combo/harness.hpp"
#include "combo/model_params.hpp"
#include "combo/netsim.hpp"
#include "combo/report.hpp"
#include "combo/tasks.hpp"
#include "combo/trace.hpp"

namespace py = pybind11;
using namespace combo;

namespace {

std::vector<WorkerId> to_ids(const std::vector<std::uint32_t>& raw_ids) {
  std::vector<WorkerId> out;
  out.reserve(raw_ids.size());
  for (auto id : raw_ids) out.push_back(worker_id(id));
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> scheme_ranges(std::size_t dim, std::size_t segments) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const auto scheme = make_scheme(dim, segments);
  for (const auto& r : scheme.ranges()) out.emplace_back(r.begin, r.end);
  return out;
}

std::vector<double> aggregate(const std::optional<std::vector<double>>& local, std::uint32_t local_id,
                              const std::vector<std::tuple<std::size_t, std::vector<double>, std::uint32_t>>& pulled,
                              std::size_t segments, const std::map<std::uint32_t, std::uint64_t>& weights) {
  WeightTable table;
  for (const auto& [id, w] : weights) table[worker_id(id)] = w;
  std::vector<Segment> segs;
  std::map<std::size_t, std::size_t> lengths;
  for (const auto& [index, values, provider] : pulled) {
    segs.push_back({index, values, worker_id(provider)});
    lengths[index] = values.size();
  }
  // Without a local model the dimension follows from the pulled segments.
  std::size_t dim = local ? local->size() : 0;
  if (!local) {
    for (const auto& [index, len] : lengths) dim += len;
  }
  const auto scheme = make_scheme(dim, segments);
  std::optional<ModelParams> model;
  if (local) model.emplace(*local);
  const auto out = model ? aggregate_model(LocalModel{worker_id(local_id), *model}, segs, scheme, table)
                         : aggregate_model(std::nullopt, segs, scheme, table);
  return {out.values().begin(), out.values().end()};
}

std::vector<std::tuple<std::size_t, std::size_t, std::uint32_t>> plan(std::uint32_t worker,
                                                                     const std::vector<std::uint32_t>& peers,
                                                                     std::size_t segments, std::size_t replicas,
                                                                     std::uint64_t round, std::uint64_t seed) {
  Rng rng(seed);
  const auto ids = to_ids(peers);
  const auto p = plan_pulls(worker_id(worker), ids, segments, replicas, round, rng);
  std::vector<std::tuple<std::size_t, std::size_t, std::uint32_t>> out;
  for (const auto& q : p.requests) out.emplace_back(q.segment, q.replica, raw(q.target));
  return out;
}

std::vector<double> rates(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& flows, double per_pair_bw,
                          double node_capacity) {
  NetConfig cfg;
  cfg.per_pair_bw = per_pair_bw;
  cfg.node_capacity = node_capacity;
  std::vector<FlowEndpoints> ends;
  for (const auto& [s, d] : flows) ends.push_back({worker_id(s), worker_id(d)});
  return allocate_rates(ends, cfg);
}

std::string run_config(const std::string& config_json) {
  return trace_to_string(run(config_from_json(config_json)));
}

std::string attach(const std::string& trace_text, const std::string& net_json) {
  const auto net = net_config_from_json(net_json);
  std::ostringstream out;
  write_timeline(attach_times(trace_from_string(trace_text), net), out);
  return out.str();
}

py::dict report(const std::vector<std::string>& timelines, const std::vector<std::string>& labels,
                const std::string& metric, std::optional<double> target) {
  std::vector<TimelineData> data;
  for (const auto& text : timelines) {
    std::istringstream in(text);
    data.push_back(read_timeline(in));
  }
  const auto r = build_report(data, labels, metric, target);
  py::dict out;
  out["curves.csv"] = r.curves_csv;
  out["worker_curves.csv"] = r.worker_curves_csv;
  out["time_to_target.csv"] = r.time_to_target_csv;
  out["sync_vs_S.csv"] = r.sync_vs_s_csv;
  out["ttt_vs_R.csv"] = r.ttt_vs_r_csv;
  out["ttt_by_mode.csv"] = r.ttt_by_mode_csv;
  return out;
}

double bound(double mu, double lipschitz, double learning_rate, std::size_t local_steps, double delta, double rho,
             double initial_distance, std::uint64_t round) {
  return theorem1_bound({mu, lipschitz, learning_rate, local_steps, delta, rho, initial_distance}, round);
}

}  // namespace

PYBIND11_MODULE(pycombo, m) {
  m.doc() = "Segmented gossip federated learning simulator";

  static py::exception<Error> error(m, "ComboError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error;
      py::object instance = exc(e.what());
      instance.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error.ptr(), instance.ptr());
    }
  });

  m.def("make_scheme", &scheme_ranges, "Half-open index ranges of the equal split", py::arg("dim"),
        py::arg("segments"));
  m.def("aggregate_model", &aggregate, "Segment-wise weighted aggregation", py::arg("local"), py::arg("local_id"),
        py::arg("pulled"), py::arg("segments"), py::arg("weights"));
  m.def("plan_pulls", &plan, "(segment, replica, target) for each request", py::arg("worker"), py::arg("peers"),
        py::arg("segments"), py::arg("replicas"), py::arg("round"), py::arg("seed"));
  m.def("allocate_rates", &rates, "Max-min fair rates in bits/s", py::arg("flows"), py::arg("per_pair_bw") = 10e6,
        py::arg("node_capacity") = 100e6);
  m.def("theorem1_bound", &bound, py::arg("mu"), py::arg("lipschitz"), py::arg("learning_rate"),
        py::arg("local_steps"), py::arg("delta"), py::arg("rho"), py::arg("initial_distance"), py::arg("round"));
  m.def("run", &run_config, "Runs a JSON config and returns the trace as JSONL text", py::arg("config"));
  m.def("attach_times", &attach, "Replays a trace on the network and returns the timeline text",
        py::arg("trace"), py::arg("net"));
  m.def("report", &report, "CSV tables keyed by file name", py::arg("timelines"), py::arg("labels"),
        py::arg("metric") = "loss", py::arg("target") = py::none());
  m.def("validate_config", [](const std::string& text) { return config_to_json(config_from_json(text)); },
        "Parses, validates and returns the config with every default filled in", py::arg("config"));
}
