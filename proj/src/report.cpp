#include "combo/report.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "combo/error.hpp"

namespace combo {

namespace {

std::string num(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : ""; }

// Labels come from file names; quote them when they could break a row.
std::string field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

}  // namespace

std::optional<double> metric_value(const Metrics& m, std::string_view metric) {
  if (metric == "loss") return m.loss;
  if (metric == "accuracy") return m.accuracy;
  if (metric == "suboptimality") return m.suboptimality;
  throw Error(Errc::invalid_argument, "unknown metric '" + std::string(metric) + "'");
}

bool meets_target(double value, std::string_view metric, double target) {
  return metric == "accuracy" ? value >= target : value <= target;
}

std::optional<TargetHit> time_to_target(const TimelineData& t, std::string_view metric, double target) {
  if (auto v = metric_value(t.initial, metric); v && meets_target(*v, metric, target)) {
    return TargetHit{0, 0.0};
  }
  for (const auto& r : t.rounds) {
    auto v = metric_value(r.mean, metric);
    if (v && meets_target(*v, metric, target)) return TargetHit{r.round, r.time};
  }
  return std::nullopt;
}

Report build_report(std::span<const TimelineData> timelines, std::span<const std::string> labels,
                    const std::string& metric, std::optional<double> target) {
  if (labels.size() != timelines.size()) {
    throw Error(Errc::invalid_argument, "one label per timeline expected");
  }
  static_cast<void>(metric_value(Metrics{}, metric));  // rejects unknown names
  Report rep;
  rep.metric = metric;
  rep.target = target;

  std::ostringstream curves, workers, ttt;
  curves << "run,mode,n,S,R,seed,round,time,loss,accuracy,suboptimality,mean_sync_time,bytes\n";
  workers << "run,round,worker,update_start,update_end,aggregation,sync_time,bytes,loss,accuracy,suboptimality\n";
  ttt << "run,mode,n,S,R,seed,metric,target,reached,round_to_target,time_to_target,final_value,"
         "mean_sync_time,total_bytes,duration\n";

  for (std::size_t k = 0; k < timelines.size(); ++k) {
    const auto& t = timelines[k];
    const std::string& label = labels[k];
    const std::string head = field(label) + "," + t.mode + "," + std::to_string(t.workers) + "," +
                             std::to_string(t.segments) + "," + std::to_string(t.replicas) + "," +
                             std::to_string(t.seed);
    curves << head << ",0,0," << num(t.initial.loss) << "," << opt(t.initial.accuracy) << ","
           << opt(t.initial.suboptimality) << ",,0\n";
    for (const auto& r : t.rounds) {
      curves << head << "," << r.round << "," << num(r.time) << "," << num(r.mean.loss) << ","
             << opt(r.mean.accuracy) << "," << opt(r.mean.suboptimality) << ","
             << num(r.mean_sync_time) << "," << num(r.bytes) << "\n";
    }
    for (const auto& x : t.rows) {
      workers << field(label) << "," << x.round << "," << raw(x.worker) << "," << num(x.update_start)
              << "," << num(x.update_end) << "," << num(x.aggregation) << "," << num(x.sync_time())
              << "," << num(x.bytes) << "," << num(x.metrics.loss) << "," << opt(x.metrics.accuracy)
              << "," << opt(x.metrics.suboptimality) << "\n";
    }

    RunSummary s{label, t.mode, t.workers, t.segments, t.replicas, t.seed, std::nullopt, 0.0, 0.0, 0.0, 0.0};
    if (target) s.hit = time_to_target(t, metric, *target);
    const Metrics& last = t.rounds.empty() ? t.initial : t.rounds.back().mean;
    s.final_value = metric_value(last, metric).value_or(0.0);
    s.mean_sync_time = t.mean_sync_time();
    s.total_bytes = t.total_bytes;
    s.duration = t.rounds.empty() ? 0.0 : t.rounds.back().time;
    ttt << head << "," << metric << "," << opt(target) << ","
        << (target ? (s.hit ? "yes" : "no") : "") << ","
        << (s.hit ? std::to_string(s.hit->round) : "") << "," << (s.hit ? num(s.hit->time) : "")
        << "," << num(s.final_value) << "," << num(s.mean_sync_time) << "," << num(s.total_bytes)
        << "," << num(s.duration) << "\n";
    rep.runs.push_back(std::move(s));
  }

  // Grouped tables average over seeds. Unreached runs are counted but left
  // out of the mean time.
  struct Acc {
    std::size_t runs = 0, reached = 0;
    double sync = 0.0, time = 0.0;
  };
  using Key = std::tuple<std::string, std::size_t, std::size_t, std::size_t>;
  std::map<Key, Acc> by_s, by_r;
  std::map<std::pair<std::string, std::size_t>, Acc> by_mode;
  for (const auto& s : rep.runs) {
    for (Acc* a : {&by_s[{s.mode, s.workers, s.replicas, s.segments}],
                   &by_r[{s.mode, s.workers, s.segments, s.replicas}], &by_mode[{s.mode, s.workers}]}) {
      ++a->runs;
      a->sync += s.mean_sync_time;
      if (s.hit) {
        ++a->reached;
        a->time += s.hit->time;
      }
    }
  }
  auto mean_time = [](const Acc& a) { return a.reached ? num(a.time / static_cast<double>(a.reached)) : ""; };
  std::ostringstream ss, sr, sm;
  ss << "mode,n,R,S,runs,mean_sync_time\n";
  for (const auto& [k, a] : by_s) {
    ss << std::get<0>(k) << "," << std::get<1>(k) << "," << std::get<2>(k) << "," << std::get<3>(k)
       << "," << a.runs << "," << num(a.sync / static_cast<double>(a.runs)) << "\n";
  }
  sr << "mode,n,S,R,runs,reached,mean_time_to_target\n";
  for (const auto& [k, a] : by_r) {
    sr << std::get<0>(k) << "," << std::get<1>(k) << "," << std::get<2>(k) << "," << std::get<3>(k)
       << "," << a.runs << "," << a.reached << "," << mean_time(a) << "\n";
  }
  sm << "mode,n,runs,reached,mean_time_to_target,mean_sync_time\n";
  for (const auto& [k, a] : by_mode) {
    sm << k.first << "," << k.second << "," << a.runs << "," << a.reached << "," << mean_time(a) << ","
       << num(a.sync / static_cast<double>(a.runs)) << "\n";
  }
  rep.curves_csv = curves.str();
  rep.worker_curves_csv = workers.str();
  rep.time_to_target_csv = ttt.str();
  rep.sync_vs_s_csv = ss.str();
  rep.ttt_vs_r_csv = sr.str();
  rep.ttt_by_mode_csv = sm.str();
  return rep;
}

void write_report(const Report& r, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream out(fs::path(out_dir) / name);
    if (!out) throw Error(Errc::invalid_argument, "cannot write " + (fs::path(out_dir) / name).string());
    out << text;
  };
  put("curves.csv", r.curves_csv);
  put("worker_curves.csv", r.worker_curves_csv);
  put("time_to_target.csv", r.time_to_target_csv);
  put("sync_vs_S.csv", r.sync_vs_s_csv);
  put("ttt_vs_R.csv", r.ttt_vs_r_csv);
  put("ttt_by_mode.csv", r.ttt_by_mode_csv);
}

}  // namespace combo
