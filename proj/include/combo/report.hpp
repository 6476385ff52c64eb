#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "combo/harness.hpp"

namespace combo {

// Value of a named metric (loss | accuracy | suboptimality), if present.
std::optional<double> metric_value(const Metrics& metrics, std::string_view metric);

// Accuracy targets are reached from below, loss and suboptimality from above.
bool meets_target(double value, std::string_view metric, double target);

struct TargetHit {
  std::uint64_t round = 0;  // 0 when the initial model already meets it
  double time = 0.0;
};

// First round whose federation mean meets the target; nullopt if never.
std::optional<TargetHit> time_to_target(const TimelineData& timeline, std::string_view metric,
                                        double target);

struct RunSummary {
  std::string label;
  std::string mode;
  std::size_t workers = 0;
  std::size_t segments = 0;
  std::size_t replicas = 0;
  std::uint64_t seed = 0;
  std::optional<TargetHit> hit;
  double final_value = 0.0;
  double mean_sync_time = 0.0;
  double total_bytes = 0.0;
  double duration = 0.0;
};

struct Report {
  std::string metric;
  std::optional<double> target;
  std::vector<RunSummary> runs;
  std::string curves_csv;         // federation mean per round
  std::string worker_curves_csv;  // per worker per round
  std::string time_to_target_csv; // one row per run
  std::string sync_vs_s_csv;      // mean sync time grouped by (mode, n, R, S)
  std::string ttt_vs_r_csv;       // mean time-to-target grouped by (mode, n, S, R)
  std::string ttt_by_mode_csv;    // mean time-to-target grouped by (mode, n)
};

Report build_report(std::span<const TimelineData> timelines, std::span<const std::string> labels,
                    const std::string& metric, std::optional<double> target);

// Writes curves.csv, worker_curves.csv, time_to_target.csv, sync_vs_S.csv,
// ttt_vs_R.csv and ttt_by_mode.csv into `out_dir`.
void write_report(const Report& report, const std::string& out_dir);

}  // namespace combo
