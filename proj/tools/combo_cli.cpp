// Command-line front end: run, attach-times, report, sweep.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "combo/config.hpp"
#include "combo/error.hpp"
#include "combo/harness.hpp"
#include "combo/report.hpp"
#include "combo/trace.hpp"

namespace {

constexpr int kFailure = 1;
constexpr int kDiverged = 2;

template <typename Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw combo::Error(combo::Errc::invalid_argument, "cannot write " + path);
  fn(out);
}

std::vector<std::string> split_values(const std::string& list) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : list) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  for (const auto& v : out) {
    if (v.empty()) throw combo::Error(combo::Errc::invalid_argument, "empty value in --vary list");
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmented gossip federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path, trace_out;
  std::optional<std::uint64_t> seed, rounds;
  auto* run = app.add_subcommand("run", "Run the logical simulation and write a trace");
  run->add_option("config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--output", trace_out, "Trace file (default: stdout)");
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--rounds", rounds, "Override the round count");

  std::string trace_path, net_path, timeline_out;
  auto* attach = app.add_subcommand("attach-times", "Replay a trace on the simulated network");
  attach->add_option("trace", trace_path, "Trace file (JSONL)")->required()->check(CLI::ExistingFile);
  attach->add_option("netconfig", net_path, "Network config, or a run config with a net block")
      ->required()
      ->check(CLI::ExistingFile);
  attach->add_option("-o,--output", timeline_out, "Timeline file (default: stdout)");

  std::vector<std::string> timelines;
  double target = 0.0;
  std::string metric = "loss", report_dir = "report";
  auto* report = app.add_subcommand("report", "Summarise timelines into CSV tables");
  report->add_option("timelines", timelines, "Timeline files")->required()->check(CLI::ExistingFile);
  report->add_option("--target", target, "Target metric value")->required();
  report->add_option("--metric", metric, "loss, accuracy or suboptimality")
      ->check(CLI::IsMember({"loss", "accuracy", "suboptimality"}));
  report->add_option("-o,--output-dir", report_dir, "Directory for the CSV tables");

  std::string sweep_config, vary, sweep_dir = "sweep";
  auto* sweep = app.add_subcommand("sweep", "Run a config over a list of values of one knob");
  sweep->add_option("config", sweep_config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("--vary", vary, "KEY=v1,v2,... with KEY in S, R, n, tau, seed, rounds, alpha, mode")
      ->required();
  sweep->add_option("-o,--output-dir", sweep_dir, "Directory for traces, timelines and tables");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      combo::RunConfig cfg = combo::load_config(config_path);
      if (seed) cfg.seed = *seed;
      if (rounds) cfg.rounds = *rounds;
      const combo::Trace tr = combo::run(cfg);
      with_output(trace_out, [&](std::ostream& out) { combo::write_trace(tr, out); });
      if (tr.error) {
        std::cerr << "combo: run stopped early: " << *tr.error << "\n";
        return kDiverged;
      }
    } else if (*attach) {
      const combo::Trace tr = combo::load_trace(trace_path);
      const combo::NetConfig net = combo::load_net_config(net_path);
      const combo::TimelineData tl = combo::attach_times(tr, net);
      with_output(timeline_out, [&](std::ostream& out) { combo::write_timeline(tl, out); });
    } else if (*report) {
      std::vector<combo::TimelineData> data;
      std::vector<std::string> labels;
      for (const auto& p : timelines) {
        data.push_back(combo::load_timeline(p));
        std::string stem = std::filesystem::path(p).filename().string();
        for (const char* ext : {".timeline.jsonl", ".jsonl"}) {
          const std::string e = ext;
          if (stem.size() > e.size() && stem.compare(stem.size() - e.size(), e.size(), e) == 0) {
            stem.resize(stem.size() - e.size());
            break;
          }
        }
        labels.push_back(stem);
      }
      const combo::Report rep = combo::build_report(data, labels, metric, target);
      combo::write_report(rep, report_dir);
      std::cout << rep.time_to_target_csv;
    } else if (*sweep) {
      const auto eq = vary.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw combo::Error(combo::Errc::invalid_argument, "--vary expects KEY=v1,v2,...");
      }
      const combo::RunConfig cfg = combo::load_config(sweep_config);
      try {
        const auto points = combo::sweep(cfg, vary.substr(0, eq), split_values(vary.substr(eq + 1)), sweep_dir);
        for (const auto& p : points) std::cout << p.value << "\t" << p.timeline_path << "\n";
      } catch (const combo::Error& e) {
        if (e.code() != combo::Errc::numeric_failure) throw;
        std::cerr << "combo: " << e.what() << "\n";
        return kDiverged;
      }
    }
  } catch (const combo::Error& e) {
    std::cerr << "combo: error: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "combo: error: " << e.what() << "\n";
    return kFailure;
  }
  return 0;
}
