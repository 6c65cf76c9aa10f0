// fedsel: run client-selection experiments and summarize them.
//
//   fedsel run --config exp.json --out runs/
//   fedsel report --runs runs/ --target 0.5
//   fedsel traces synth --m 30 --out trace.csv

#include "fedsel/delays.hpp"
#include "fedsel/experiment.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <thread>

namespace {

int cmd_run(const std::string& config, const std::string& out, unsigned jobs, bool quiet) {
  const auto cfg = fedsel::load_config(config);
  const auto outcome = fedsel::run_experiment(cfg, out, jobs, quiet ? nullptr : &std::cerr);
  if (!outcome.all_ok()) {
    for (const auto& r : outcome.runs)
      if (r.status != fedsel::RunStatus::Ok)
        std::cerr << "error: " << r.selector << " seed " << r.seed << " " << fedsel::to_string(r.status) << ": "
                  << r.message << '\n';
    return 3;
  }
  return 0;
}

int cmd_report(const std::string& runs, double target, const std::string& metric) {
  const auto rep = fedsel::report_time_to_target(runs, target, metric == "train_loss");
  const std::filesystem::path dir(runs);
  {
    std::ofstream f(dir / "report.csv");
    if (!f) throw std::runtime_error("cannot write " + (dir / "report.csv").string());
    fedsel::write_report_csv(f, rep);
  }
  {
    std::ofstream f(dir / "report.txt");
    fedsel::write_report_text(f, rep, target);
  }
  fedsel::write_report_text(std::cout, rep, target);
  return 0;
}

int cmd_traces_synth(std::size_t m, const std::string& out, const std::string& kind, std::uint64_t seed,
                     double median, double shape) {
  std::vector<double> means;
  if (kind == "long_tail") {
    means = fedsel::synthesize_long_tail({median, shape}, m, seed);
  } else {
    means = fedsel::synthesize_delays(fedsel::SyntheticDelayConfig{}, m, seed);
  }
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out);
  fedsel::write_trace(f, means);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delay- and heterogeneity-aware client selection simulator"};
  app.require_subcommand(1);

  std::string config, out_dir, runs_dir, metric = "test_loss", trace_out, kind = "long_tail";
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  bool quiet = false;
  double target = 0.0, median = 60.0, shape = 1.5;
  std::size_t m = 0;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "Run every (selector, seed) pair of a config");
  run->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory for round and summary CSVs")->required();
  run->add_option("--jobs", jobs, "Runs executed in parallel")->check(CLI::PositiveNumber);
  run->add_flag("--quiet", quiet, "Do not print per-run progress");

  auto* report = app.add_subcommand("report", "Median time-to-target per selector");
  report->add_option("--runs", runs_dir, "Directory with round CSVs")->required();
  report->add_option("--target", target, "Target value of the metric")->required();
  report->add_option("--metric", metric, "Column compared with the target")
      ->check(CLI::IsMember({"test_loss", "train_loss"}));

  auto* traces = app.add_subcommand("traces", "Delay trace utilities");
  traces->require_subcommand(1);
  auto* synth = traces->add_subcommand("synth", "Write a synthetic delay trace");
  synth->add_option("--m", m, "Number of clients")->required()->check(CLI::PositiveNumber);
  synth->add_option("--out", trace_out, "Output trace file")->required();
  synth->add_option("--kind", kind, "long_tail (log-normal means) or synthetic (link speed + compute)")
      ->check(CLI::IsMember({"long_tail", "synthetic"}));
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--median", median, "Median delay for long_tail, seconds")->check(CLI::PositiveNumber);
  synth->add_option("--shape", shape, "Log-space spread for long_tail")->check(CLI::NonNegativeNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, out_dir, jobs, quiet);
    if (*report) return cmd_report(runs_dir, target, metric);
    if (*synth) return cmd_traces_synth(m, trace_out, kind, seed, median, shape);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
