// fedadt: command-line front end for the simulator.
//
//   fedadt run --config run.cfg [--seed N | --seeds 1,2,3] [--out metrics.csv]
//              [--trace trace.txt] [--set key=value ...]
//   fedadt report --target 0.9 [--tg 1000] [--csv report.csv] a.csv b.csv ...
//   fedadt partition --config run.cfg --out spec.txt [--seed N] [--set key=value ...]
//
// Exit codes: 0 success, 2 configuration/usage error, 3 runtime error.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "fedadt/fedadt.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// metrics.csv + seed 7 -> metrics.seed7.csv
std::string seeded_path(const std::string& path, std::uint64_t seed) {
  std::filesystem::path p(path);
  const std::string stem = p.stem().string() + ".seed" + std::to_string(seed);
  return (p.parent_path() / (stem + p.extension().string())).string();
}

fedadt::RunConfig load_with_overrides(const std::string& config,
                                      const std::vector<std::string>& overrides) {
  fedadt::RunConfig cfg = fedadt::load_config(config);
  for (const auto& o : overrides) fedadt::apply_override(cfg, o);
  return cfg;
}

int cmd_run(const std::string& config, const std::vector<std::string>& overrides,
            const std::vector<std::uint64_t>& seeds, const std::string& out,
            const std::string& trace) {
  fedadt::RunConfig base = load_with_overrides(config, overrides);
  if (!out.empty()) base.out = out;
  if (!trace.empty()) base.trace = trace;
  fedadt::validate(base);

  std::vector<std::uint64_t> run_seeds = seeds;
  const bool sweep = run_seeds.size() > 1;
  if (run_seeds.empty()) run_seeds.push_back(base.sim.seed);

  for (auto s : run_seeds) {
    fedadt::RunConfig cfg = base;
    cfg.sim.seed = s;
    if (sweep) {
      cfg.out = seeded_path(base.out, s);
      if (!cfg.trace.empty()) cfg.trace = seeded_path(base.trace, s);
    }
    const auto result = fedadt::run_experiment(cfg);
    fedadt::save_metrics(cfg.out, result.metrics);
    if (!cfg.trace.empty()) {
      std::ofstream os(cfg.trace);
      if (!os) throw fedadt::ConfigError("cannot write trace file " + cfg.trace);
      fedadt::write_trace(os, result.trace);
    }
    const auto& last = result.metrics.back();
    std::cerr << "seed " << s << ": " << result.metrics.size() << " evaluations, final round "
              << last.round << ", accuracy " << last.test_accuracy << " -> " << cfg.out << '\n';
  }
  return 0;
}

int cmd_report(double target, fedadt::Timestamp tg, const std::string& csv_out,
               const std::vector<std::string>& files) {
  std::vector<std::pair<std::string, std::vector<fedadt::MetricsRecord>>> runs;
  for (const auto& f : files) runs.emplace_back(f, fedadt::load_metrics(f));
  const auto rows = fedadt::report(runs, target, tg);
  fedadt::write_report_text(std::cout, rows, target, tg);
  if (!csv_out.empty()) {
    std::ofstream os(csv_out);
    if (!os) throw fedadt::ConfigError("cannot write report file " + csv_out);
    fedadt::write_report_csv(os, rows);
  }
  return 0;
}

int cmd_partition(const std::string& config, const std::vector<std::string>& overrides,
                  std::optional<std::uint64_t> seed, const std::string& out) {
  fedadt::RunConfig cfg = load_with_overrides(config, overrides);
  if (seed) cfg.sim.seed = *seed;
  fedadt::validate(cfg);
  const fedadt::Dataset ds = fedadt::load_training_data(cfg);
  const fedadt::PartitionSpec spec = fedadt::make_partition(cfg, ds);
  fedadt::save_partition(out, spec);
  std::cerr << "partition: " << spec.num_clients() << " clients, " << spec.distill_indices.size()
            << " distillation samples, " << spec.test_indices.size() << " test samples -> "
            << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual-time simulator for asynchronous federated learning"};
  app.require_subcommand(1);

  std::string config, out, trace, csv_out;
  std::vector<std::string> overrides, files;
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> seed;
  double target = 0.0;
  fedadt::Timestamp tg = 1000;

  auto* run = app.add_subcommand("run", "Run one simulation (or a seed sweep) and write metrics CSV");
  run->add_option("--config", config, "Configuration file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--seeds", seeds, "Seed sweep; one CSV per seed")->delimiter(',');
  run->add_option("--out", out, "Metrics CSV path");
  run->add_option("--trace", trace, "Write the event trace here");
  run->add_option("--set", overrides, "Override a config key (key=value)");

  auto* rep = app.add_subcommand("report", "Summarise metrics CSVs");
  rep->add_option("--target", target, "Target accuracy for time-to-target")->required();
  rep->add_option("--tg", tg, "Warm-up rounds T_g for the round-matched columns");
  rep->add_option("--csv", csv_out, "Also write the table as CSV");
  rep->add_option("files", files, "Metrics CSV files")->required()->check(CLI::ExistingFile);

  auto* part = app.add_subcommand("partition", "Draw and save a client partition");
  part->add_option("--config", config, "Configuration file")->required()->check(CLI::ExistingFile);
  part->add_option("--out", out, "Partition spec path")->required();
  part->add_option("--seed", seed, "Override the config seed");
  part->add_option("--set", overrides, "Override a config key (key=value)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      if (seed && !seeds.empty()) throw fedadt::ConfigError("use either --seed or --seeds");
      if (seed) seeds = {*seed};
      return cmd_run(config, overrides, seeds, out, trace);
    }
    if (*rep) return cmd_report(target, tg, csv_out, files);
    if (*part) return cmd_partition(config, overrides, seed, out);
  } catch (const fedadt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fedadt::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid setting: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
