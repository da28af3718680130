// Command-line driver: simulate trajectories, tune and run filters, reproduce
// the two benchmark studies, and benchmark step costs.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include "iskf/iskf.hpp"

namespace {

iskf::TableFormat parse_format(const std::string& format) {
  if (format == "csv") {
    return iskf::TableFormat::kCsv;
  }
  if (format == "structured") {
    return iskf::TableFormat::kStructured;
  }
  throw iskf::ConfigError("--format: expected csv or structured");
}

void print_rows(const iskf::ExperimentResult& result) {
  for (const auto& row : result.rows) {
    std::printf("%-12s state_rmse=%-12.6g improvement_over_kf=%.4g%%\n",
                row.label.c_str(), row.state_rmse, row.improvement_pct);
  }
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Iteratively saturated Kalman filtering toolkit"};
  app.require_subcommand(1);

  // ---- simulate ----
  auto* sim = app.add_subcommand(
      "simulate", "Simulate a trajectory and write it as columnar CSV");
  std::string sim_model = "vehicle";
  std::string sim_config;
  std::string sim_out = "trajectory.csv";
  std::uint64_t sim_seed = 42;
  long sim_steps = 1000;
  sim->add_option("--model", sim_model, "Builtin model: vehicle or cstr");
  sim->add_option("--config", sim_config,
                  "Config file; its model/outliers replace --model");
  sim->add_option("--seed", sim_seed, "RNG seed");
  sim->add_option("--steps", sim_steps, "Number of steps T");
  sim->add_option("--out", sim_out, "Output trajectory file");

  // ---- run ----
  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  std::string run_config;
  std::string run_out = "results";
  std::string run_format = "csv";
  std::uint64_t run_seed = 0;
  bool run_seed_set = false;
  run->add_option("--config", run_config, "Experiment config (JSON)")
      ->required();
  run->add_option("--out", run_out, "Output directory");
  run->add_option("--format", run_format, "Results table format")
      ->check(CLI::IsMember({"csv", "structured"}));
  run->add_option_function<std::uint64_t>(
         "--seed",
         [&](const std::uint64_t& v) {
           run_seed = v;
           run_seed_set = true;
         },
         "Override the config's test seed");

  // ---- tune ----
  auto* tune = app.add_subcommand(
      "tune", "Grid-search thresholds for one filter on a tuning trajectory");
  std::string tune_model = "vehicle";
  std::string tune_config;
  std::string tune_out = "tune_results";
  std::string tune_scoring = "pred_meas";
  std::string tune_filter = "iskf";
  std::uint64_t tune_seed = 0;
  int tune_k = 1;
  bool tune_eta = false;
  tune->add_option("--model", tune_model, "Builtin model: vehicle or cstr");
  tune->add_option("--config", tune_config,
                   "Config file; its model/outliers/T/grid are used");
  tune->add_option("--seed", tune_seed, "Tuning trajectory seed");
  tune->add_option("--k-tilde", tune_k, "ISKF iteration count")
      ->check(CLI::PositiveNumber);
  tune->add_flag("--eta-search", tune_eta, "Search eta jointly");
  tune->add_option("--filter", tune_filter, "Filter to tune")
      ->check(CLI::IsMember({"iskf", "huber"}));
  tune->add_option("--scoring", tune_scoring, "Cell scoring")
      ->check(CLI::IsMember({"pred_meas", "state"}));
  tune->add_option("--out", tune_out, "Output directory");

  // ---- reproduce ----
  auto* rep = app.add_subcommand(
      "reproduce", "Rerun a benchmark study end to end (tune + test)");
  std::string rep_example;
  std::string rep_out = "results";
  std::string rep_format = "csv";
  std::uint64_t rep_seed_tune = 0;
  std::uint64_t rep_seed_test = 42;
  rep->add_option("example", rep_example, "vehicle or cstr")
      ->required()
      ->check(CLI::IsMember({"vehicle", "cstr"}));
  rep->add_option("--seed-tune", rep_seed_tune, "Tuning trajectory seed");
  rep->add_option("--seed-test", rep_seed_test, "Test trajectory seed");
  rep->add_option("--out", rep_out, "Output directory");
  rep->add_option("--format", rep_format, "Results table format")
      ->check(CLI::IsMember({"csv", "structured"}));

  // ---- bench ----
  auto* bench = app.add_subcommand(
      "bench", "Time the full update against the steady-state update");
  std::string bench_out = "bench_results";
  long bench_steps = 2000;
  std::uint64_t bench_seed = 7;
  bench->add_option("--steps", bench_steps, "Timed steps per system")
      ->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_seed, "System generation seed");
  bench->add_option("--out", bench_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);  // --help
    }
    app.exit(e);
    return 2;
  }

  if (sim->parsed()) {
    iskf::SystemModel model;
    iskf::OutlierSpec spec;
    long T = sim_steps;
    if (!sim_config.empty()) {
      const iskf::ExperimentConfig cfg =
          iskf::load_experiment_config(sim_config);
      model = cfg.model;
      spec = cfg.outliers;
      if (sim->count("--steps") == 0) {
        T = cfg.T;
      }
    } else if (sim_model == "vehicle") {
      std::tie(model, spec) = iskf::vehicle_model();
    } else if (sim_model == "cstr") {
      std::tie(model, spec) = iskf::cstr_model();
    } else {
      throw iskf::ConfigError("--model: expected vehicle or cstr");
    }
    const iskf::Trajectory traj = iskf::simulate(model, spec, T, sim_seed);
    iskf::write_trajectory_csv(sim_out, traj);
    std::printf("wrote %s (T=%ld, seed=%llu)\n", sim_out.c_str(), T,
                static_cast<unsigned long long>(sim_seed));
    return 0;
  }

  if (run->parsed()) {
    iskf::ExperimentConfig cfg = iskf::load_experiment_config(run_config);
    if (run_seed_set) {
      cfg.seed_test = run_seed;
      cfg.raw["seeds"]["test"] = run_seed;
    }
    const auto result =
        iskf::run_experiment(cfg, run_out, parse_format(run_format));
    print_rows(result);
    std::printf("wrote %zu files to %s\n", result.files.size(),
                run_out.c_str());
    return 0;
  }

  if (tune->parsed()) {
    iskf::SystemModel model;
    iskf::OutlierSpec spec;
    iskf::GridSpec grid;
    long T = 1000;
    if (!tune_config.empty()) {
      const iskf::ExperimentConfig cfg =
          iskf::load_experiment_config(tune_config);
      model = cfg.model;
      spec = cfg.outliers;
      grid = cfg.grid;
      T = cfg.T;
    } else if (tune_model == "vehicle") {
      std::tie(model, spec) = iskf::vehicle_model();
    } else if (tune_model == "cstr") {
      std::tie(model, spec) = iskf::cstr_model();
    } else {
      throw iskf::ConfigError("--model: expected vehicle or cstr");
    }
    const iskf::GainSet gains = iskf::solve_steady(model);
    const iskf::Trajectory traj = iskf::simulate(model, spec, T, tune_seed);
    const iskf::ScoringMode scoring =
        tune_scoring == "state" ? iskf::ScoringMode::kStateRmse
                                : iskf::ScoringMode::kPredictedMeasurement;
    iskf::FilterRunner runner;
    if (tune_filter == "huber") {
      runner = [&gains](const iskf::IskfParams& p,
                        const std::vector<Eigen::VectorXd>& ys) {
        return iskf::run_huberized(ys, gains, p);
      };
    } else {
      runner = [&gains](const iskf::IskfParams& p,
                        const std::vector<Eigen::VectorXd>& ys) {
        return iskf::run_ss_iskf(ys, gains, p);
      };
    }
    const bool with_eta = tune_filter == "iskf" && tune_eta;
    const iskf::TuneResult tuned =
        iskf::grid_search(runner, grid.make(tune_k, with_eta), traj, model,
                          scoring, true);
    namespace fs = std::filesystem;
    fs::create_directories(tune_out);
    const std::string label =
        tune_filter == "huber" ? "huber" : "iskf_k" + std::to_string(tune_k);
    iskf::detail::write_grid_csv(
        (fs::path(tune_out) / ("grid_" + label + ".csv")).string(), tuned);
    iskf::Json best;
    best["filter"] = tune_filter;
    best["scoring"] = tune_scoring;
    best["seed"] = tune_seed;
    best["best_params"] =
        iskf::Json{{"lambda_x", iskf::format_double(tuned.best_params.lambda_x())},
                   {"lambda_y", iskf::format_double(tuned.best_params.lambda_y())},
                   {"k_tilde", tuned.best_params.k_tilde()},
                   {"eta", iskf::format_double(tuned.best_params.eta())}};
    best["best_score"] = tuned.best_score;
    std::ofstream out((fs::path(tune_out) / "selected.json").string());
    out << best.dump(2) << '\n';
    std::printf("best: lambda_x=%.6g lambda_y=%.6g eta=%.6g score=%.6g\n",
                tuned.best_params.lambda_x(), tuned.best_params.lambda_y(),
                tuned.best_params.eta(), tuned.best_score);
    return 0;
  }

  if (rep->parsed()) {
    const auto result = iskf::cmd_reproduce(rep_example, rep_seed_tune,
                                            rep_seed_test, rep_out,
                                            parse_format(rep_format));
    print_rows(result);
    std::printf("wrote %zu files to %s\n", result.files.size(),
                rep_out.c_str());
    return 0;
  }

  if (bench->parsed()) {
    const auto rows = iskf::cmd_bench(bench_out, bench_steps, bench_seed);
    for (const auto& r : rows) {
      std::printf("n=%-4d p=%-3d tv=%.3f us  ss=%.3f us  speedup=%.1fx\n", r.n,
                  r.p, r.tv_us_median, r.ss_us_median, r.speedup);
    }
    return 0;
  }

  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const iskf::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const iskf::Error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
