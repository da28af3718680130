#pragma once

#include <json.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "iskf/errors.hpp"
#include "iskf/filters.hpp"
#include "iskf/io.hpp"
#include "iskf/model.hpp"
#include "iskf/riccati.hpp"
#include "iskf/sim.hpp"
#include "iskf/tune.hpp"
#include "iskf/version.hpp"

namespace iskf {

using Json = nlohmann::json;

// Pipeline-wide solver settings, recorded in every manifest.
inline constexpr double kRiccatiTol = 1e-12;
inline constexpr long kRiccatiMaxIter = 1000000;
inline constexpr double kHuberTol = 1e-10;
inline constexpr long kHuberMaxIter = 100000;

// ---------------------------------------------------------------------------
// Whole-sequence filter runners. Each returns the posterior estimates
// xhat_{0|0}..xhat_{N|N} (N + 1 entries; the first is the initial state).
// ---------------------------------------------------------------------------

inline std::vector<Eigen::VectorXd> run_ss_kf(
    const std::vector<Eigen::VectorXd>& measurements, const GainSet& gains) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(measurements.size() + 1);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(gains.A.rows());
  out.push_back(x);
  for (const auto& y : measurements) {
    x = ss_kf_step(x, y, gains);
    out.push_back(x);
  }
  return out;
}

inline std::vector<Eigen::VectorXd> run_ss_iskf(
    const std::vector<Eigen::VectorXd>& measurements, const GainSet& gains,
    const IskfParams& params) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(measurements.size() + 1);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(gains.A.rows());
  out.push_back(x);
  for (const auto& y : measurements) {
    x = ss_iskf_step(x, y, gains, params);
    out.push_back(x);
  }
  return out;
}

inline std::vector<Eigen::VectorXd> run_tv_kf(
    const std::vector<Eigen::VectorXd>& measurements, const SystemModel& model,
    const GainSet& gains) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(measurements.size() + 1);
  FilterState state = initial_state(gains);
  out.push_back(state.x_hat);
  for (const auto& y : measurements) {
    state = kf_step(state, y, model);
    out.push_back(state.x_hat);
  }
  return out;
}

inline std::vector<Eigen::VectorXd> run_tv_iskf(
    const std::vector<Eigen::VectorXd>& measurements, const SystemModel& model,
    const GainSet& gains, const IskfParams& params) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(measurements.size() + 1);
  FilterState state = initial_state(gains);
  out.push_back(state.x_hat);
  for (const auto& y : measurements) {
    state = iskf_step(state, y, model, params);
    out.push_back(state.x_hat);
  }
  return out;
}

/// Converged robust estimate at every step (the reference the ISKF truncates).
inline std::vector<Eigen::VectorXd> run_huberized(
    const std::vector<Eigen::VectorXd>& measurements, const GainSet& gains,
    const IskfParams& params, double tol = kHuberTol,
    long max_iter = kHuberMaxIter) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(measurements.size() + 1);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(gains.A.rows());
  out.push_back(x);
  for (const auto& y : measurements) {
    x = huberized_solve(gains.A * x, y, gains, params, tol, max_iter);
    out.push_back(x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration: a small JSON schema, strictly validated. Unknown
// fields are rejected with their path so typos cannot silently change a run.
// ---------------------------------------------------------------------------

struct FilterChoice {
  std::string name;   // "kf" | "iskf" | "huber"
  std::string label;  // unique key used in output filenames and tables
  bool tuned = false;
  int k_tilde = 1;    // iskf only
  double eta = 1.0;   // iskf only
  double lambda_x = kInfiniteThreshold;
  double lambda_y = kInfiniteThreshold;
};

struct GridSpec {
  double lambda_lo = 0.1;
  double lambda_hi = 10.0;
  int lambda_count = 20;
  bool eta_search = false;
  double eta_lo = 0.1;
  double eta_hi = 100.0;
  int eta_count = 20;

  // with_eta overrides eta_search (the huberized reference pins eta = 1).
  TuneGrid make(int k_tilde, bool with_eta) const {
    TuneGrid grid;
    grid.k_tilde = k_tilde;
    grid.lambda_x_values = lambda_count == 1
                               ? std::vector<double>{lambda_lo}
                               : log_spaced(lambda_lo, lambda_hi, lambda_count);
    grid.lambda_y_values = grid.lambda_x_values;
    if (with_eta) {
      grid.eta_values = eta_count == 1
                            ? std::vector<double>{eta_lo}
                            : log_spaced(eta_lo, eta_hi, eta_count);
    }
    return grid;
  }
};

struct ExperimentConfig {
  std::string model_name;  // "vehicle" | "cstr" | "inline"
  SystemModel model;
  OutlierSpec outliers{0.0, 1.0, 0.0, 1.0};
  long T = 1000;
  std::uint64_t seed_tune = 0;
  std::uint64_t seed_test = 42;
  std::vector<FilterChoice> filters;
  GridSpec grid;
  ScoringMode scoring = ScoringMode::kPredictedMeasurement;
  std::vector<int> k_sweep;
  std::string trajectory_file;  // optional replacement for the test data
  Json raw;                     // config as given, embedded in the manifest
};

namespace detail {

inline void reject_unknown_fields(const Json& j, const std::string& path,
                                  std::initializer_list<const char*> allowed) {
  if (!j.is_object()) {
    throw ConfigError(path + ": expected an object");
  }
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (item.key() == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("unknown field: " + path + "." + item.key());
    }
  }
}

inline double as_double(const Json& v, const std::string& path) {
  if (!v.is_number()) {
    throw ConfigError(path + ": expected a number");
  }
  return v.get<double>();
}

/// Numbers or the strings accepted by parse_double ("inf" in particular).
inline double as_threshold(const Json& v, const std::string& path) {
  if (v.is_string()) {
    try {
      return parse_double(v.get<std::string>());
    } catch (const ConfigError&) {
      throw ConfigError(path + ": expected a number or \"inf\"");
    }
  }
  return as_double(v, path);
}

inline long as_integer(const Json& v, const std::string& path) {
  if (!v.is_number_integer()) {
    throw ConfigError(path + ": expected an integer");
  }
  return v.get<long>();
}

inline std::uint64_t as_seed(const Json& v, const std::string& path) {
  if (v.is_number_unsigned()) {
    return v.get<std::uint64_t>();
  }
  if (v.is_number_integer() && v.get<long long>() >= 0) {
    return static_cast<std::uint64_t>(v.get<long long>());
  }
  throw ConfigError(path + ": expected a nonnegative integer");
}

inline bool as_bool(const Json& v, const std::string& path) {
  if (!v.is_boolean()) {
    throw ConfigError(path + ": expected a boolean");
  }
  return v.get<bool>();
}

inline std::string as_string(const Json& v, const std::string& path) {
  if (!v.is_string()) {
    throw ConfigError(path + ": expected a string");
  }
  return v.get<std::string>();
}

inline Eigen::MatrixXd matrix_from_json(const Json& v,
                                        const std::string& path) {
  if (!v.is_array() || v.empty()) {
    throw ConfigError(path + ": expected a nonempty array of rows");
  }
  const std::size_t rows = v.size();
  if (!v[0].is_array() || v[0].empty()) {
    throw ConfigError(path + "[0]: expected a nonempty row array");
  }
  const std::size_t cols = v[0].size();
  Eigen::MatrixXd M(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!v[r].is_array() || v[r].size() != cols) {
      throw ConfigError(path + "[" + std::to_string(r) + "]: ragged row");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      M(r, c) = as_double(v[r][c], path + "[" + std::to_string(r) + "][" +
                                       std::to_string(c) + "]");
    }
  }
  return M;
}

inline Json matrix_to_json(const Eigen::MatrixXd& M) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) {
      row.push_back(M(r, c));
    }
    rows.push_back(row);
  }
  return rows;
}

inline FilterChoice parse_filter(const Json& j, const std::string& path) {
  if (!j.is_object() || !j.contains("name")) {
    throw ConfigError(path + ": expected an object with a \"name\"");
  }
  FilterChoice f;
  f.name = as_string(j["name"], path + ".name");
  if (f.name == "kf") {
    reject_unknown_fields(j, path, {"name", "label"});
  } else if (f.name == "iskf") {
    reject_unknown_fields(
        j, path,
        {"name", "label", "tuned", "k_tilde", "eta", "lambda_x", "lambda_y"});
  } else if (f.name == "huber") {
    reject_unknown_fields(j, path,
                          {"name", "label", "tuned", "lambda_x", "lambda_y"});
  } else {
    throw ConfigError(path + ".name: unknown filter '" + f.name +
                      "' (expected kf, iskf, or huber)");
  }
  if (j.contains("tuned")) {
    f.tuned = as_bool(j["tuned"], path + ".tuned");
  }
  if (j.contains("k_tilde")) {
    f.k_tilde = static_cast<int>(as_integer(j["k_tilde"], path + ".k_tilde"));
    if (f.k_tilde < 1) {
      throw ConfigError(path + ".k_tilde: must be >= 1");
    }
  }
  if (j.contains("eta")) {
    f.eta = as_double(j["eta"], path + ".eta");
  }
  const bool has_lx = j.contains("lambda_x");
  const bool has_ly = j.contains("lambda_y");
  if (f.tuned && (has_lx || has_ly)) {
    throw ConfigError(path + ": lambda fields conflict with tuned=true");
  }
  if (f.name != "kf" && !f.tuned && !(has_lx && has_ly)) {
    throw ConfigError(path +
                      ": lambda_x and lambda_y are required unless tuned");
  }
  if (has_lx) {
    f.lambda_x = as_threshold(j["lambda_x"], path + ".lambda_x");
  }
  if (has_ly) {
    f.lambda_y = as_threshold(j["lambda_y"], path + ".lambda_y");
  }
  if (j.contains("label")) {
    f.label = as_string(j["label"], path + ".label");
  } else if (f.name == "iskf") {
    f.label = "iskf_k" + std::to_string(f.k_tilde);
  } else {
    f.label = f.name;
  }
  return f;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const Json& j) {
  using detail::as_bool;
  using detail::as_double;
  using detail::as_integer;
  using detail::as_seed;
  using detail::as_string;
  using detail::reject_unknown_fields;

  reject_unknown_fields(j, "$",
                        {"model", "outliers", "T", "seeds", "filters", "grid",
                         "scoring", "k_sweep", "trajectory_file"});
  ExperimentConfig cfg;
  cfg.raw = j;

  if (!j.contains("model")) {
    throw ConfigError("missing field: $.model");
  }
  const Json& jm = j["model"];
  bool builtin_outliers = false;
  if (jm.is_object() && jm.contains("builtin")) {
    reject_unknown_fields(jm, "$.model", {"builtin"});
    const std::string which = as_string(jm["builtin"], "$.model.builtin");
    if (which == "vehicle") {
      auto [model, spec] = vehicle_model();
      cfg.model = std::move(model);
      cfg.outliers = spec;
    } else if (which == "cstr") {
      auto [model, spec] = cstr_model();
      cfg.model = std::move(model);
      cfg.outliers = spec;
    } else {
      throw ConfigError("$.model.builtin: expected \"vehicle\" or \"cstr\"");
    }
    cfg.model_name = which;
    builtin_outliers = true;
  } else {
    reject_unknown_fields(jm, "$.model", {"A", "C", "F", "G"});
    for (const char* key : {"A", "C", "F", "G"}) {
      if (!jm.contains(key)) {
        throw ConfigError(std::string("missing field: $.model.") + key);
      }
    }
    cfg.model = build_model(detail::matrix_from_json(jm["A"], "$.model.A"),
                            detail::matrix_from_json(jm["C"], "$.model.C"),
                            detail::matrix_from_json(jm["F"], "$.model.F"),
                            detail::matrix_from_json(jm["G"], "$.model.G"));
    cfg.model_name = "inline";
  }

  if (j.contains("outliers")) {
    const Json& jo = j["outliers"];
    reject_unknown_fields(
        jo, "$.outliers",
        {"p_process", "scale_process", "p_meas", "scale_meas"});
    for (const char* key :
         {"p_process", "scale_process", "p_meas", "scale_meas"}) {
      if (!jo.contains(key)) {
        throw ConfigError(std::string("missing field: $.outliers.") + key);
      }
    }
    try {
      cfg.outliers =
          OutlierSpec(as_double(jo["p_process"], "$.outliers.p_process"),
                      as_double(jo["scale_process"], "$.outliers.scale_process"),
                      as_double(jo["p_meas"], "$.outliers.p_meas"),
                      as_double(jo["scale_meas"], "$.outliers.scale_meas"));
    } catch (const InvalidParameter& e) {
      throw ConfigError(std::string("$.outliers: ") + e.what());
    }
  } else if (!builtin_outliers) {
    cfg.outliers = OutlierSpec(0.0, 1.0, 0.0, 1.0);
  }

  if (j.contains("T")) {
    cfg.T = as_integer(j["T"], "$.T");
    if (cfg.T < 1) {
      throw ConfigError("$.T: must be >= 1");
    }
  }

  if (j.contains("seeds")) {
    const Json& js = j["seeds"];
    reject_unknown_fields(js, "$.seeds", {"tune", "test"});
    if (js.contains("tune")) {
      cfg.seed_tune = as_seed(js["tune"], "$.seeds.tune");
    }
    if (js.contains("test")) {
      cfg.seed_test = as_seed(js["test"], "$.seeds.test");
    }
  }

  if (!j.contains("filters") || !j["filters"].is_array() ||
      j["filters"].empty()) {
    throw ConfigError("$.filters: expected a nonempty array");
  }
  for (std::size_t i = 0; i < j["filters"].size(); ++i) {
    cfg.filters.push_back(detail::parse_filter(
        j["filters"][i], "$.filters[" + std::to_string(i) + "]"));
  }
  for (std::size_t i = 0; i < cfg.filters.size(); ++i) {
    for (std::size_t k = i + 1; k < cfg.filters.size(); ++k) {
      if (cfg.filters[i].label == cfg.filters[k].label) {
        throw ConfigError("$.filters[" + std::to_string(k) +
                          "]: duplicate label '" + cfg.filters[k].label +
                          "'; set a unique \"label\"");
      }
    }
  }

  if (j.contains("grid")) {
    const Json& jg = j["grid"];
    reject_unknown_fields(jg, "$.grid",
                          {"lambda_lo", "lambda_hi", "lambda_count",
                           "eta_search", "eta_lo", "eta_hi", "eta_count"});
    if (jg.contains("lambda_lo")) {
      cfg.grid.lambda_lo = as_double(jg["lambda_lo"], "$.grid.lambda_lo");
    }
    if (jg.contains("lambda_hi")) {
      cfg.grid.lambda_hi = as_double(jg["lambda_hi"], "$.grid.lambda_hi");
    }
    if (jg.contains("lambda_count")) {
      cfg.grid.lambda_count =
          static_cast<int>(as_integer(jg["lambda_count"], "$.grid.lambda_count"));
    }
    if (jg.contains("eta_search")) {
      cfg.grid.eta_search = as_bool(jg["eta_search"], "$.grid.eta_search");
    }
    if (jg.contains("eta_lo")) {
      cfg.grid.eta_lo = as_double(jg["eta_lo"], "$.grid.eta_lo");
    }
    if (jg.contains("eta_hi")) {
      cfg.grid.eta_hi = as_double(jg["eta_hi"], "$.grid.eta_hi");
    }
    if (jg.contains("eta_count")) {
      cfg.grid.eta_count =
          static_cast<int>(as_integer(jg["eta_count"], "$.grid.eta_count"));
    }
    if (!(cfg.grid.lambda_lo > 0.0) || cfg.grid.lambda_count < 1 ||
        (cfg.grid.lambda_count > 1 &&
         !(cfg.grid.lambda_hi > cfg.grid.lambda_lo))) {
      throw ConfigError("$.grid: lambda grid must be positive with lo < hi");
    }
    if (!(cfg.grid.eta_lo > 0.0) || cfg.grid.eta_count < 1 ||
        (cfg.grid.eta_count > 1 && !(cfg.grid.eta_hi > cfg.grid.eta_lo))) {
      throw ConfigError("$.grid: eta grid must be positive with lo < hi");
    }
  }

  if (j.contains("scoring")) {
    const std::string s = as_string(j["scoring"], "$.scoring");
    if (s == "pred_meas") {
      cfg.scoring = ScoringMode::kPredictedMeasurement;
    } else if (s == "state") {
      cfg.scoring = ScoringMode::kStateRmse;
    } else {
      throw ConfigError("$.scoring: expected \"pred_meas\" or \"state\"");
    }
  }

  if (j.contains("k_sweep")) {
    if (!j["k_sweep"].is_array() || j["k_sweep"].empty()) {
      throw ConfigError("$.k_sweep: expected a nonempty array of integers");
    }
    for (std::size_t i = 0; i < j["k_sweep"].size(); ++i) {
      const long k = as_integer(j["k_sweep"][i],
                                "$.k_sweep[" + std::to_string(i) + "]");
      if (k < 1) {
        throw ConfigError("$.k_sweep[" + std::to_string(i) +
                          "]: must be >= 1");
      }
      cfg.k_sweep.push_back(static_cast<int>(k));
    }
  }

  if (j.contains("trajectory_file")) {
    cfg.trajectory_file = as_string(j["trajectory_file"], "$.trajectory_file");
  }
  return cfg;
}

/// Reads a config file. A file holding a manifest (recognized by its "config"
/// key) is accepted too: the embedded config is used, which is what makes a
/// manifest re-runnable.
inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file: " + path);
  }
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  if (j.is_object() && j.contains("config") && j.contains("format")) {
    return parse_experiment_config(j["config"]);
  }
  return parse_experiment_config(j);
}

// ---------------------------------------------------------------------------
// Experiment pipeline.
// ---------------------------------------------------------------------------

enum class TableFormat { kCsv, kStructured };

struct ResultRow {
  std::string label;
  std::string kind;  // kf | iskf | huber
  IskfParams params;
  double state_rmse = 0.0;
  double pred_rmse = 0.0;
  double improvement_pct = std::numeric_limits<double>::quiet_NaN();
};

struct SweepRow {
  int k_tilde = 1;
  IskfParams params;
  double best_state_rmse = 0.0;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<SweepRow> sweep;
  std::vector<std::string> files;  // relative names written to out_dir
};

namespace detail {

inline std::vector<std::string> result_row_cells(const ResultRow& row) {
  return {row.label,
          format_double(row.params.lambda_x()),
          format_double(row.params.lambda_y()),
          row.kind == "huber" ? "nan" : std::to_string(row.params.k_tilde()),
          format_double(row.params.eta()),
          format_double(row.state_rmse),
          format_double(row.pred_rmse),
          format_double(row.improvement_pct)};
}

inline const std::vector<std::string>& result_header() {
  static const std::vector<std::string> header = {
      "method",     "lambda_x",       "lambda_y",
      "k_tilde",    "eta",            "state_rmse",
      "pred_meas_rmse", "improvement_over_kf_pct"};
  return header;
}

inline void write_grid_csv(const std::string& path, const TuneResult& tuned) {
  CsvTable table;
  table.header = {"lambda_x", "lambda_y", "eta", "score"};
  for (const auto& cell : tuned.table) {
    table.rows.push_back({format_double(cell.params.lambda_x()),
                          format_double(cell.params.lambda_y()),
                          format_double(cell.params.eta()),
                          format_double(cell.score)});
  }
  write_csv(path, table);
}

}  // namespace detail

/// Runs the configured pipeline and writes the full file set into out_dir:
/// the results table, one trace per filter, one grid table per tuned filter,
/// the iteration sweep when requested, the test trajectory, and a manifest
/// that embeds the config (so the manifest itself re-runs the experiment).
/// All outputs are deterministic functions of the config.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::string& out_dir,
                                       TableFormat format = TableFormat::kCsv) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const auto in_dir = [&out_dir](const std::string& name) {
    return (fs::path(out_dir) / name).string();
  };

  const SystemModel& model = cfg.model;
  const GainSet gains = solve_steady(model, kRiccatiTol, kRiccatiMaxIter);

  const Trajectory test_traj =
      cfg.trajectory_file.empty()
          ? simulate(model, cfg.outliers, cfg.T, cfg.seed_test)
          : read_trajectory_csv(cfg.trajectory_file);

  bool needs_tuning = !cfg.k_sweep.empty();
  for (const auto& f : cfg.filters) {
    needs_tuning = needs_tuning || f.tuned;
  }
  std::optional<Trajectory> tune_traj;
  if (needs_tuning) {
    tune_traj = simulate(model, cfg.outliers, cfg.T, cfg.seed_tune);
  }

  const FilterRunner iskf_runner =
      [&gains](const IskfParams& p, const std::vector<Eigen::VectorXd>& ys) {
        return run_ss_iskf(ys, gains, p);
      };
  const FilterRunner huber_runner =
      [&gains](const IskfParams& p, const std::vector<Eigen::VectorXd>& ys) {
        return run_huberized(ys, gains, p);
      };

  ExperimentResult result;
  Json selected = Json::object();

  const std::vector<Eigen::VectorXd> truth(test_traj.states.begin() + 1,
                                           test_traj.states.end());
  for (const auto& f : cfg.filters) {
    ResultRow row;
    row.label = f.label;
    row.kind = f.name;
    if (f.name == "kf") {
      row.params = IskfParams();
    } else if (f.tuned) {
      const bool with_eta = f.name == "iskf" && cfg.grid.eta_search;
      const TuneGrid grid = cfg.grid.make(f.k_tilde, with_eta);
      const TuneResult tuned = grid_search(
          f.name == "huber" ? huber_runner : iskf_runner, grid, *tune_traj,
          model, cfg.scoring, true);
      row.params = tuned.best_params;
      const std::string grid_file = "grid_" + f.label + ".csv";
      detail::write_grid_csv(in_dir(grid_file), tuned);
      result.files.push_back(grid_file);
    } else {
      row.params = IskfParams(f.lambda_x, f.lambda_y, f.k_tilde, f.eta);
    }

    std::vector<Eigen::VectorXd> estimates;
    if (f.name == "kf") {
      estimates = run_ss_kf(test_traj.measurements, gains);
    } else if (f.name == "huber") {
      estimates = run_huberized(test_traj.measurements, gains, row.params);
    } else {
      estimates = run_ss_iskf(test_traj.measurements, gains, row.params);
    }

    const std::vector<Eigen::VectorXd> posterior(estimates.begin() + 1,
                                                 estimates.end());
    row.state_rmse = state_rmse(truth, posterior);
    const std::vector<Eigen::VectorXd> prior(estimates.begin(),
                                             estimates.end() - 1);
    row.pred_rmse = pred_meas_rmse(model, prior, test_traj.measurements);

    const std::string trace_file = "trace_" + f.label + ".csv";
    write_trace_csv(in_dir(trace_file), estimates, test_traj.states);
    result.files.push_back(trace_file);

    selected[f.label] = Json{
        {"lambda_x", format_double(row.params.lambda_x())},
        {"lambda_y", format_double(row.params.lambda_y())},
        {"k_tilde", row.params.k_tilde()},
        {"eta", format_double(row.params.eta())}};
    result.rows.push_back(std::move(row));
  }

  double kf_rmse = std::numeric_limits<double>::quiet_NaN();
  for (const auto& row : result.rows) {
    if (row.kind == "kf") {
      kf_rmse = row.state_rmse;
      break;
    }
  }
  if (std::isfinite(kf_rmse) && kf_rmse > 0.0) {
    for (auto& row : result.rows) {
      row.improvement_pct = 100.0 * (kf_rmse - row.state_rmse) / kf_rmse;
    }
  }

  // Iteration sweep: per k_tilde, the grid-best state RMSE on the tuning
  // trajectory with eta = 1. State scoring is what the sweep is about; the
  // column records it.
  if (!cfg.k_sweep.empty()) {
    CsvTable sweep_table;
    sweep_table.header = {"k_tilde", "lambda_x", "lambda_y",
                          "eta",     "best_state_rmse", "scoring"};
    for (int k : cfg.k_sweep) {
      const TuneResult tuned =
          grid_search(iskf_runner, cfg.grid.make(k, false), *tune_traj, model,
                      ScoringMode::kStateRmse, true);
      result.sweep.push_back({k, tuned.best_params, tuned.best_score});
      sweep_table.rows.push_back(
          {std::to_string(k), format_double(tuned.best_params.lambda_x()),
           format_double(tuned.best_params.lambda_y()),
           format_double(tuned.best_params.eta()),
           format_double(tuned.best_score), "state"});
    }
    write_csv(in_dir("sweep.csv"), sweep_table);
    result.files.push_back("sweep.csv");
  }

  write_trajectory_csv(in_dir("test_trajectory.csv"), test_traj);
  result.files.push_back("test_trajectory.csv");

  std::vector<std::vector<std::string>> table_rows;
  table_rows.reserve(result.rows.size());
  for (const auto& row : result.rows) {
    table_rows.push_back(detail::result_row_cells(row));
  }
  if (format == TableFormat::kCsv) {
    CsvTable table;
    table.header = detail::result_header();
    table.rows = table_rows;
    write_csv(in_dir("results.csv"), table);
    result.files.push_back("results.csv");
  } else {
    Json rows = Json::array();
    for (const auto& cells : table_rows) {
      Json obj = Json::object();
      for (std::size_t i = 0; i < cells.size(); ++i) {
        obj[detail::result_header()[i]] = cells[i];
      }
      rows.push_back(obj);
    }
    std::ofstream out(in_dir("results.json"));
    if (!out) {
      throw Error("cannot open for writing: " + in_dir("results.json"));
    }
    out << Json{{"rows", rows}}.dump(2) << '\n';
    result.files.push_back("results.json");
  }

  Json manifest;
  manifest["format"] = "iskf-manifest-v1";
  manifest["version"] = kVersionString;
  manifest["config"] = cfg.raw;
  manifest["tolerances"] = Json{{"riccati_tol", kRiccatiTol},
                                {"riccati_max_iter", kRiccatiMaxIter},
                                {"huber_tol", kHuberTol},
                                {"huber_max_iter", kHuberMaxIter}};
  manifest["scoring"] = cfg.scoring == ScoringMode::kPredictedMeasurement
                            ? "pred_meas"
                            : "state";
  manifest["selected_params"] = selected;
  manifest["model_matrices"] = Json{{"A", detail::matrix_to_json(model.A)},
                                    {"C", detail::matrix_to_json(model.C)},
                                    {"F", detail::matrix_to_json(model.F)},
                                    {"G", detail::matrix_to_json(model.G)}};
  manifest["gains"] = Json{{"P", detail::matrix_to_json(gains.P)},
                           {"Sigma", detail::matrix_to_json(gains.Sigma)},
                           {"K", detail::matrix_to_json(gains.K)}};
  Json results_json = Json::array();
  for (const auto& cells : table_rows) {
    Json obj = Json::object();
    for (std::size_t i = 0; i < cells.size(); ++i) {
      obj[detail::result_header()[i]] = cells[i];
    }
    results_json.push_back(obj);
  }
  manifest["results"] = results_json;
  result.files.push_back("manifest.json");
  manifest["files"] = result.files;
  {
    std::ofstream out(in_dir("manifest.json"));
    if (!out) {
      throw Error("cannot open for writing: " + in_dir("manifest.json"));
    }
    out << manifest.dump(2) << '\n';
  }
  return result;
}

/// Canonical config of the benchmark reproduction: KF baseline, tuned ISKF at
/// one to three iterations, and the tuned converged reference, evaluated on a
/// fresh test trajectory.
inline Json reproduce_config(const std::string& example,
                             std::uint64_t seed_tune, std::uint64_t seed_test) {
  if (example != "vehicle" && example != "cstr") {
    throw ConfigError("reproduce: expected \"vehicle\" or \"cstr\"");
  }
  Json j;
  j["model"] = Json{{"builtin", example}};
  j["T"] = 1000;
  j["seeds"] = Json{{"tune", seed_tune}, {"test", seed_test}};
  j["filters"] = Json::array({Json{{"name", "kf"}},
                              Json{{"name", "iskf"}, {"k_tilde", 1}, {"tuned", true}},
                              Json{{"name", "iskf"}, {"k_tilde", 2}, {"tuned", true}},
                              Json{{"name", "iskf"}, {"k_tilde", 3}, {"tuned", true}},
                              Json{{"name", "huber"}, {"tuned", true}}});
  return j;
}

inline ExperimentResult cmd_reproduce(const std::string& example,
                                      std::uint64_t seed_tune,
                                      std::uint64_t seed_test,
                                      const std::string& out_dir,
                                      TableFormat format = TableFormat::kCsv) {
  const Json j = reproduce_config(example, seed_tune, seed_test);
  return run_experiment(parse_experiment_config(j), out_dir, format);
}

// ---------------------------------------------------------------------------
// Step-cost benchmark: full time-varying update (refactorizes each step)
// against the steady-state update (cached factors only).
// ---------------------------------------------------------------------------

struct BenchRow {
  int n = 0;
  int p = 0;
  int k_tilde = 2;
  long steps = 0;
  double tv_us_median = 0.0;
  double ss_us_median = 0.0;
  double speedup = 0.0;
};

/// Random detectable/stabilizable test system: dense A scaled to spectral
/// radius 0.6, dense C, W = 0.25 I, V = I.
inline SystemModel random_stable_model(int n, int p, std::uint64_t seed) {
  if (n < 1 || p < 1) {
    throw InvalidParameter("random_stable_model: n and p must be >= 1");
  }
  detail::NoiseStream rng(seed);
  Eigen::MatrixXd A(n, n);
  for (Eigen::Index i = 0; i < A.size(); ++i) {
    A(i) = rng.gaussian();
  }
  const double radius =
      A.eigenvalues().cwiseAbs().maxCoeff();
  if (radius > 0.0) {
    A *= 0.6 / radius;
  }
  Eigen::MatrixXd C(p, n);
  for (Eigen::Index i = 0; i < C.size(); ++i) {
    C(i) = rng.gaussian();
  }
  const Eigen::MatrixXd F = 0.5 * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd G = Eigen::MatrixXd::Identity(p, p);
  return build_model(A, C, F, G);
}

inline BenchRow bench_step_times(int n, int p, int k_tilde, long steps,
                                 std::uint64_t seed) {
  if (steps < 1) {
    throw InvalidParameter("bench_step_times: steps must be >= 1");
  }
  const SystemModel model = random_stable_model(n, p, seed);
  const GainSet gains = solve_steady(model);
  const IskfParams params(1.0, 1.0, k_tilde, 1.0);

  detail::NoiseStream rng(seed + 1);
  std::vector<Eigen::VectorXd> ys;
  ys.reserve(steps);
  for (long t = 0; t < steps; ++t) {
    ys.push_back(rng.gaussian_vector(p));
  }

  using Clock = std::chrono::steady_clock;
  const auto median_us = [](std::vector<double>& v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    return v[mid];
  };

  std::vector<double> tv_times(steps);
  {
    FilterState state = initial_state(gains);
    for (int w = 0; w < 4; ++w) {
      state = iskf_step(state, ys[0], model, params);  // warm up
    }
    state = initial_state(gains);
    for (long t = 0; t < steps; ++t) {
      const auto t0 = Clock::now();
      state = iskf_step(state, ys[t], model, params);
      const auto t1 = Clock::now();
      tv_times[t] =
          std::chrono::duration<double, std::micro>(t1 - t0).count();
    }
  }

  std::vector<double> ss_times(steps);
  {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int w = 0; w < 4; ++w) {
      x = ss_iskf_step(x, ys[0], gains, params);
    }
    x.setZero();
    for (long t = 0; t < steps; ++t) {
      const auto t0 = Clock::now();
      x = ss_iskf_step(x, ys[t], gains, params);
      const auto t1 = Clock::now();
      ss_times[t] =
          std::chrono::duration<double, std::micro>(t1 - t0).count();
    }
  }

  BenchRow row;
  row.n = n;
  row.p = p;
  row.k_tilde = k_tilde;
  row.steps = steps;
  row.tv_us_median = median_us(tv_times);
  row.ss_us_median = median_us(ss_times);
  row.speedup = row.ss_us_median > 0.0 ? row.tv_us_median / row.ss_us_median
                                       : std::numeric_limits<double>::infinity();
  return row;
}

inline std::vector<BenchRow> cmd_bench(const std::string& out_dir,
                                       long steps = 2000,
                                       std::uint64_t seed = 7) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<BenchRow> rows;
  for (int n : {10, 50, 100}) {
    rows.push_back(bench_step_times(n, std::max(1, n / 10), 2, steps, seed));
  }
  CsvTable table;
  table.header = {"n",      "p",           "k_tilde",     "steps",
                  "tv_us_median", "ss_us_median", "speedup"};
  for (const auto& r : rows) {
    table.rows.push_back({std::to_string(r.n), std::to_string(r.p),
                          std::to_string(r.k_tilde), std::to_string(r.steps),
                          format_double(r.tv_us_median),
                          format_double(r.ss_us_median),
                          format_double(r.speedup)});
  }
  write_csv((fs::path(out_dir) / "bench.csv").string(), table);
  return rows;
}

}  // namespace iskf
