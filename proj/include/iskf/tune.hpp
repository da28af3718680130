#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <thread>
#include <vector>

#include "iskf/errors.hpp"
#include "iskf/filters.hpp"
#include "iskf/model.hpp"
#include "iskf/sim.hpp"

namespace iskf {

/// count values logarithmically spaced on [lo, hi].
inline std::vector<double> log_spaced(double lo, double hi, int count) {
  if (!(lo > 0.0 && hi > lo) || count < 2) {
    throw InvalidParameter("log_spaced requires 0 < lo < hi and count >= 2");
  }
  std::vector<double> out(count);
  const double step = (std::log(hi) - std::log(lo)) / (count - 1);
  for (int i = 0; i < count; ++i) {
    out[i] = std::exp(std::log(lo) + step * i);
  }
  return out;
}

/// Search grid over the saturation thresholds and optionally the step size.
/// Defaults follow the usual practice: 20 points log-spaced on [0.1, 10] for
/// each threshold; the step-size search, when enabled, uses 20 points
/// log-spaced on [0.1, 100]. k_tilde is fixed per grid.
struct TuneGrid {
  std::vector<double> lambda_x_values = log_spaced(0.1, 10.0, 20);
  std::vector<double> lambda_y_values = log_spaced(0.1, 10.0, 20);
  std::vector<double> eta_values;  // empty: eta fixed at 1
  int k_tilde = 1;

  static TuneGrid with_eta_search(int k_tilde) {
    TuneGrid grid;
    grid.k_tilde = k_tilde;
    grid.eta_values = log_spaced(0.1, 100.0, 20);
    return grid;
  }
};

struct TuneCell {
  IskfParams params;
  double score = std::numeric_limits<double>::infinity();
};

struct TuneResult {
  IskfParams best_params;
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<TuneCell> table;  // grid iteration order
};

/// sqrt( (1/T) sum ||x_t - xhat_t||^2 ) over aligned sequences.
inline double state_rmse(const std::vector<Eigen::VectorXd>& truth,
                         const std::vector<Eigen::VectorXd>& estimates) {
  if (truth.empty()) {
    throw EmptyInput("state_rmse: empty input");
  }
  if (truth.size() != estimates.size()) {
    throw DimensionMismatch("state_rmse: sequence lengths differ");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].size() != estimates[i].size()) {
      throw DimensionMismatch("state_rmse: vector dimensions differ");
    }
    acc += (truth[i] - estimates[i]).squaredNorm();
  }
  return std::sqrt(acc / static_cast<double>(truth.size()));
}

/// RMSE of the one-step-ahead predicted measurements: residuals
/// y_t - C A xhat_{t-1|t-1}. estimates[i] is the posterior at time i,
/// measurements[i] is y_{i+1}; the two sequences have equal length. These are
/// residuals against the previous posterior, not innovations, because the
/// posterior at time t already depends on y_t.
inline double pred_meas_rmse(const SystemModel& model,
                             const std::vector<Eigen::VectorXd>& estimates,
                             const std::vector<Eigen::VectorXd>& measurements) {
  if (estimates.empty()) {
    throw EmptyInput("pred_meas_rmse: empty input");
  }
  if (estimates.size() != measurements.size()) {
    throw DimensionMismatch("pred_meas_rmse: sequence lengths differ");
  }
  const Eigen::MatrixXd CA = model.C * model.A;
  double acc = 0.0;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (estimates[i].size() != model.n || measurements[i].size() != model.p) {
      throw DimensionMismatch("pred_meas_rmse: vector dimensions differ");
    }
    acc += (measurements[i] - CA * estimates[i]).squaredNorm();
  }
  return std::sqrt(acc / static_cast<double>(estimates.size()));
}

/// Runs a filter over a measurement sequence and returns the posterior
/// estimates xhat_{0|0}..xhat_{N|N} (N + 1 entries, the first being the
/// initial state).
using FilterRunner = std::function<std::vector<Eigen::VectorXd>(
    const IskfParams&, const std::vector<Eigen::VectorXd>&)>;

enum class ScoringMode {
  kPredictedMeasurement,  // pred_meas_rmse on the tuning measurements
  kStateRmse,             // state_rmse against the trajectory's true states
};

/// Exhaustive search over the grid. Cells are scored independently (serially
/// or on a small thread pool) and the argmin is taken afterwards in grid
/// order:
/// lambda_x outer, lambda_y inner, eta innermost, ties broken by the smallest
/// index. A cell whose filter run throws scores +inf instead of aborting the
/// search.
inline TuneResult grid_search(const FilterRunner& runner, const TuneGrid& grid,
                              const Trajectory& tuning_traj,
                              const SystemModel& model,
                              ScoringMode scoring =
                                  ScoringMode::kPredictedMeasurement,
                              bool parallel = false) {
  if (grid.lambda_x_values.empty() || grid.lambda_y_values.empty()) {
    throw EmptyInput("grid_search: empty grid");
  }
  std::vector<double> etas =
      grid.eta_values.empty() ? std::vector<double>{1.0} : grid.eta_values;

  std::vector<IskfParams> cells;
  cells.reserve(grid.lambda_x_values.size() * grid.lambda_y_values.size() *
                etas.size());
  for (double lx : grid.lambda_x_values) {
    for (double ly : grid.lambda_y_values) {
      for (double eta : etas) {
        cells.emplace_back(lx, ly, grid.k_tilde, eta);
      }
    }
  }

  const auto score_cell = [&](const IskfParams& params) -> double {
    double score;
    try {
      const auto estimates = runner(params, tuning_traj.measurements);
      const std::size_t N = tuning_traj.measurements.size();
      if (estimates.size() != N + 1) {
        throw Error("filter runner returned a misaligned estimate sequence");
      }
      if (scoring == ScoringMode::kPredictedMeasurement) {
        const std::vector<Eigen::VectorXd> prior_estimates(
            estimates.begin(), estimates.end() - 1);
        score = pred_meas_rmse(model, prior_estimates,
                               tuning_traj.measurements);
      } else {
        const std::vector<Eigen::VectorXd> truth(
            tuning_traj.states.begin() + 1, tuning_traj.states.end());
        const std::vector<Eigen::VectorXd> posterior(
            estimates.begin() + 1, estimates.end());
        score = state_rmse(truth, posterior);
      }
    } catch (const Error&) {
      score = std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(score)) {
      score = std::numeric_limits<double>::infinity();
    }
    return score;
  };

  std::vector<double> scores(cells.size());
  const unsigned workers =
      parallel ? std::max(1u, std::thread::hardware_concurrency()) : 1u;
  if (workers > 1 && cells.size() > 1) {
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < cells.size();
           i = next.fetch_add(1)) {
        scores[i] = score_cell(cells[i]);
      }
    };
    std::vector<std::thread> pool;
    const unsigned count =
        static_cast<unsigned>(std::min<std::size_t>(workers, cells.size()));
    pool.reserve(count);
    for (unsigned w = 0; w < count; ++w) {
      pool.emplace_back(worker);
    }
    for (auto& t : pool) {
      t.join();
    }
  } else {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      scores[i] = score_cell(cells[i]);
    }
  }

  TuneResult result;
  result.table.reserve(cells.size());
  std::size_t best = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    result.table.push_back({cells[i], scores[i]});
    if (scores[i] < scores[best]) {
      best = i;
    }
  }
  result.best_params = cells[best];
  result.best_score = scores[best];
  return result;
}

}  // namespace iskf
