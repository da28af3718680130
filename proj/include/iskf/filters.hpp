#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "iskf/errors.hpp"
#include "iskf/model.hpp"
#include "iskf/riccati.hpp"
#include "iskf/satfun.hpp"

namespace iskf {

/// Saturation thresholds, iteration count and step size for the iteratively
/// saturated update. Thresholds may be kInfiniteThreshold, which reduces the
/// filter to the standard KF. The descent guarantee of the underlying scaled
/// gradient method holds for eta in (0, 2); larger steps are admitted because
/// they are meaningful as a tunable filter gain.
class IskfParams {
 public:
  IskfParams() = default;
  IskfParams(double lambda_x, double lambda_y, int k_tilde, double eta = 1.0)
      : lambda_x_(lambda_x), lambda_y_(lambda_y), k_tilde_(k_tilde), eta_(eta) {
    check_threshold(lambda_x_);
    check_threshold(lambda_y_);
    if (k_tilde_ < 1) {
      throw InvalidParameter("k_tilde must be >= 1");
    }
    if (!(eta_ > 0.0) || std::isinf(eta_)) {
      throw InvalidParameter("eta must be positive and finite");
    }
  }

  double lambda_x() const { return lambda_x_; }
  double lambda_y() const { return lambda_y_; }
  int k_tilde() const { return k_tilde_; }
  double eta() const { return eta_; }

 private:
  double lambda_x_ = kInfiniteThreshold;
  double lambda_y_ = kInfiniteThreshold;
  int k_tilde_ = 1;
  double eta_ = 1.0;
};

/// Posterior mean and covariance of a time-varying filter at time t.
struct FilterState {
  Eigen::VectorXd x_hat;
  Eigen::MatrixXd P_post;
  long t = 0;
};

/// x_hat = 0 (the prior mean) and P = steady-state posterior covariance, so
/// the time-varying and steady-state paths coincide from t = 0.
inline FilterState initial_state(const GainSet& gains) {
  return {Eigen::VectorXd::Zero(gains.A.rows()), gains.P, 0};
}

/// One standard KF predict + update.
inline FilterState kf_step(const FilterState& state, const Eigen::VectorXd& y,
                           const SystemModel& model) {
  if (y.size() != model.p) {
    throw DimensionMismatch("measurement dimension does not match model");
  }
  const Eigen::VectorXd x_pred = model.A * state.x_hat;
  const Eigen::MatrixXd Sigma = covariance_predict(state.P_post, model);
  auto [K, P_post] = gain_and_update(Sigma, model);
  return {x_pred + K * (y - model.C * x_pred), std::move(P_post), state.t + 1};
}

namespace detail {

/// Shared predict + saturated-update core, parameterized directly on the
/// output pair (C, V) so the masked path reuses it bit for bit.
inline FilterState iskf_update_core(const Eigen::MatrixXd& A,
                                    const Eigen::MatrixXd& W,
                                    const Eigen::MatrixXd& C,
                                    const Eigen::MatrixXd& V,
                                    const FilterState& state,
                                    const Eigen::VectorXd& y,
                                    const IskfParams& params) {
  const Eigen::VectorXd x_pred = A * state.x_hat;
  const Eigen::MatrixXd Sigma =
      symmetrize(A * state.P_post * A.transpose() + W);
  auto sigma_w = Whitener::try_cholesky(Sigma);
  if (!sigma_w) {
    throw SingularPriorCovariance(
        "predicted covariance is not positive definite");
  }
  auto v_w = Whitener::try_cholesky(V);
  if (!v_w) {
    throw SingularMeasurementNoise("V is not positive definite");
  }
  auto [K, P_post] = gain_and_update(Sigma, C, V);
  const Eigen::MatrixXd IKC =
      Eigen::MatrixXd::Identity(A.rows(), A.rows()) - K * C;

  Eigen::VectorXd x = x_pred;
  for (int k = 0; k < params.k_tilde(); ++k) {
    const Eigen::VectorXd innov = saturate(y - C * x, *v_w, params.lambda_y());
    const Eigen::VectorXd corr =
        saturate(x_pred - x, *sigma_w, params.lambda_x());
    x = x + params.eta() * (K * innov) + params.eta() * (IKC * corr);
  }
  return {std::move(x), std::move(P_post), state.t + 1};
}

}  // namespace detail

/// One time-varying ISKF step: standard prediction and covariance recursion,
/// then k_tilde saturated update iterations on the mean. The covariance path
/// never sees the measurement.
inline FilterState iskf_step(const FilterState& state, const Eigen::VectorXd& y,
                             const SystemModel& model,
                             const IskfParams& params) {
  if (y.size() != model.p) {
    throw DimensionMismatch("measurement dimension does not match model");
  }
  return detail::iskf_update_core(model.A, model.W, model.C, model.V, state, y,
                                  params);
}

/// Steady-state KF step: matrix-vector products only.
inline Eigen::VectorXd ss_kf_step(const Eigen::VectorXd& x_hat,
                                  const Eigen::VectorXd& y,
                                  const GainSet& gains) {
  if (x_hat.size() != gains.A.rows() || y.size() != gains.C.rows()) {
    throw DimensionMismatch("ss_kf_step: inconsistent dimensions");
  }
  const Eigen::VectorXd x_pred = gains.A * x_hat;
  return x_pred + gains.K * (y - gains.C * x_pred);
}

/// Steady-state ISKF step: k_tilde saturated update iterations using only the
/// precomputed gain, I - K C, and cached triangular whiteners. No
/// factorizations or linear solves per step.
inline Eigen::VectorXd ss_iskf_step(const Eigen::VectorXd& x_hat,
                                    const Eigen::VectorXd& y,
                                    const GainSet& gains,
                                    const IskfParams& params) {
  if (x_hat.size() != gains.A.rows() || y.size() != gains.C.rows()) {
    throw DimensionMismatch("ss_iskf_step: inconsistent dimensions");
  }
  const Eigen::VectorXd x_pred = gains.A * x_hat;
  Eigen::VectorXd x = x_pred;
  for (int k = 0; k < params.k_tilde(); ++k) {
    const Eigen::VectorXd innov =
        saturate(y - gains.C * x, gains.v_whitener, params.lambda_y());
    const Eigen::VectorXd corr =
        saturate(x_pred - x, gains.sigma_whitener, params.lambda_x());
    x = x + params.eta() * (gains.K * innov) + params.eta() * (gains.IKC * corr);
  }
  return x;
}

/// Robust estimation objective
///   f(x) = phi(Sigma^-1/2 (x - x_pred); lambda_x)
///        + phi(V^-1/2 (y - C x); lambda_y),
/// convex in x. With infinite thresholds this is the weighted least-squares
/// objective whose minimizer is the KF estimate.
inline double objective(const Eigen::VectorXd& x, const Eigen::VectorXd& x_pred,
                        const Eigen::VectorXd& y, const GainSet& gains,
                        const IskfParams& params) {
  return phi(gains.sigma_whitener.apply(x - x_pred), params.lambda_x()) +
         phi(gains.v_whitener.apply(y - gains.C * x), params.lambda_y());
}

inline Eigen::VectorXd objective_grad(const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& x_pred,
                                      const Eigen::VectorXd& y,
                                      const GainSet& gains,
                                      const IskfParams& params) {
  const Eigen::VectorXd gx = gains.sigma_whitener.apply_transpose(
      phi_grad(gains.sigma_whitener.apply(x - x_pred), params.lambda_x()));
  const Eigen::VectorXd gy = gains.v_whitener.apply_transpose(
      phi_grad(gains.v_whitener.apply(y - gains.C * x), params.lambda_y()));
  return gx - gains.C.transpose() * gy;
}

/// Minimizes the robust objective by the scaled gradient iteration with unit
/// step, run to convergence. The scaled gradient M^-1 grad f(x) is evaluated
/// in its simplified form
///   -K sigma(y - C x) - (I - K C) rho(x_pred - x),
/// equivalent to a solve against M = Sigma^-1 + C^T V^-1 C by the Woodbury
/// identity. Stops when ||M^-1 grad f(x)|| <= tol * (1 + ||x||).
inline Eigen::VectorXd huberized_solve(const Eigen::VectorXd& x_pred,
                                       const Eigen::VectorXd& y,
                                       const GainSet& gains,
                                       const IskfParams& params,
                                       double tol = 1e-10,
                                       long max_iter = 100000) {
  if (!(tol > 0.0)) {
    throw InvalidParameter("tol must be positive");
  }
  Eigen::VectorXd x = x_pred;
  for (long it = 0;; ++it) {
    const Eigen::VectorXd innov =
        saturate(y - gains.C * x, gains.v_whitener, params.lambda_y());
    const Eigen::VectorXd corr =
        saturate(x_pred - x, gains.sigma_whitener, params.lambda_x());
    const Eigen::VectorXd scaled_grad = -(gains.K * innov) - gains.IKC * corr;
    if (scaled_grad.norm() <= tol * (1.0 + x.norm())) {
      return x;
    }
    if (it >= max_iter) {
      throw NoConvergence("scaled gradient iteration hit max_iter");
    }
    x -= scaled_grad;
  }
}

/// Update with a subset of measurement entries available. Rows of C and the
/// matching principal submatrix of V are selected by the mask, then the
/// saturated update runs against the reduced output pair. An all-false mask
/// skips the update entirely: x_hat = A x_hat, P = A P A^T + W.
inline FilterState masked_update(const FilterState& state,
                                 const Eigen::VectorXd& y_obs,
                                 const std::vector<bool>& mask,
                                 const SystemModel& model,
                                 const IskfParams& params) {
  if (static_cast<Eigen::Index>(mask.size()) != model.p) {
    throw DimensionMismatch("mask size must equal the output dimension");
  }
  Eigen::Index q = 0;
  for (bool b : mask) {
    q += b ? 1 : 0;
  }
  if (y_obs.size() != q) {
    throw DimensionMismatch(
        "y_obs must carry exactly the masked-true entries");
  }
  if (q == 0) {
    return {model.A * state.x_hat, covariance_predict(state.P_post, model),
            state.t + 1};
  }
  Eigen::MatrixXd C_red(q, model.n);
  Eigen::MatrixXd V_red(q, q);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < model.p; ++i) {
    if (!mask[i]) {
      continue;
    }
    C_red.row(r) = model.C.row(i);
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < model.p; ++j) {
      if (mask[j]) {
        V_red(r, c++) = model.V(i, j);
      }
    }
    ++r;
  }
  return detail::iskf_update_core(model.A, model.W, C_red, V_red, state, y_obs,
                                  params);
}

}  // namespace iskf
