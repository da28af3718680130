#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <utility>

#include "iskf/errors.hpp"
#include "iskf/model.hpp"
#include "iskf/satfun.hpp"

namespace iskf {

/// Steady-state covariances and gain, plus everything the constant-gain
/// filters need per step: cached whiteners for Sigma and V, the precomputed
/// I - K C, and copies of A and C so a GainSet is self-contained. Immutable
/// after solve_steady().
struct GainSet {
  Eigen::MatrixXd A;
  Eigen::MatrixXd C;
  Eigen::MatrixXd P;      // posterior steady covariance
  Eigen::MatrixXd Sigma;  // prior steady covariance A P A^T + W
  Eigen::MatrixXd K;      // steady gain
  Eigen::MatrixXd IKC;    // I - K C
  Whitener sigma_whitener;
  Whitener v_whitener;
};

namespace detail {

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& M) {
  return 0.5 * (M + M.transpose());
}

}  // namespace detail

/// Prediction step of the covariance recursion: A P A^T + W, symmetrized.
inline Eigen::MatrixXd covariance_predict(const Eigen::MatrixXd& P_post,
                                          const SystemModel& model) {
  if (P_post.rows() != model.n || P_post.cols() != model.n) {
    throw DimensionMismatch("P_post must be n x n");
  }
  return detail::symmetrize(model.A * P_post * model.A.transpose() + model.W);
}

/// Gain and posterior covariance from a prior covariance, for an arbitrary
/// output pair (C, V). K is obtained through a symmetric PD solve of the
/// innovation covariance, never an explicit inverse.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> gain_and_update(
    const Eigen::MatrixXd& P_prior, const Eigen::MatrixXd& C,
    const Eigen::MatrixXd& V) {
  const Eigen::Index n = P_prior.rows();
  if (P_prior.cols() != n || C.cols() != n || V.rows() != C.rows() ||
      V.cols() != C.rows()) {
    throw DimensionMismatch("gain_and_update: inconsistent dimensions");
  }
  const Eigen::MatrixXd S =
      detail::symmetrize(C * P_prior * C.transpose() + V);
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) {
    throw SingularInnovationCovariance(
        "innovation covariance C P C^T + V is not positive definite");
  }
  // K^T = S^-1 (C P), using P = P^T.
  const Eigen::MatrixXd K = llt.solve(C * P_prior).transpose();
  const Eigen::MatrixXd P_post = detail::symmetrize(
      (Eigen::MatrixXd::Identity(n, n) - K * C) * P_prior);
  return {K, P_post};
}

inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> gain_and_update(
    const Eigen::MatrixXd& P_prior, const SystemModel& model) {
  return gain_and_update(P_prior, model.C, model.V);
}

/// Relative Frobenius residual of the DARE at P:
/// ||P - (A P A^T + W - A P C^T (C P C^T + V)^-1 C P A^T)||_F / max(1, ||P||_F).
inline double dare_residual(const Eigen::MatrixXd& P,
                            const SystemModel& model) {
  const Eigen::MatrixXd Sigma = covariance_predict(P, model);
  const auto [K, P_next] = gain_and_update(Sigma, model);
  return (P_next - P).norm() / std::max(1.0, P.norm());
}

/// Fixed-point Riccati iteration from P0 = W until successive posterior
/// covariances agree to tol (relative Frobenius). Builds the full GainSet
/// from the fixed point. Non-detectable or non-stabilizable models surface
/// as NoConvergence; a prior covariance that is not PD (so the process-side
/// whitener cannot be built) surfaces as SingularPriorCovariance.
inline GainSet solve_steady(const SystemModel& model, double tol = 1e-12,
                            long max_iter = 1000000) {
  if (!(tol > 0.0)) {
    throw InvalidParameter("tol must be positive");
  }
  Eigen::MatrixXd P = detail::symmetrize(model.W);
  bool converged = false;
  for (long it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd Sigma = covariance_predict(P, model);
    auto [K, P_next] = gain_and_update(Sigma, model);
    const double delta = (P_next - P).norm();
    P = std::move(P_next);
    if (delta <= tol * std::max(1.0, P.norm())) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw NoConvergence(
        "Riccati iteration did not converge; check detectability of (A, C) "
        "and stabilizability of (A, W^1/2)");
  }
  if (dare_residual(P, model) > 10.0 * tol) {
    throw NoConvergence("converged iterate does not satisfy the DARE");
  }

  GainSet gains;
  gains.A = model.A;
  gains.C = model.C;
  gains.P = P;
  gains.Sigma = covariance_predict(P, model);
  gains.K = gain_and_update(gains.Sigma, model).first;
  gains.IKC = Eigen::MatrixXd::Identity(model.n, model.n) - gains.K * model.C;
  auto sigma_w = Whitener::try_cholesky(gains.Sigma);
  if (!sigma_w) {
    throw SingularPriorCovariance(
        "steady prior covariance Sigma is not positive definite");
  }
  gains.sigma_whitener = *std::move(sigma_w);
  gains.v_whitener = Whitener::cholesky(model.V);
  return gains;
}

/// Factored scaling matrix M = Sigma^-1 + C^T V^-1 C. By the Woodbury
/// identity the steady gain satisfies K = M^-1 C^T V^-1.
class ScalingMatrix {
 public:
  ScalingMatrix(const GainSet& gains, const SystemModel& model) {
    Eigen::LLT<Eigen::MatrixXd> sigma_llt(gains.Sigma);
    Eigen::LLT<Eigen::MatrixXd> v_llt(model.V);
    if (sigma_llt.info() != Eigen::Success ||
        v_llt.info() != Eigen::Success) {
      throw SingularScalingMatrix("Sigma or V could not be factored");
    }
    const Eigen::Index n = model.n;
    const Eigen::MatrixXd sigma_inv =
        sigma_llt.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd v_inv_C = v_llt.solve(model.C);
    M_ = detail::symmetrize(sigma_inv + model.C.transpose() * v_inv_C);
    llt_.compute(M_);
    if (llt_.info() != Eigen::Success) {
      throw SingularScalingMatrix("scaling matrix is not positive definite");
    }
    Ct_Vinv_ = v_inv_C.transpose();
  }

  const Eigen::MatrixXd& matrix() const { return M_; }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
    return llt_.solve(rhs);
  }

  /// M^-1 C^T V^-1, for checking the Woodbury identity against the gain.
  Eigen::MatrixXd gain_via_woodbury() const { return llt_.solve(Ct_Vinv_); }

 private:
  Eigen::MatrixXd M_;
  Eigen::MatrixXd Ct_Vinv_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline ScalingMatrix scaling_matrix(const GainSet& gains,
                                    const SystemModel& model) {
  return ScalingMatrix(gains, model);
}

}  // namespace iskf
