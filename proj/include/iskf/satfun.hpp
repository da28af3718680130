#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>

#include "iskf/errors.hpp"

namespace iskf {

/// Sentinel for an unbounded saturation threshold. With both thresholds
/// infinite the saturated filters reduce exactly to the standard KF.
inline constexpr double kInfiniteThreshold =
    std::numeric_limits<double>::infinity();

inline void check_threshold(double lambda) {
  if (std::isnan(lambda) || lambda <= 0.0) {
    throw InvalidParameter("threshold must be positive or infinite");
  }
}

/// Circular Huber function: (1/2)||a||^2 inside the ball of radius lambda,
/// lambda * (||a|| - lambda/2) outside. Smooth and convex.
inline double phi(const Eigen::VectorXd& a, double lambda) {
  check_threshold(lambda);
  const double r = a.norm();
  if (std::isinf(lambda) || r <= lambda) {
    return 0.5 * r * r;
  }
  return lambda * (r - 0.5 * lambda);
}

/// Gradient of phi: the identity inside the ball, lambda * a / ||a|| outside.
/// The division happens only on the outer branch, so a = 0 is safe.
inline Eigen::VectorXd phi_grad(const Eigen::VectorXd& a, double lambda) {
  check_threshold(lambda);
  if (std::isinf(lambda)) {
    return a;
  }
  const double r = a.norm();
  if (r <= lambda) {
    return a;
  }
  return (lambda / r) * a;
}

/// Whitening operator built from a factor L with L L^T = S. apply() maps z to
/// L^-1 z, so ||apply(z)||_2 equals the Mahalanobis norm sqrt(z^T S^-1 z)
/// regardless of which square root was chosen.
class Whitener {
 public:
  Whitener() = default;

  /// Cholesky factorization of a positive definite S. Returns nullopt when
  /// the factorization fails, so call sites can raise their own typed error.
  static std::optional<Whitener> try_cholesky(const Eigen::MatrixXd& S) {
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) {
      return std::nullopt;
    }
    Whitener w;
    w.factor_ = llt.matrixL();
    w.triangular_ = true;
    return w;
  }

  static Whitener cholesky(const Eigen::MatrixXd& S) {
    auto w = try_cholesky(S);
    if (!w) {
      throw Error("matrix is not positive definite");
    }
    return *std::move(w);
  }

  /// Symmetric square root for PSD-only inputs. Eigenvalues are clamped at
  /// 1e-14 times the largest eigenvalue so the factor stays invertible.
  static Whitener psd_sqrt(const Eigen::MatrixXd& S) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
    Eigen::VectorXd evals = eig.eigenvalues();
    const double floor = 1e-14 * std::max(evals.maxCoeff(), 1e-300);
    Whitener w;
    w.factor_ = eig.eigenvectors() *
                evals.cwiseMax(floor).cwiseSqrt().asDiagonal();
    w.triangular_ = false;
    return w;
  }

  /// Solves L u = z.
  Eigen::VectorXd apply(const Eigen::VectorXd& z) const {
    check_dim(z);
    if (triangular_) {
      return factor_.triangularView<Eigen::Lower>().solve(z);
    }
    return factor_.partialPivLu().solve(z);
  }

  /// Solves L^T u = z.
  Eigen::VectorXd apply_transpose(const Eigen::VectorXd& z) const {
    check_dim(z);
    if (triangular_) {
      return factor_.triangularView<Eigen::Lower>().transpose().solve(z);
    }
    return factor_.transpose().partialPivLu().solve(z);
  }

  double whitened_norm(const Eigen::VectorXd& z) const {
    return apply(z).norm();
  }

  /// The factor L with L L^T = S.
  const Eigen::MatrixXd& factor() const { return factor_; }

  Eigen::Index dim() const { return factor_.rows(); }

 private:
  void check_dim(const Eigen::VectorXd& z) const {
    if (z.size() != factor_.rows()) {
      throw DimensionMismatch("whitener dimension does not match input");
    }
  }

  Eigen::MatrixXd factor_;
  bool triangular_ = false;
};

/// Radially shrinks z toward zero when its whitened norm exceeds lambda:
/// min(1, lambda / ||L^-1 z||) * z. Identity for an infinite threshold, with
/// the norm computation skipped entirely so the equivalence is exact.
inline Eigen::VectorXd saturate(const Eigen::VectorXd& z, const Whitener& w,
                                double lambda) {
  check_threshold(lambda);
  if (z.size() != w.dim()) {
    throw DimensionMismatch("saturate: input does not match whitener");
  }
  if (std::isinf(lambda)) {
    return z;
  }
  const double r = w.whitened_norm(z);
  if (r <= lambda) {
    return z;
  }
  return (lambda / r) * z;
}

}  // namespace iskf
