#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "iskf/errors.hpp"
#include "iskf/satfun.hpp"

namespace iskf {

/// Linear time-invariant system
///
///   x_{t+1} = A x_t + w_t,   y_t = C x_t + v_t,
///
/// with process noise shaped by F (W = F F^T, PSD) and measurement noise
/// shaped by G (V = G G^T, PD). Immutable after construction; use
/// build_model() to validate and cache W and V.
struct SystemModel {
  Eigen::MatrixXd A;  // n x n state dynamics
  Eigen::MatrixXd C;  // p x n output map
  Eigen::MatrixXd F;  // n x m process noise shaping
  Eigen::MatrixXd G;  // p x p measurement noise shaping
  Eigen::MatrixXd W;  // cached F F^T
  Eigen::MatrixXd V;  // cached G G^T
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  Eigen::Index m = 0;
};

/// Mixture-Gaussian noise description: with the given probability a noise
/// draw comes from the outlier branch, whose covariance is the base
/// covariance multiplied by the scale. scale = 1 or probability = 0 reduces
/// to the pure Gaussian model.
struct OutlierSpec {
  double p_process = 0.0;
  double scale_process = 1.0;
  double p_meas = 0.0;
  double scale_meas = 1.0;

  OutlierSpec() = default;
  OutlierSpec(double p_proc, double s_proc, double p_m, double s_m)
      : p_process(p_proc), scale_process(s_proc), p_meas(p_m), scale_meas(s_m) {
    auto check_prob = [](double p, const char* what) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw InvalidParameter(std::string(what) + " must be in [0, 1]");
      }
    };
    auto check_scale = [](double s, const char* what) {
      if (!(s >= 1.0)) {
        throw InvalidParameter(std::string(what) + " must be >= 1");
      }
    };
    check_prob(p_process, "p_process");
    check_prob(p_meas, "p_meas");
    check_scale(scale_process, "scale_process");
    check_scale(scale_meas, "scale_meas");
  }
};

/// Validates dimensions, caches W = F F^T and V = G G^T, and verifies V is
/// positive definite by factorization.
inline SystemModel build_model(const Eigen::MatrixXd& A,
                               const Eigen::MatrixXd& C,
                               const Eigen::MatrixXd& F,
                               const Eigen::MatrixXd& G) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || n == 0) {
    throw DimensionMismatch("A must be square and nonempty");
  }
  if (C.cols() != n || C.rows() == 0) {
    throw DimensionMismatch("C must be p x n with p >= 1");
  }
  const Eigen::Index p = C.rows();
  if (F.rows() != n || F.cols() == 0) {
    throw DimensionMismatch("F must be n x m with m >= 1");
  }
  if (G.rows() != p || G.cols() != p) {
    throw DimensionMismatch("G must be p x p");
  }
  SystemModel model;
  model.A = A;
  model.C = C;
  model.F = F;
  model.G = G;
  model.W = F * F.transpose();
  model.V = G * G.transpose();
  model.n = n;
  model.p = p;
  model.m = F.cols();
  if (!Whitener::try_cholesky(model.V)) {
    throw SingularMeasurementNoise("V = G G^T is not positive definite");
  }
  return model;
}

/// Planar vehicle with unit mass and linear drag, driven by a random force.
/// State is (position, velocity) in R^4, outputs are the two position
/// coordinates. The force enters through B, so F = sqrt(10) B; measurement
/// noise has G = sqrt(5) I. Outlier branches scale the force variance by 10
/// and the measurement variance by 100.
inline std::pair<SystemModel, OutlierSpec> vehicle_model(
    double h = 0.05, double gamma = 0.05) {
  if (!(h > 0.0)) {
    throw InvalidParameter("time step h must be positive");
  }
  if (!(gamma * h >= 0.0 && gamma * h < 1.0)) {
    throw InvalidParameter("drag must satisfy 0 <= gamma*h < 1");
  }
  const double ph = (1.0 - gamma * h / 2.0) * h;
  const double d = 1.0 - gamma * h;
  Eigen::MatrixXd A(4, 4);
  A << 1, 0, ph, 0,
       0, 1, 0, ph,
       0, 0, d, 0,
       0, 0, 0, d;
  Eigen::MatrixXd B(4, 2);
  B << h * h / 2.0, 0,
       0, h * h / 2.0,
       h, 0,
       0, h;
  Eigen::MatrixXd C(2, 4);
  C << 1, 0, 0, 0,
       0, 1, 0, 0;
  const Eigen::MatrixXd F = std::sqrt(10.0) * B;
  const Eigen::MatrixXd G = std::sqrt(5.0) * Eigen::MatrixXd::Identity(2, 2);
  return {build_model(A, C, F, G), OutlierSpec(0.1, 10.0, 0.1, 100.0)};
}

/// Cascade of three linearized continuously-stirred tank reactors. Each
/// reactor has state (concentration offset, temperature offset); the state of
/// one reactor drives the next, giving a block lower-bidiagonal A. Only the
/// three temperatures are measured. F = (1/sqrt(10)) blockdiag(B~, B~, B~),
/// G = I. Both outlier branches scale the variance by 100.
inline std::pair<SystemModel, OutlierSpec> cstr_model(double h = 0.05) {
  if (!(h > 0.0)) {
    throw InvalidParameter("time step h must be positive");
  }
  Eigen::MatrixXd At(2, 2);
  At << 1.0 - 5.0 * h + 4.33 * h * h, -0.34 * h + 0.38 * h * h,
      47.68 * h - 52.81 * h * h, 1.0 + 2.79 * h - 4.29 * h * h;
  Eigen::MatrixXd Bt(2, 2);
  Bt << h - 2.5 * h * h, -0.05 * h * h,
      23.84 * h * h, 0.3 * h + 0.42 * h * h;
  Eigen::RowVector2d Ct(0.0, 1.0);

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(6, 6);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(3, 6);
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(6, 6);
  for (int i = 0; i < 3; ++i) {
    A.block<2, 2>(2 * i, 2 * i) = At;
    if (i > 0) {
      A.block<2, 2>(2 * i, 2 * (i - 1)) = Bt;
    }
    C.block<1, 2>(i, 2 * i) = Ct;
    F.block<2, 2>(2 * i, 2 * i) = Bt / std::sqrt(10.0);
  }
  const Eigen::MatrixXd G = Eigen::MatrixXd::Identity(3, 3);
  return {build_model(A, C, F, G), OutlierSpec(0.1, 100.0, 0.1, 100.0)};
}

/// Result of the PBH rank tests. Advisory only: steady-state solving fails
/// loudly on its own, so these are warnings rather than hard errors.
struct ModelDiagnostics {
  bool detectable = true;
  bool stabilizable = true;
  std::vector<std::string> warnings;
};

namespace detail {

inline Eigen::Index numerical_rank(const Eigen::MatrixXcd& M) {
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0) {
    return 0;
  }
  const double tol = 1e-9 * sv(0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > tol) {
      ++rank;
    }
  }
  return rank;
}

/// Symmetric PSD square root with negative eigenvalues zeroed (no clamping,
/// so rank deficiency is preserved for the rank tests).
inline Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& S) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  return eig.eigenvectors() *
         eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace detail

/// PBH rank tests at every eigenvalue of A with modulus >= 1: detectability
/// of (A, C) and stabilizability of (A, W^1/2).
inline ModelDiagnostics validate_model(const SystemModel& model) {
  ModelDiagnostics diag;
  const Eigen::Index n = model.n;
  const Eigen::MatrixXd Whalf = detail::matrix_sqrt_psd(model.W);
  Eigen::EigenSolver<Eigen::MatrixXd> eig(model.A);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> lambda = eig.eigenvalues()(i);
    if (std::abs(lambda) < 1.0) {
      continue;
    }
    Eigen::MatrixXcd shifted =
        model.A.cast<std::complex<double>>() -
        lambda * Eigen::MatrixXcd::Identity(n, n);
    Eigen::MatrixXcd det_test(n + model.p, n);
    det_test << shifted, model.C.cast<std::complex<double>>();
    if (detail::numerical_rank(det_test) < n) {
      diag.detectable = false;
      diag.warnings.push_back(
          "(A, C) fails the PBH detectability test at eigenvalue with modulus " +
          std::to_string(std::abs(lambda)));
    }
    Eigen::MatrixXcd stab_test(n, n + Whalf.cols());
    stab_test << shifted, Whalf.cast<std::complex<double>>();
    if (detail::numerical_rank(stab_test) < n) {
      diag.stabilizable = false;
      diag.warnings.push_back(
          "(A, W^1/2) fails the PBH stabilizability test at eigenvalue with "
          "modulus " +
          std::to_string(std::abs(lambda)));
    }
  }
  return diag;
}

}  // namespace iskf
