#include "iskf/filters.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "iskf/model.hpp"
#include "iskf/riccati.hpp"
#include "iskf/sim.hpp"
#include "test_util.hpp"

namespace {

using iskf::build_model;
using iskf::FilterState;
using iskf::GainSet;
using iskf::huberized_solve;
using iskf::initial_state;
using iskf::iskf_step;
using iskf::IskfParams;
using iskf::kf_step;
using iskf::kInfiniteThreshold;
using iskf::masked_update;
using iskf::objective;
using iskf::objective_grad;
using iskf::solve_steady;
using iskf::ss_iskf_step;
using iskf::ss_kf_step;
using iskf::SystemModel;
using testutil::NoiseStream;

SystemModel scalar_model(double a, double c, double f = 1.0, double g = 1.0) {
  Eigen::MatrixXd A(1, 1), C(1, 1), F(1, 1), G(1, 1);
  A << a;
  C << c;
  F << f;
  G << g;
  return build_model(A, C, F, G);
}

Eigen::VectorXd scalar_vec(double v) {
  Eigen::VectorXd x(1);
  x << v;
  return x;
}

TEST(IskfParamsTest, DefaultsToKalmanSettings) {
  const IskfParams params;
  EXPECT_TRUE(std::isinf(params.lambda_x()));
  EXPECT_TRUE(std::isinf(params.lambda_y()));
  EXPECT_EQ(params.k_tilde(), 1);
  EXPECT_DOUBLE_EQ(params.eta(), 1.0);
}

TEST(IskfParamsTest, StoresArguments) {
  const IskfParams params(0.5, 2.0, 3, 1.5);
  EXPECT_DOUBLE_EQ(params.lambda_x(), 0.5);
  EXPECT_DOUBLE_EQ(params.lambda_y(), 2.0);
  EXPECT_EQ(params.k_tilde(), 3);
  EXPECT_DOUBLE_EQ(params.eta(), 1.5);
}

TEST(IskfParamsTest, ValidatesArguments) {
  EXPECT_THROW(IskfParams(0.0, 1.0, 1), iskf::InvalidParameter);
  EXPECT_THROW(IskfParams(1.0, -1.0, 1), iskf::InvalidParameter);
  EXPECT_THROW(IskfParams(std::nan(""), 1.0, 1), iskf::InvalidParameter);
  EXPECT_THROW(IskfParams(1.0, 1.0, 0), iskf::InvalidParameter);
  EXPECT_THROW(IskfParams(1.0, 1.0, -2), iskf::InvalidParameter);
  EXPECT_THROW(IskfParams(1.0, 1.0, 1, 0.0), iskf::InvalidParameter);
  EXPECT_THROW(IskfParams(1.0, 1.0, 1, -0.5), iskf::InvalidParameter);
  EXPECT_THROW(IskfParams(1.0, 1.0, 1, kInfiniteThreshold),
               iskf::InvalidParameter);
  // Step sizes beyond the classical descent range are admitted as gains.
  EXPECT_NO_THROW(IskfParams(1.0, 1.0, 1, 50.0));
}

TEST(InitialState, ZeroMeanSteadyCovariance) {
  const SystemModel m = scalar_model(0.0, 1.0);
  const GainSet gains = solve_steady(m);
  const FilterState s = initial_state(gains);
  EXPECT_DOUBLE_EQ(s.x_hat.norm(), 0.0);
  EXPECT_TRUE((s.P_post.array() == gains.P.array()).all());
  EXPECT_EQ(s.t, 0);
}

TEST(KfStep, ScalarOracle) {
  const SystemModel m = scalar_model(0.0, 1.0);
  FilterState s{scalar_vec(0.0), Eigen::MatrixXd::Identity(1, 1), 0};
  const FilterState next = kf_step(s, scalar_vec(10.0), m);
  EXPECT_DOUBLE_EQ(next.x_hat(0), 5.0);
  EXPECT_DOUBLE_EQ(next.P_post(0, 0), 0.5);
  EXPECT_EQ(next.t, 1);
}

TEST(KfStep, RejectsWrongMeasurementDimension) {
  const SystemModel m = scalar_model(0.0, 1.0);
  const FilterState s{scalar_vec(0.0), Eigen::MatrixXd::Identity(1, 1), 0};
  EXPECT_THROW(kf_step(s, Eigen::VectorXd::Zero(2), m),
               iskf::DimensionMismatch);
}

TEST(IskfStep, ScalarSingleIterationOracle) {
  // A = 0, W = C = V = 1, y = 10: the innovation saturates at lambda_y = 1,
  // so one iteration moves the estimate by K * 1 = 0.5.
  const SystemModel m = scalar_model(0.0, 1.0);
  const FilterState s{scalar_vec(0.0), Eigen::MatrixXd::Identity(1, 1), 0};
  const IskfParams params(0.1, 1.0, 1, 1.0);
  const FilterState next = iskf_step(s, scalar_vec(10.0), m, params);
  EXPECT_NEAR(next.x_hat(0), 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(next.P_post(0, 0), 0.5);
}

TEST(IskfStep, ScalarTwoIterationOracle) {
  // Second iteration: innovation still saturated (+0.5), pull-back term
  // saturate(0 - 0.5; 0.1) = -0.1 contributes 0.5 * -0.1, so 0.95 total.
  const SystemModel m = scalar_model(0.0, 1.0);
  const FilterState s{scalar_vec(0.0), Eigen::MatrixXd::Identity(1, 1), 0};
  const IskfParams params(0.1, 1.0, 2, 1.0);
  const FilterState next = iskf_step(s, scalar_vec(10.0), m, params);
  EXPECT_NEAR(next.x_hat(0), 0.95, 1e-12);
}

TEST(IskfStep, CovariancePathIgnoresMeasurement) {
  const SystemModel m = scalar_model(0.5, 1.0);
  const FilterState s{scalar_vec(0.0), Eigen::MatrixXd::Identity(1, 1), 0};
  const IskfParams params(0.1, 0.1, 3, 1.0);
  const FilterState a = iskf_step(s, scalar_vec(100.0), m, params);
  const FilterState b = iskf_step(s, scalar_vec(-3.0), m, params);
  EXPECT_TRUE((a.P_post.array() == b.P_post.array()).all());
}

TEST(IskfStep, RejectsSingularPriorCovariance) {
  const SystemModel m = scalar_model(0.0, 1.0, 0.0, 1.0);  // W = 0
  const FilterState s{scalar_vec(0.0), Eigen::MatrixXd::Zero(1, 1), 0};
  EXPECT_THROW(iskf_step(s, scalar_vec(1.0), m, IskfParams()),
               iskf::SingularPriorCovariance);
}

TEST(IskfStep, InfiniteThresholdsReduceToKf) {
  NoiseStream rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + trial % 4;
    const int p = 1 + trial % 2;
    const SystemModel m = testutil::random_system(rng, n, p);
    const iskf::OutlierSpec spec(0.2, 20.0, 0.2, 50.0);
    const auto traj = iskf::simulate(m, spec, 100, 1000 + trial);
    const GainSet gains = solve_steady(m);
    for (int k_tilde : {1, 2, 3}) {
      const IskfParams params(kInfiniteThreshold, kInfiniteThreshold, k_tilde,
                              1.0);
      FilterState kf = initial_state(gains);
      FilterState is = initial_state(gains);
      for (const auto& y : traj.measurements) {
        kf = kf_step(kf, y, m);
        is = iskf_step(is, y, m, params);
        ASSERT_LE((kf.x_hat - is.x_hat).norm(),
                  1e-12 * (1.0 + kf.x_hat.norm()));
        ASSERT_LE((kf.P_post - is.P_post).norm(),
                  1e-12 * (1.0 + kf.P_post.norm()));
      }
    }
  }
}

TEST(SteadyStateSteps, TrackTimeVaryingFromSteadyStart) {
  NoiseStream rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    const SystemModel m = testutil::random_system(rng, 3, 2);
    const iskf::OutlierSpec spec(0.1, 10.0, 0.1, 100.0);
    const auto traj = iskf::simulate(m, spec, 50, 2000 + trial);
    const GainSet gains = solve_steady(m);
    const IskfParams params(0.8, 1.7, 2, 1.0);

    FilterState tv_kf = initial_state(gains);
    FilterState tv_is = initial_state(gains);
    Eigen::VectorXd ss_kf = initial_state(gains).x_hat;
    Eigen::VectorXd ss_is = initial_state(gains).x_hat;
    for (const auto& y : traj.measurements) {
      tv_kf = kf_step(tv_kf, y, m);
      tv_is = iskf_step(tv_is, y, m, params);
      ss_kf = ss_kf_step(ss_kf, y, gains);
      ss_is = ss_iskf_step(ss_is, y, gains, params);
      ASSERT_LE((tv_kf.x_hat - ss_kf).norm(), 1e-8 * (1.0 + ss_kf.norm()));
      ASSERT_LE((tv_is.x_hat - ss_is).norm(), 1e-8 * (1.0 + ss_is.norm()));
    }
  }
}

TEST(SteadyStateSteps, RejectWrongDimensions) {
  const SystemModel m = scalar_model(0.0, 1.0);
  const GainSet gains = solve_steady(m);
  EXPECT_THROW(ss_kf_step(Eigen::VectorXd::Zero(2), scalar_vec(0.0), gains),
               iskf::DimensionMismatch);
  EXPECT_THROW(ss_iskf_step(scalar_vec(0.0), Eigen::VectorXd::Zero(2), gains,
                            IskfParams()),
               iskf::DimensionMismatch);
}

TEST(Objective, ScalarOracle) {
  const SystemModel m = scalar_model(0.0, 1.0);
  const GainSet gains = solve_steady(m);  // Sigma = 1
  const IskfParams params(1.0, 1.0, 1, 1.0);
  const double f = objective(scalar_vec(0.0), scalar_vec(0.0),
                             scalar_vec(2.0), gains, params);
  EXPECT_NEAR(f, 1.5, 1e-12);
  const Eigen::VectorXd g = objective_grad(scalar_vec(0.0), scalar_vec(0.0),
                                           scalar_vec(2.0), gains, params);
  EXPECT_NEAR(g(0), -1.0, 1e-12);
}

TEST(Objective, InfiniteThresholdsGiveWeightedLeastSquares) {
  NoiseStream rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    const SystemModel m = testutil::random_system(rng, 3, 2);
    const GainSet gains = solve_steady(m);
    const IskfParams params;  // both thresholds infinite
    const Eigen::VectorXd x = testutil::random_vector(rng, 3);
    const Eigen::VectorXd xp = testutil::random_vector(rng, 3);
    const Eigen::VectorXd y = testutil::random_vector(rng, 2);
    const double f = objective(x, xp, y, gains, params);
    const Eigen::VectorXd dx = x - xp;
    const Eigen::VectorXd dy = y - m.C * x;
    const double expected = 0.5 * dx.dot(gains.Sigma.llt().solve(dx)) +
                            0.5 * dy.dot(m.V.llt().solve(dy));
    EXPECT_NEAR(f, expected, 1e-10 * (1.0 + expected));
  }
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  NoiseStream rng(44);
  const double h = 1e-6;
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + trial % 3;
    const int p = 1 + trial % 2;
    const SystemModel m = testutil::random_system(rng, n, p);
    const GainSet gains = solve_steady(m);
    const IskfParams params(0.3 + rng.uniform(), 0.3 + rng.uniform(), 1, 1.0);
    const Eigen::VectorXd x = 2.0 * testutil::random_vector(rng, n);
    const Eigen::VectorXd xp = testutil::random_vector(rng, n);
    const Eigen::VectorXd y = 2.0 * testutil::random_vector(rng, p);
    const Eigen::VectorXd g = objective_grad(x, xp, y, gains, params);
    Eigen::VectorXd fd(n);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd xplus = x;
      Eigen::VectorXd xminus = x;
      xplus(i) += h;
      xminus(i) -= h;
      fd(i) = (objective(xplus, xp, y, gains, params) -
               objective(xminus, xp, y, gains, params)) /
              (2.0 * h);
    }
    EXPECT_LE((fd - g).norm(), 1e-5 * (1.0 + g.norm()));
  }
}

TEST(IskfIterates, ObjectiveDescendsAtUnitStep) {
  NoiseStream rng(45);
  for (int trial = 0; trial < 30; ++trial) {
    const SystemModel m = testutil::random_system(rng, 3, 2);
    const GainSet gains = solve_steady(m);
    const IskfParams base(0.5, 0.8, 1, 1.0);
    const Eigen::VectorXd x_hat = testutil::random_vector(rng, 3);
    const Eigen::VectorXd y = 5.0 * testutil::random_vector(rng, 2);
    const Eigen::VectorXd x_pred = gains.A * x_hat;
    double prev = objective(x_pred, x_pred, y, gains, base);
    for (int k = 1; k <= 10; ++k) {
      const IskfParams params(base.lambda_x(), base.lambda_y(), k, 1.0);
      const Eigen::VectorXd xk = ss_iskf_step(x_hat, y, gains, params);
      const double fk = objective(xk, x_pred, y, gains, params);
      ASSERT_LE(fk, prev + 1e-12);
      prev = fk;
    }
  }
}

TEST(HuberizedSolve, ReachesStationarityAndIskfLimit) {
  NoiseStream rng(46);
  for (int trial = 0; trial < 10; ++trial) {
    const SystemModel m = testutil::random_system(rng, 3, 2);
    const GainSet gains = solve_steady(m);
    const IskfParams params(0.5, 1.2, 200, 1.0);
    const Eigen::VectorXd x_hat = testutil::random_vector(rng, 3);
    const Eigen::VectorXd y = 5.0 * testutil::random_vector(rng, 2);
    const Eigen::VectorXd x_pred = gains.A * x_hat;

    const Eigen::VectorXd x_star =
        huberized_solve(x_pred, y, gains, params, 1e-12);
    EXPECT_LE(objective_grad(x_star, x_pred, y, gains, params).norm(), 1e-8);

    const Eigen::VectorXd x_iskf = ss_iskf_step(x_hat, y, gains, params);
    EXPECT_LE((x_iskf - x_star).norm(), 1e-6 * (1.0 + x_star.norm()));
  }
}

TEST(HuberizedSolve, ValidatesToleranceAndIterationCap) {
  const SystemModel m = scalar_model(0.0, 1.0);
  const GainSet gains = solve_steady(m);
  const IskfParams params(0.5, 0.5, 1, 1.0);
  EXPECT_THROW(
      huberized_solve(scalar_vec(0.0), scalar_vec(10.0), gains, params, 0.0),
      iskf::InvalidParameter);
  EXPECT_THROW(huberized_solve(scalar_vec(0.0), scalar_vec(10.0), gains,
                               params, 1e-15, 1),
               iskf::NoConvergence);
}

TEST(MaskedUpdate, FullMaskMatchesIskfStepExactly) {
  NoiseStream rng(47);
  const SystemModel m = testutil::random_system(rng, 4, 3);
  const GainSet gains = solve_steady(m);
  const IskfParams params(0.7, 1.3, 2, 1.0);
  FilterState s = initial_state(gains);
  s.x_hat = testutil::random_vector(rng, 4);
  const Eigen::VectorXd y = testutil::random_vector(rng, 3);
  const std::vector<bool> mask(3, true);
  const FilterState a = iskf_step(s, y, m, params);
  const FilterState b = masked_update(s, y, mask, m, params);
  EXPECT_TRUE((a.x_hat.array() == b.x_hat.array()).all());
  EXPECT_TRUE((a.P_post.array() == b.P_post.array()).all());
  EXPECT_EQ(a.t, b.t);
}

TEST(MaskedUpdate, EmptyMaskIsPurePrediction) {
  NoiseStream rng(48);
  const SystemModel m = testutil::random_system(rng, 4, 3);
  const GainSet gains = solve_steady(m);
  FilterState s = initial_state(gains);
  s.x_hat = testutil::random_vector(rng, 4);
  const std::vector<bool> mask(3, false);
  const FilterState next = masked_update(s, Eigen::VectorXd(), mask, m,
                                         IskfParams(0.7, 1.3, 2, 1.0));
  const Eigen::VectorXd x_expected = m.A * s.x_hat;
  const Eigen::MatrixXd P_expected = iskf::covariance_predict(s.P_post, m);
  EXPECT_TRUE((next.x_hat.array() == x_expected.array()).all());
  EXPECT_TRUE((next.P_post.array() == P_expected.array()).all());
  EXPECT_EQ(next.t, s.t + 1);
}

TEST(MaskedUpdate, PartialMaskMatchesReducedModelExactly) {
  NoiseStream rng(49);
  const SystemModel m = testutil::random_system(rng, 4, 3);
  const GainSet gains = solve_steady(m);
  const IskfParams params(0.7, 1.3, 2, 1.0);
  FilterState s = initial_state(gains);
  s.x_hat = testutil::random_vector(rng, 4);
  const Eigen::VectorXd y = testutil::random_vector(rng, 3);

  const std::vector<bool> mask{true, false, true};
  Eigen::VectorXd y_red(2);
  y_red << y(0), y(2);

  SystemModel reduced;
  reduced.A = m.A;
  reduced.C = Eigen::MatrixXd(2, 4);
  reduced.C.row(0) = m.C.row(0);
  reduced.C.row(1) = m.C.row(2);
  reduced.F = m.F;
  reduced.G = Eigen::MatrixXd::Identity(2, 2);  // unused by the update core
  reduced.W = m.W;
  reduced.V = Eigen::MatrixXd(2, 2);
  reduced.V << m.V(0, 0), m.V(0, 2), m.V(2, 0), m.V(2, 2);
  reduced.n = 4;
  reduced.p = 2;
  reduced.m = m.m;

  const FilterState a = iskf_step(s, y_red, reduced, params);
  const FilterState b = masked_update(s, y_red, mask, m, params);
  EXPECT_TRUE((a.x_hat.array() == b.x_hat.array()).all());
  EXPECT_TRUE((a.P_post.array() == b.P_post.array()).all());
}

TEST(MaskedUpdate, ValidatesMaskAndMeasurement) {
  NoiseStream rng(50);
  const SystemModel m = testutil::random_system(rng, 3, 2);
  const GainSet gains = solve_steady(m);
  const FilterState s = initial_state(gains);
  EXPECT_THROW(masked_update(s, Eigen::VectorXd::Zero(2),
                             std::vector<bool>{true}, m, IskfParams()),
               iskf::DimensionMismatch);
  EXPECT_THROW(masked_update(s, Eigen::VectorXd::Zero(2),
                             std::vector<bool>{true, false}, m, IskfParams()),
               iskf::DimensionMismatch);
}

}  // namespace
