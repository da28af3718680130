#include "iskf/sim.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "iskf/model.hpp"
#include "test_util.hpp"

namespace {

using iskf::build_model;
using iskf::OutlierSpec;
using iskf::simulate;
using iskf::SystemModel;
using iskf::Trajectory;
using testutil::NoiseStream;

SystemModel scalar_model(double a, double c, double f = 1.0, double g = 1.0) {
  Eigen::MatrixXd A(1, 1), C(1, 1), F(1, 1), G(1, 1);
  A << a;
  C << c;
  F << f;
  G << g;
  return build_model(A, C, F, G);
}

// A noise-free model (F = 0, G = 0) assembled directly; build_model would
// reject the singular V, but the simulator itself never factors it.
SystemModel noise_free_model() {
  SystemModel m;
  m.A = Eigen::MatrixXd(2, 2);
  m.A << 1.0, 0.1, 0.0, 0.9;
  m.C = Eigen::MatrixXd(1, 2);
  m.C << 1.0, 2.0;
  m.F = Eigen::MatrixXd::Zero(2, 1);
  m.G = Eigen::MatrixXd::Zero(1, 1);
  m.W = Eigen::MatrixXd::Zero(2, 2);
  m.V = Eigen::MatrixXd::Zero(1, 1);
  m.n = 2;
  m.p = 1;
  m.m = 1;
  return m;
}

TEST(Simulate, NoiseFreeRolloutIsExact) {
  const SystemModel m = noise_free_model();
  Eigen::VectorXd x0(2);
  x0 << 1.0, 2.0;
  const Trajectory traj = simulate(m, OutlierSpec(), 20, 7, x0);
  ASSERT_EQ(traj.states.size(), 21u);
  ASSERT_EQ(traj.measurements.size(), 20u);
  Eigen::VectorXd x = x0;
  EXPECT_TRUE((traj.states[0].array() == x.array()).all());
  for (int t = 0; t < 20; ++t) {
    x = m.A * x;
    ASSERT_TRUE((traj.states[t + 1].array() == x.array()).all());
    const Eigen::VectorXd y = m.C * x;
    ASSERT_TRUE((traj.measurements[t].array() == y.array()).all());
    ASSERT_FALSE(traj.process_outlier_flags[t]);
    ASSERT_FALSE(traj.meas_outlier_flags[t]);
  }
}

TEST(Simulate, SameSeedSameTrajectory) {
  const SystemModel m = scalar_model(0.5, 1.0);
  const OutlierSpec spec(0.1, 10.0, 0.1, 100.0);
  const Trajectory a = simulate(m, spec, 200, 123);
  const Trajectory b = simulate(m, spec, 200, 123);
  ASSERT_EQ(a.states.size(), b.states.size());
  for (std::size_t t = 0; t < a.states.size(); ++t) {
    ASSERT_TRUE((a.states[t].array() == b.states[t].array()).all());
  }
  for (std::size_t t = 0; t < a.measurements.size(); ++t) {
    ASSERT_TRUE((a.measurements[t].array() == b.measurements[t].array()).all());
    ASSERT_EQ(a.process_outlier_flags[t], b.process_outlier_flags[t]);
    ASSERT_EQ(a.meas_outlier_flags[t], b.meas_outlier_flags[t]);
  }
  EXPECT_EQ(a.seed, 123u);
}

TEST(Simulate, DifferentSeedsDiffer) {
  const SystemModel m = scalar_model(0.5, 1.0);
  const Trajectory a = simulate(m, OutlierSpec(), 50, 1);
  const Trajectory b = simulate(m, OutlierSpec(), 50, 2);
  bool any_diff = false;
  for (std::size_t t = 0; t < a.measurements.size(); ++t) {
    if (a.measurements[t](0) != b.measurements[t](0)) {
      any_diff = true;
      break;
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(Simulate, RejectsNonPositiveHorizon) {
  const SystemModel m = scalar_model(0.5, 1.0);
  EXPECT_THROW(simulate(m, OutlierSpec(), 0, 1), iskf::InvalidParameter);
  EXPECT_THROW(simulate(m, OutlierSpec(), -5, 1), iskf::InvalidParameter);
}

TEST(Simulate, InitialStateOverride) {
  const SystemModel m = scalar_model(0.5, 1.0);
  Eigen::VectorXd x0(1);
  x0 << 42.0;
  const Trajectory traj = simulate(m, OutlierSpec(), 3, 1, x0);
  EXPECT_DOUBLE_EQ(traj.states[0](0), 42.0);
  EXPECT_THROW(simulate(m, OutlierSpec(), 3, 1, Eigen::VectorXd::Zero(2)),
               iskf::DimensionMismatch);
}

TEST(Simulate, DefaultInitialStateIsZero) {
  const SystemModel m = scalar_model(0.5, 1.0);
  const Trajectory traj = simulate(m, OutlierSpec(), 3, 1);
  EXPECT_DOUBLE_EQ(traj.states[0](0), 0.0);
}

TEST(Simulate, StreamOrderReplayOracle) {
  // Replays the documented per-step draw order on an independent stream and
  // requires bit-for-bit agreement with the simulator.
  const auto [m, spec_builtin] = iskf::vehicle_model();
  (void)spec_builtin;
  const OutlierSpec spec(0.3, 10.0, 0.2, 100.0);
  const long T = 40;
  const std::uint64_t seed = 99;
  const Trajectory traj = simulate(m, spec, T, seed);

  NoiseStream rng(seed);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(m.n);
  for (long t = 0; t < T; ++t) {
    const bool proc = rng.uniform() < spec.p_process;
    Eigen::VectorXd w = m.F * rng.gaussian_vector(m.m);
    if (proc) {
      w *= std::sqrt(spec.scale_process);
    }
    const bool meas = rng.uniform() < spec.p_meas;
    Eigen::VectorXd v = m.G * rng.gaussian_vector(m.p);
    if (meas) {
      v *= std::sqrt(spec.scale_meas);
    }
    x = m.A * x + w;
    const Eigen::VectorXd y = m.C * x + v;
    ASSERT_TRUE((traj.states[t + 1].array() == x.array()).all()) << t;
    ASSERT_TRUE((traj.measurements[t].array() == y.array()).all()) << t;
    ASSERT_EQ(traj.process_outlier_flags[t], proc);
    ASSERT_EQ(traj.meas_outlier_flags[t], meas);
  }
}

TEST(Simulate, ZeroProbabilityMatchesUnitScaleBitwise) {
  const SystemModel m = scalar_model(0.5, 1.0);
  const Trajectory a = simulate(m, OutlierSpec(0.0, 50.0, 0.0, 70.0), 100, 5);
  const Trajectory b = simulate(m, OutlierSpec(0.0, 1.0, 0.0, 1.0), 100, 5);
  for (std::size_t t = 0; t < a.measurements.size(); ++t) {
    ASSERT_TRUE((a.states[t + 1].array() == b.states[t + 1].array()).all());
    ASSERT_TRUE((a.measurements[t].array() == b.measurements[t].array()).all());
  }
}

TEST(Simulate, OutlierFrequencyMatchesProbability) {
  const SystemModel m = scalar_model(0.5, 1.0);
  const long T = 100000;
  const Trajectory traj = simulate(m, OutlierSpec(0.1, 10.0, 0.1, 100.0), T, 8);
  long proc = 0;
  long meas = 0;
  for (long t = 0; t < T; ++t) {
    proc += traj.process_outlier_flags[t] ? 1 : 0;
    meas += traj.meas_outlier_flags[t] ? 1 : 0;
  }
  const double fp = static_cast<double>(proc) / T;
  const double fm = static_cast<double>(meas) / T;
  EXPECT_GE(fp, 0.094);
  EXPECT_LE(fp, 0.106);
  EXPECT_GE(fm, 0.094);
  EXPECT_LE(fm, 0.106);
}

TEST(Simulate, FlaggedNoiseCarriesScaledVariance) {
  // Recover w_t = x_{t+1} - A x_t and v_t = y_t - C x_t, split by flag, and
  // compare sample variances with W, scale*W (and likewise for V).
  const SystemModel m = scalar_model(0.5, 1.0);
  const double scale_p = 10.0;
  const double scale_m = 100.0;
  const long T = 200000;
  const Trajectory traj =
      simulate(m, OutlierSpec(0.1, scale_p, 0.1, scale_m), T, 9);
  double w_out = 0.0, w_in = 0.0, v_out = 0.0, v_in = 0.0;
  long nw_out = 0, nw_in = 0, nv_out = 0, nv_in = 0;
  for (long t = 0; t < T; ++t) {
    const double w = traj.states[t + 1](0) - 0.5 * traj.states[t](0);
    const double v = traj.measurements[t](0) - traj.states[t + 1](0);
    if (traj.process_outlier_flags[t]) {
      w_out += w * w;
      ++nw_out;
    } else {
      w_in += w * w;
      ++nw_in;
    }
    if (traj.meas_outlier_flags[t]) {
      v_out += v * v;
      ++nv_out;
    } else {
      v_in += v * v;
      ++nv_in;
    }
  }
  ASSERT_GE(nw_out, 10000);
  ASSERT_GE(nv_out, 10000);
  EXPECT_NEAR(w_in / nw_in, 1.0, 0.1);
  EXPECT_NEAR(w_out / nw_out, scale_p, 0.1 * scale_p);
  EXPECT_NEAR(v_in / nv_in, 1.0, 0.1);
  EXPECT_NEAR(v_out / nv_out, scale_m, 0.1 * scale_m);
}

TEST(Trajectory, StepsReportsHorizon) {
  const SystemModel m = scalar_model(0.5, 1.0);
  EXPECT_EQ(simulate(m, OutlierSpec(), 17, 1).steps(), 17);
}

}  // namespace
