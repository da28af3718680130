#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "iskf/errors.hpp"
#include "iskf/model.hpp"

namespace iskf {

namespace detail {

/// Seeded noise source with a fixed, documented stream: uniform() consumes
/// one engine draw, gaussian() consumes exactly two (Box-Muller, second
/// variate discarded). This pins the draw order so trajectories are
/// bit-reproducible from the seed and oracles can replay the stream.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1), 53 bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on (0, 1] x [0, 1).
  double gaussian() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

  Eigen::VectorXd gaussian_vector(Eigen::Index d) {
    Eigen::VectorXd g(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      g(i) = gaussian();
    }
    return g;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace detail

/// A simulated rollout: states x_0..x_T, measurements y_1..y_T, and one
/// outlier-branch flag per step and channel.
struct Trajectory {
  std::vector<Eigen::VectorXd> states;        // T + 1 entries
  std::vector<Eigen::VectorXd> measurements;  // T entries, y_t at index t-1
  std::vector<bool> process_outlier_flags;    // T entries, w_t at index t
  std::vector<bool> meas_outlier_flags;       // T entries, v_t at index t-1
  std::uint64_t seed = 0;

  long steps() const { return static_cast<long>(measurements.size()); }
};

/// Rolls the system forward T steps under mixture noise. Per-step draw order:
/// process-branch uniform, process Gaussian block (m draws), measurement-
/// branch uniform, measurement Gaussian block (p draws). On an outlier step
/// the shaped noise is multiplied by sqrt(scale). Same arguments, same
/// trajectory, bit for bit.
inline Trajectory simulate(const SystemModel& model, const OutlierSpec& spec,
                           long T, std::uint64_t seed,
                           const Eigen::VectorXd& x0 = Eigen::VectorXd()) {
  if (T < 1) {
    throw InvalidParameter("T must be >= 1");
  }
  Eigen::VectorXd x = x0.size() == 0 ? Eigen::VectorXd::Zero(model.n) : x0;
  if (x.size() != model.n) {
    throw DimensionMismatch("x0 dimension does not match the model");
  }
  detail::NoiseStream rng(seed);
  Trajectory traj;
  traj.seed = seed;
  traj.states.reserve(T + 1);
  traj.measurements.reserve(T);
  traj.process_outlier_flags.reserve(T);
  traj.meas_outlier_flags.reserve(T);
  traj.states.push_back(x);
  const double sqrt_sp = std::sqrt(spec.scale_process);
  const double sqrt_sm = std::sqrt(spec.scale_meas);
  for (long t = 0; t < T; ++t) {
    const bool proc_outlier = rng.uniform() < spec.p_process;
    Eigen::VectorXd w = model.F * rng.gaussian_vector(model.m);
    if (proc_outlier) {
      w *= sqrt_sp;
    }
    const bool meas_outlier = rng.uniform() < spec.p_meas;
    Eigen::VectorXd v = model.G * rng.gaussian_vector(model.p);
    if (meas_outlier) {
      v *= sqrt_sm;
    }
    x = model.A * x + w;
    traj.states.push_back(x);
    traj.measurements.push_back(model.C * x + v);
    traj.process_outlier_flags.push_back(proc_outlier);
    traj.meas_outlier_flags.push_back(meas_outlier);
  }
  return traj;
}

}  // namespace iskf
