// SPDX-License-Identifier: Apache-2.0
//
// State-space modeling utilities: ZOH discretization, power-supply and
// Pade delay models, sensor-array output reduction, series composition,
// and a seeded synthetic unstable plant used throughout the toolkit.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace rwmpc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class TimeDomain { Continuous, Discrete };

struct StateSpaceModel {
  Mat A;  // n x n
  Mat B;  // n x m
  Mat C;  // p x n
  Mat D;  // p x m, zero unless the realization is biproper
  std::optional<Mat> C_aux;  // auxiliary outputs (coil-current analog), q x n
  TimeDomain domain = TimeDomain::Continuous;
  double Ts = 0.0;  // sampling time, seconds; meaningful when discrete

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index m() const { return B.cols(); }
  Eigen::Index p() const { return C.rows(); }

  void validate() const;  // throws std::invalid_argument on inconsistency
};

struct PsSpec {
  double v_min = -144.0;  // volts
  double v_max = 144.0;
  double lag_tau = 7.5e-3;  // seconds
  double delay = 2.5e-3;    // seconds
  int pade_order = 3;

  void validate() const;
};

struct SurrogateSpec {
  double gamma = 19.0;  // unstable growth rate, 1/s
  double omega = 0.26;  // rotation frequency, 1/s
  int n_stable = 24;    // stable wall-mode count
  double tau_min = 1e-3;  // stable time-constant range, seconds
  double tau_max = 2e-2;
  int n_inputs = 27;
  int n_outputs = 6;
  bool coil_current_outputs = true;  // emit C_aux with n_inputs rows
  std::uint64_t seed = 1;

  void validate() const;
};

struct OutputReducer {
  std::vector<double> angles_deg;
  Mat T_out;  // 2 x p pseudoinverse of the [cos, sin] regressor

  static OutputReducer from_angles(const std::vector<double>& angles_deg);
  Vec reduce(const Vec& y_m) const;
  // The p x 2 regressor with rows [cos(phi_i), sin(phi_i)].
  Mat regressor() const;
};

// Matrix exponential (scaling-and-squaring Pade).
Mat expm(const Mat& a);

// Zero-order-hold discretization via the augmented-matrix exponential.
StateSpaceModel zoh_discretize(const StateSpaceModel& m, double Ts);

// State-space realization of the [order/order] Pade approximant of a pure
// delay exp(-s*delay). Unity DC gain, all-pass. Only order 3 is supported.
StateSpaceModel pade_delay(double delay, int order = 3);

// Per-channel first-order lag in series with the Pade delay, replicated
// over the channel count. Saturation is not part of the linear model; the
// simulator applies it at the plant input.
StateSpaceModel build_ps_model(const PsSpec& spec, int channels);

// Seeded synthetic unstable plant: one unstable complex pair
// (gamma +- j*omega) plus stable real modes with log-spaced time
// constants, dense random input/output couplings normalized so the
// unstable mode is controllable and observable.
StateSpaceModel build_surrogate(const SurrogateSpec& spec);

// Drop the fastest stable modes of a modal-form surrogate, keeping the
// unstable pair and the `keep_stable` slowest stable modes with their
// couplings. Used to derive a reduced design model from the plant.
StateSpaceModel truncate_surrogate(const StateSpaceModel& plant, const SurrogateSpec& spec,
                                   int keep_stable);

// Standard series composition u -> m1 -> m2 -> y.
StateSpaceModel series_connect(const StateSpaceModel& m1, const StateSpaceModel& m2);

// Transfer matrix evaluated at a complex frequency point:
// C (zI - A)^{-1} B + D.
Eigen::MatrixXcd transfer_at(const StateSpaceModel& m, std::complex<double> s);

// Deterministic uniform [-1, 1) matrix entries from a seeded mt19937_64;
// entries are dyadic rationals, so results are bit-identical across
// IEEE-754 platforms.
Mat seeded_uniform(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

}  // namespace rwmpc
