// SPDX-License-Identifier: Apache-2.0
//
// Offline controller synthesis: Riccati solutions, signal scaling, move
// blocking, condensing to the box-constrained QP, diagonal
// preconditioning and the momentum sequence. The result is an immutable
// MpcDesign consumed by the online solver.

#pragma once

#include <cstdint>
#include <vector>

#include "rwmpc/fixed.hpp"
#include "rwmpc/statespace.hpp"

namespace rwmpc {

struct MpcTuning {
  Mat Q_C;  // state cost, PSD
  Mat R_C;  // input cost, PD
  int N = 80;
  std::vector<int> blocks{2, 2, 76};  // move-blocking interval lengths
  Vec u_min, u_max;                   // per-channel bounds, volts
  Mat Q_K;  // process-noise tuning, PSD
  Mat R_K;  // measurement-noise tuning, PD

  int n_blocks() const { return static_cast<int>(blocks.size()); }
  void validate(Eigen::Index n, Eigen::Index m, Eigen::Index p) const;
};

struct ScalingSet {
  Vec k_u;  // u = K_u * u_s
  Vec k_x;  // x = K_x * x_s
  Vec k_y;  // y_s = K_y * y

  static ScalingSet identity(Eigen::Index m, Eigen::Index n, Eigen::Index p);
  void validate() const;
};

struct CondensedQp {
  Mat H_c;     // d x d, symmetric PD
  Mat F;       // d x n; f_c = F * x
  Mat c_quad;  // n x n; c_c(x) = 0.5 * x' * c_quad * x (diagnostics only)
  Vec lb, ub;  // bounds tiled over blocks, d-vectors
  std::vector<int> blocks;
  Eigen::Index m = 0;  // input channels

  Eigen::Index d() const { return H_c.rows(); }
};

struct Preconditioner {
  Vec L;     // diagonal of L; the solver uses H_cp = L^{-1} H_c
  Mat H_cp;  // preconditioned Hessian, spectral radius 1
  double mu = 0.0;   // smallest eigenvalue of L^{-1/2} H_c L^{-1/2}
  double lip = 1.0;  // largest eigenvalue (normalized to 1)
};

// Fixed-point format assignments for the FWL solver backend.
struct FwlFormats {
  FixedFormat base{27, 2};       // iterates v, chi, u
  FixedFormat hessian{27, -1};   // H_cp entries
  FixedFormat gradient_map{27, 2};  // F_p entries
  FixedFormat beta{27, 1};
  int product_width = 35;
  int restart_width = 64;  // restart dot-product accumulator
  int restart_int_bits = 14;

  void validate() const;
};

// Pre-quantized design data for the FWL backend, fixed at design time so
// every solve is bit-exact and shareable across threads.
struct FwlData {
  FwlFormats formats;
  FixedMatrix H;        // H_cp in hessian format
  FixedMatrix F;        // F_p = L^{-1} F in gradient_map format
  FixedVector lb, ub;   // bounds in base format
  FixedVector beta;     // momentum table in beta format
  TreeSchedule sched_h;  // H * v schedule
  TreeSchedule sched_f;  // F_p * x schedule
};

struct MpcDesign {
  StateSpaceModel model_s;  // scaled discrete design model
  CondensedQp qp;           // in scaled coordinates
  Preconditioner pre;
  Mat F_p;  // L^{-1} F; gradient offset map used by the solver
  std::vector<double> beta;
  Mat M_K;   // Kalman gain, n x p
  Mat K_lq;  // unconstrained LQ gain (saturated-LQ baseline), m x n
  ScalingSet scaling;
  Mat P;  // terminal cost
  FwlData fwl;
  MpcTuning tuning;  // provenance

  Eigen::Index d() const { return qp.d(); }
  Eigen::Index n() const { return model_s.n(); }
  Eigen::Index m() const { return model_s.m(); }
};

// Steady-state solution of P = A'PA - A'PB (R + B'PB)^{-1} B'PA + Q via
// structure-preserving doubling; accepted solutions satisfy a relative
// residual of 1e-10.
Mat solve_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R);

// Steady-state Kalman gain M_K = S C' (C S C' + R_K)^{-1} from the
// filtering Riccati equation; the observer matrix (I - M_K C) A is
// verified to have spectral radius < 1.
Mat kalman_gain(const Mat& A, const Mat& C, const Mat& Q_K, const Mat& R_K);

ScalingSet make_scaling(const Vec& u_max, const Vec& state_ranges, const Vec& y_ranges);
StateSpaceModel scale_model(const StateSpaceModel& model, const ScalingSet& s);
MpcTuning scale_tuning(const MpcTuning& t, const ScalingSet& s);

// Binary expansion matrix mapping blocked moves to per-step inputs.
Mat blocking_matrix(const std::vector<int>& blocks, Eigen::Index m);

CondensedQp condense(const StateSpaceModel& model_s, const MpcTuning& tuning_s,
                     const Mat& P, const std::vector<int>& blocks);

Preconditioner precondition(const CondensedQp& qp);

enum class BetaSchedule { Constant, AlphaRecursion };

// Momentum sequence. Schedule (a) is the constant strongly-convex value
// (sqrt(lip)-sqrt(mu))/(sqrt(lip)+sqrt(mu)); schedule (b) runs the alpha
// recursion alpha_{i+1}^2 = (1-alpha_{i+1}) alpha_i^2 + (mu/lip) alpha_{i+1}
// from alpha_0 (default sqrt(mu/lip), which makes (b) coincide with (a)).
std::vector<double> beta_sequence(double mu, double lip, int i_max,
                                  BetaSchedule schedule = BetaSchedule::AlphaRecursion,
                                  double alpha0 = -1.0);

struct DesignOptions {
  int beta_table_len = 50;
  FwlFormats fwl;
  BetaSchedule beta_schedule = BetaSchedule::AlphaRecursion;
};

MpcDesign build_design(const StateSpaceModel& model, const MpcTuning& tuning,
                       const ScalingSet& scaling, const DesignOptions& opts = {});

double spectral_radius(const Mat& a);

}  // namespace rwmpc
