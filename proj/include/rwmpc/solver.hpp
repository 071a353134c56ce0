// SPDX-License-Identifier: Apache-2.0
//
// Online primal fast gradient method with adaptive restart, in three
// arithmetic backends (double, single, fixed-point), plus the
// independent box-QP oracle and accuracy metrics.

#pragma once

#include <string>
#include <vector>

#include "rwmpc/design.hpp"

namespace rwmpc {

enum class Backend { Full, Reduced, Fwl };

std::string to_string(Backend b);
Backend backend_from_string(const std::string& s);

// Saturation events per solver phase (FWL backend only; all zero for the
// floating-point backends).
struct SatCounters {
  long long input = 0;         // quantizing the incoming state
  long long h_matvec = 0;      // H_cp * v tree kernel
  long long f_matvec = 0;      // F_p * x tree kernel
  long long gradient = 0;      // gradient combine v - (Hv + f)
  long long acceleration = 0;  // momentum update
  long long total() const {
    return input + h_matvec + f_matvec + gradient + acceleration;
  }
};

struct SolveReport {
  Backend backend = Backend::Full;
  int iterations = 0;
  Vec u_opt;        // final iterate, d elements (scaled coordinates)
  Vec u_first;      // first blocked move, m elements
  std::vector<double> cost_history;  // J per iteration
  std::vector<int> restarts;         // iterations where the restart fired
  SatCounters saturations;
  std::vector<Vec> iterates;  // filled only when requested
};

struct SolveOptions {
  bool record_iterates = false;
  bool record_cost = true;
};

// Runs exactly i_max iterations of the fast gradient method on the
// design's preconditioned QP from the (scaled) state estimate x.
// Cold-started from u = 0; i_max must not exceed the beta table length.
SolveReport fgm_solve(const MpcDesign& design, const Vec& x, int i_max,
                      Backend backend = Backend::Full, const SolveOptions& opts = {});

// Independent reference solver: cyclic coordinate descent with exact
// per-coordinate minimization and clipping, iterated to a projected-
// gradient KKT residual below tol. Shares no code with fgm_solve.
Vec oracle_solve(const CondensedQp& qp, const Vec& x, double tol = 1e-12,
                 int max_sweeps = 500000);

// Projected-gradient KKT residual of u for the box QP at state x.
double kkt_residual(const CondensedQp& qp, const Vec& x, const Vec& u);

// Normalised mean-square error between two candidate solutions, each
// coordinate scaled by its bound interval width.
double mse(const Vec& u, const Vec& u_star, const Vec& u_min_t, const Vec& u_max_t);

struct BoundCurves {
  std::vector<double> linear;     // (1 - sqrt(mu/lip))^i * J0_gap
  std::vector<double> sublinear;  // 4 * lip * R^2 / (i + 2)^2
};

// Theoretical upper bounds on the cost gap per iteration, i = 0..i_max.
BoundCurves convergence_bounds(double mu, double lip, double J0_gap, double R,
                               int i_max);

// Smallest i with linear bound <= target.
int certified_iterations(double mu, double lip, double J0_gap, double target);

// Condensed cost 0.5 u'H u + (Fx)'u + c_c(x); includes the constant term
// so reported gaps match the underlying finite-horizon cost.
double cost_of(const CondensedQp& qp, const Vec& x, const Vec& u);

}  // namespace rwmpc
