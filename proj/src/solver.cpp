// SPDX-License-Identifier: Apache-2.0

#include "rwmpc/solver.hpp"

#include <cmath>
#include <stdexcept>

namespace rwmpc {

std::string to_string(Backend b) {
  switch (b) {
    case Backend::Full: return "full";
    case Backend::Reduced: return "reduced";
    case Backend::Fwl: return "fwl";
  }
  return "full";
}

Backend backend_from_string(const std::string& s) {
  if (s == "full") return Backend::Full;
  if (s == "reduced") return Backend::Reduced;
  if (s == "fwl") return Backend::Fwl;
  throw std::invalid_argument("unknown backend: " + s + " (expected full|reduced|fwl)");
}

double cost_of(const CondensedQp& qp, const Vec& x, const Vec& u) {
  if (u.size() != qp.d() || x.size() != qp.F.cols())
    throw std::invalid_argument("cost_of: dimension mismatch");
  const double quad = 0.5 * u.dot(qp.H_c * u);
  const double lin = (qp.F * x).dot(u);
  const double cc = 0.5 * x.dot(qp.c_quad * x);
  return quad + lin + cc;
}

namespace {

// Floating-point fast gradient method, shared by the double and float
// backends. The iteration multiplies by the preconditioned Hessian
// directly, so no per-iteration scaling is needed.
template <typename Scalar>
void fgm_dense(const MpcDesign& dsn, const Vec& x, int i_max, const SolveOptions& opts,
               SolveReport& report) {
  using MatS = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using VecS = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const MatS h = dsn.pre.H_cp.cast<Scalar>();
  const MatS fp = dsn.F_p.cast<Scalar>();
  const VecS lb = dsn.qp.lb.cast<Scalar>();
  const VecS ub = dsn.qp.ub.cast<Scalar>();
  const VecS f = fp * x.cast<Scalar>();
  const Eigen::Index d = h.rows();

  VecS u_prev = VecS::Zero(d);
  VecS u = VecS::Zero(d);
  VecS v = VecS::Zero(d);
  for (int i = 1; i <= i_max; ++i) {
    const VecS chi = v - (h * v + f);
    u = chi.cwiseMax(lb).cwiseMin(ub);
    const Scalar beta = static_cast<Scalar>(dsn.beta[static_cast<std::size_t>(i - 1)]);
    VecS v_next = u + beta * (u - u_prev);
    if ((v - u).dot(u - u_prev) > Scalar(0)) {
      v_next = u_prev;
      u = u_prev;
      report.restarts.push_back(i);
    }
    v = v_next;
    u_prev = u;
    if (opts.record_cost)
      report.cost_history.push_back(cost_of(dsn.qp, x, u.template cast<double>()));
    if (opts.record_iterates) report.iterates.push_back(u.template cast<double>());
  }
  report.u_opt = u.template cast<double>();
}

void fgm_fwl(const MpcDesign& dsn, const Vec& x, int i_max, const SolveOptions& opts,
             SolveReport& report) {
  const FwlData& fw = dsn.fwl;
  const FixedFormat& base = fw.formats.base;
  const std::size_t d = static_cast<std::size_t>(dsn.d());
  SatCounters& sat = report.saturations;

  QuantStats st_in;
  FixedVector xq = FixedVector::quantized(
      std::vector<double>(x.data(), x.data() + x.size()), base, &st_in);
  sat.input += st_in.saturations;

  QuantStats st_f;
  const FixedVector f = tree_matvec(fw.F, xq, fw.sched_f, &st_f);
  sat.f_matvec += st_f.saturations;

  // Differences of base-format values are exact in this widened format.
  FixedFormat diff_fmt = base;
  diff_fmt.width += 2;
  diff_fmt.int_bits += 2;

  FixedVector u_prev(d, base), u(d, base), v(d, base);
  const auto to_vec = [&](const FixedVector& fv) {
    Vec out(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) out(static_cast<Eigen::Index>(j)) = fv.value(j);
    return out;
  };

  for (int i = 1; i <= i_max; ++i) {
    QuantStats st_h;
    const FixedVector hv = tree_matvec(fw.H, v, fw.sched_h, &st_h);
    sat.h_matvec += st_h.saturations;

    // chi = v - (H v + f), one rounding per store.
    FixedVector chi(d, base);
    {
      QuantStats st_g;
      for (std::size_t j = 0; j < d; ++j) {
        const FixedValue g = fx_add(FixedValue{hv.raw[j], base},
                                    FixedValue{f.raw[j], base}, base, &st_g);
        chi.raw[j] =
            fx_sub(FixedValue{v.raw[j], base}, g, base, &st_g).raw;
      }
      sat.gradient += st_g.saturations;
    }

    // Projection: raw-level clipping, exact.
    FixedVector u_new(d, base);
    for (std::size_t j = 0; j < d; ++j) {
      Int128 r = chi.raw[j];
      if (r < fw.lb.raw[j]) r = fw.lb.raw[j];
      if (r > fw.ub.raw[j]) r = fw.ub.raw[j];
      u_new.raw[j] = r;
    }

    // Restart test on exact raw differences, accumulated full-precision in
    // the wide accumulator; only the sign is consumed.
    Int128 dot = 0;
    for (std::size_t j = 0; j < d; ++j)
      dot += (v.raw[j] - u_new.raw[j]) * (u_new.raw[j] - u_prev.raw[j]);

    const FixedValue beta_i{fw.beta.raw[static_cast<std::size_t>(i - 1)],
                            fw.formats.beta};
    FixedVector v_next(d, base);
    {
      QuantStats st_a;
      for (std::size_t j = 0; j < d; ++j) {
        const FixedValue diff{u_new.raw[j] - u_prev.raw[j], diff_fmt};
        const FixedValue scaled = fx_mul(beta_i, diff, base, &st_a);
        v_next.raw[j] =
            fx_add(FixedValue{u_new.raw[j], base}, scaled, base, &st_a).raw;
      }
      sat.acceleration += st_a.saturations;
    }

    if (dot > 0) {
      v_next = u_prev;
      u_new = u_prev;
      report.restarts.push_back(i);
    }
    v = v_next;
    u = u_new;
    u_prev = u;
    if (opts.record_cost) report.cost_history.push_back(cost_of(dsn.qp, x, to_vec(u)));
    if (opts.record_iterates) report.iterates.push_back(to_vec(u));
  }
  report.u_opt = to_vec(u);
}

}  // namespace

SolveReport fgm_solve(const MpcDesign& design, const Vec& x, int i_max, Backend backend,
                      const SolveOptions& opts) {
  if (x.size() != design.n())
    throw std::invalid_argument("fgm_solve: state dimension mismatch");
  if (!x.allFinite()) throw std::invalid_argument("fgm_solve: non-finite state");
  if (i_max < 1 || static_cast<std::size_t>(i_max) > design.beta.size())
    throw std::invalid_argument("fgm_solve: i_max must be in [1, beta table length]");

  SolveReport report;
  report.backend = backend;
  report.iterations = i_max;
  switch (backend) {
    case Backend::Full: fgm_dense<double>(design, x, i_max, opts, report); break;
    case Backend::Reduced: fgm_dense<float>(design, x, i_max, opts, report); break;
    case Backend::Fwl: fgm_fwl(design, x, i_max, opts, report); break;
  }
  report.u_first = report.u_opt.head(design.m());
  return report;
}

double kkt_residual(const CondensedQp& qp, const Vec& x, const Vec& u) {
  const Vec g = qp.H_c * u + qp.F * x;
  const Vec proj = (u - g).cwiseMax(qp.lb).cwiseMin(qp.ub);
  return (u - proj).cwiseAbs().maxCoeff();
}

Vec oracle_solve(const CondensedQp& qp, const Vec& x, double tol, int max_sweeps) {
  const Eigen::Index d = qp.d();
  if (x.size() != qp.F.cols())
    throw std::invalid_argument("oracle_solve: state dimension mismatch");
  if ((qp.H_c.diagonal().array() <= 0).any())
    throw std::invalid_argument("oracle_solve: Hessian must be positive definite");
  const Vec f = qp.F * x;
  Vec u = Vec::Zero(d);
  Vec g = f;  // gradient of the quadratic at u = 0
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (Eigen::Index j = 0; j < d; ++j) {
      // Exact minimizer along coordinate j, then clip.
      double uj = u(j) - g(j) / qp.H_c(j, j);
      uj = std::min(qp.ub(j), std::max(qp.lb(j), uj));
      const double delta = uj - u(j);
      if (delta != 0.0) {
        g.noalias() += delta * qp.H_c.col(j);
        u(j) = uj;
      }
    }
    const Vec proj = (u - g).cwiseMax(qp.lb).cwiseMin(qp.ub);
    if ((u - proj).cwiseAbs().maxCoeff() <= tol) return u;
  }
  throw std::runtime_error("oracle_solve: KKT residual " +
                           std::to_string(kkt_residual(qp, x, u)) +
                           " after max sweeps");
}

double mse(const Vec& u, const Vec& u_star, const Vec& u_min_t, const Vec& u_max_t) {
  const Eigen::Index d = u.size();
  if (u_star.size() != d || u_min_t.size() != d || u_max_t.size() != d)
    throw std::invalid_argument("mse: dimension mismatch");
  double acc = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) {
    const double w = u_max_t(k) - u_min_t(k);
    if (w <= 0.0) throw std::invalid_argument("mse: zero-width bound interval");
    const double e = (u(k) - u_star(k)) / w;
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(d));
}

BoundCurves convergence_bounds(double mu, double lip, double J0_gap, double R,
                               int i_max) {
  if (!(mu > 0.0) || !(lip >= mu))
    throw std::invalid_argument("convergence_bounds: need 0 < mu <= lip");
  if (i_max < 0) throw std::invalid_argument("convergence_bounds: i_max must be >= 0");
  BoundCurves curves;
  const double rate = 1.0 - std::sqrt(mu / lip);
  curves.linear.resize(static_cast<std::size_t>(i_max) + 1);
  curves.sublinear.resize(static_cast<std::size_t>(i_max) + 1);
  double lin = J0_gap;
  for (int i = 0; i <= i_max; ++i) {
    curves.linear[static_cast<std::size_t>(i)] = lin;
    curves.sublinear[static_cast<std::size_t>(i)] =
        4.0 * lip * R * R / ((i + 2.0) * (i + 2.0));
    lin *= rate;
  }
  return curves;
}

int certified_iterations(double mu, double lip, double J0_gap, double target) {
  if (!(mu > 0.0) || !(lip >= mu))
    throw std::invalid_argument("certified_iterations: need 0 < mu <= lip");
  if (!(target > 0.0) || !(J0_gap > 0.0))
    throw std::invalid_argument("certified_iterations: gaps must be positive");
  if (J0_gap <= target) return 0;
  const double rate = 1.0 - std::sqrt(mu / lip);
  if (rate <= 0.0) return 1;
  return static_cast<int>(std::ceil(std::log(target / J0_gap) / std::log(rate)));
}

}  // namespace rwmpc
