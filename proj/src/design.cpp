// SPDX-License-Identifier: Apache-2.0

#include "rwmpc/design.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rwmpc {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_symmetric_psd(const Mat& m, const char* name, bool strict) {
  if (m.rows() != m.cols())
    throw std::invalid_argument(std::string(name) + " must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw std::invalid_argument(std::string(name) + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()),
                                        Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  if (strict ? lo <= 0.0 : lo < -1e-10 * scale)
    throw std::invalid_argument(std::string(name) +
                                (strict ? " must be positive definite"
                                        : " must be positive semidefinite"));
}

}  // namespace

double spectral_radius(const Mat& a) {
  return a.eigenvalues().cwiseAbs().maxCoeff();
}

void MpcTuning::validate(Eigen::Index n, Eigen::Index m, Eigen::Index p) const {
  require(Q_C.rows() == n && Q_C.cols() == n, "tuning: Q_C must be n x n");
  require(R_C.rows() == m && R_C.cols() == m, "tuning: R_C must be m x m");
  require(Q_K.rows() == n && Q_K.cols() == n, "tuning: Q_K must be n x n");
  require(R_K.rows() == p && R_K.cols() == p, "tuning: R_K must be p x p");
  require(N >= 1, "tuning: horizon must be >= 1");
  require(!blocks.empty(), "tuning: blocks must be non-empty");
  int sum = 0;
  for (int b : blocks) {
    require(b >= 1, "tuning: block lengths must be >= 1");
    sum += b;
  }
  require(sum == N, "tuning: block lengths must sum to N");
  require(u_min.size() == m && u_max.size() == m, "tuning: bounds must be m-vectors");
  require((u_min.array() < u_max.array()).all(), "tuning: u_min must be < u_max");
  check_symmetric_psd(Q_C, "tuning: Q_C", false);
  check_symmetric_psd(R_C, "tuning: R_C", true);
  check_symmetric_psd(Q_K, "tuning: Q_K", false);
  check_symmetric_psd(R_K, "tuning: R_K", true);
}

ScalingSet ScalingSet::identity(Eigen::Index m, Eigen::Index n, Eigen::Index p) {
  return ScalingSet{Vec::Ones(m), Vec::Ones(n), Vec::Ones(p)};
}

void ScalingSet::validate() const {
  require((k_u.array() > 0).all() && (k_x.array() > 0).all() && (k_y.array() > 0).all(),
          "scaling: diagonals must be positive");
}

Mat solve_dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R) {
  const Eigen::Index n = A.rows();
  require(A.cols() == n && B.rows() == n, "dare: dimension mismatch");
  check_symmetric_psd(Q, "dare: Q", false);
  check_symmetric_psd(R, "dare: R", true);

  // Structure-preserving doubling on (A_k, G_k, H_k); H_k -> P.
  Mat Ak = A;
  Mat Gk = B * R.llt().solve(B.transpose());
  Mat Hk = Q;
  const int cap = 1000;
  double rel = 1.0;
  for (int it = 0; it < cap; ++it) {
    const Mat W = Mat::Identity(n, n) + Gk * Hk;
    const auto lu = W.partialPivLu();
    const Mat X = lu.solve(Ak);         // (I + G H)^{-1} A
    const Mat WG = lu.solve(Gk);        // (I + G H)^{-1} G
    const Mat Hn = Hk + Ak.transpose() * Hk * X;
    const Mat Gn = Gk + Ak * WG * Ak.transpose();
    const Mat An = Ak * X;
    rel = (Hn - Hk).cwiseAbs().maxCoeff() / std::max(1.0, Hn.cwiseAbs().maxCoeff());
    Ak = An;
    Gk = 0.5 * (Gn + Gn.transpose());
    Hk = 0.5 * (Hn + Hn.transpose());
    if (!Hk.allFinite())
      throw std::runtime_error("dare: iteration diverged (system not stabilizable?)");
    if (rel <= 1e-14) break;
  }
  if (rel > 1e-14)
    throw std::runtime_error("dare: no convergence within iteration cap, last step " +
                             std::to_string(rel));

  const Mat P = Hk;
  const Mat BtPB = B.transpose() * P * B;
  const Mat res = A.transpose() * P * A - P -
                  A.transpose() * P * B * (R + BtPB).llt().solve(B.transpose() * P * A) +
                  Q;
  const double rel_res =
      res.cwiseAbs().maxCoeff() / std::max(1.0, P.cwiseAbs().maxCoeff());
  if (rel_res > 1e-10)
    throw std::runtime_error("dare: residual " + std::to_string(rel_res) +
                             " exceeds 1e-10");
  return P;
}

Mat kalman_gain(const Mat& A, const Mat& C, const Mat& Q_K, const Mat& R_K) {
  const Mat S = solve_dare(A.transpose(), C.transpose(), Q_K, R_K);
  const Mat M = S * C.transpose() *
                (C * S * C.transpose() + R_K)
                    .llt()
                    .solve(Mat::Identity(C.rows(), C.rows()));
  const Mat obs = (Mat::Identity(A.rows(), A.rows()) - M * C) * A;
  const double sr = spectral_radius(obs);
  if (sr >= 1.0)
    throw std::runtime_error("kalman_gain: observer spectral radius " +
                             std::to_string(sr) + " is not < 1 (undetectable modes?)");
  return M;
}

ScalingSet make_scaling(const Vec& u_max, const Vec& state_ranges, const Vec& y_ranges) {
  require((u_max.array() > 0).all(), "make_scaling: input bounds must be positive");
  require((state_ranges.array() > 0).all(), "make_scaling: state ranges must be positive");
  require((y_ranges.array() > 0).all(), "make_scaling: output ranges must be positive");
  // u = K_u u_s and x = K_x x_s map [-1,1] onto the ranges; y_s = K_y y
  // shrinks outputs into [-1,1], hence the inverse.
  return ScalingSet{u_max, state_ranges, y_ranges.cwiseInverse()};
}

StateSpaceModel scale_model(const StateSpaceModel& model, const ScalingSet& s) {
  model.validate();
  s.validate();
  require(s.k_x.size() == model.n() && s.k_u.size() == model.m() &&
              s.k_y.size() == model.p(),
          "scale_model: scaling dimension mismatch");
  const Vec kx_inv = s.k_x.cwiseInverse();
  StateSpaceModel out = model;
  out.A = kx_inv.asDiagonal() * model.A * s.k_x.asDiagonal();
  out.B = kx_inv.asDiagonal() * model.B * s.k_u.asDiagonal();
  out.C = s.k_y.asDiagonal() * model.C * s.k_x.asDiagonal();
  if (model.D.size() > 0)
    out.D = s.k_y.asDiagonal() * model.D * s.k_u.asDiagonal();
  if (model.C_aux) out.C_aux = *model.C_aux * s.k_x.asDiagonal();
  return out;
}

MpcTuning scale_tuning(const MpcTuning& t, const ScalingSet& s) {
  MpcTuning out = t;
  const Vec kx_inv = s.k_x.cwiseInverse();
  out.Q_C = s.k_x.asDiagonal() * t.Q_C * s.k_x.asDiagonal();
  out.R_C = s.k_u.asDiagonal() * t.R_C * s.k_u.asDiagonal();
  out.Q_K = kx_inv.asDiagonal() * t.Q_K * kx_inv.asDiagonal();
  out.R_K = s.k_y.asDiagonal() * t.R_K * s.k_y.asDiagonal();
  out.u_min = t.u_min.cwiseQuotient(s.k_u);
  out.u_max = t.u_max.cwiseQuotient(s.k_u);
  return out;
}

Mat blocking_matrix(const std::vector<int>& blocks, Eigen::Index m) {
  require(!blocks.empty() && m >= 1, "blocking_matrix: bad arguments");
  int N = 0;
  for (int b : blocks) {
    require(b >= 1, "blocking_matrix: block lengths must be >= 1");
    N += b;
  }
  Mat T = Mat::Zero(static_cast<Eigen::Index>(N) * m,
                    static_cast<Eigen::Index>(blocks.size()) * m);
  int step = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (int k = 0; k < blocks[b]; ++k, ++step) {
      T.block(step * m, static_cast<Eigen::Index>(b) * m, m, m) =
          Mat::Identity(m, m);
    }
  }
  return T;
}

CondensedQp condense(const StateSpaceModel& model_s, const MpcTuning& tuning_s,
                     const Mat& P, const std::vector<int>& blocks) {
  model_s.validate();
  require(model_s.domain == TimeDomain::Discrete, "condense: model must be discrete");
  const Eigen::Index n = model_s.n(), m = model_s.m();
  check_symmetric_psd(P, "condense: P", false);
  require(P.rows() == n, "condense: P dimension mismatch");
  int N = 0;
  for (int b : blocks) N += b;
  require(N == tuning_s.N, "condense: blocks must sum to the horizon");

  const Eigen::Index nu = static_cast<Eigen::Index>(blocks.size());
  const Eigen::Index d = nu * m;

  // Map step index -> block index.
  std::vector<int> block_of(N);
  {
    int step = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (int k = 0; k < blocks[b]; ++k) block_of[step++] = static_cast<int>(b);
  }

  // S_i = d x(k+i) / d u_tilde (n x d), Phi_i = A^i, accumulated in one pass.
  Mat S = Mat::Zero(n, d);
  Mat Phi = Mat::Identity(n, n);
  Mat H = Mat::Zero(d, d);
  Mat F = Mat::Zero(d, n);
  Mat c_quad = tuning_s.Q_C;
  for (int i = 1; i <= N; ++i) {
    S = model_s.A * S;
    S.block(0, static_cast<Eigen::Index>(block_of[i - 1]) * m, n, m) += model_s.B;
    Phi = model_s.A * Phi;
    const Mat& W = (i < N) ? tuning_s.Q_C : P;
    const Mat WS = W * S;
    H.noalias() += S.transpose() * WS;
    F.noalias() += WS.transpose() * Phi;
    c_quad.noalias() += Phi.transpose() * W * Phi;
  }
  // T' R_bar T is block diagonal with len_b * R_C.
  for (Eigen::Index b = 0; b < nu; ++b)
    H.block(b * m, b * m, m, m) += blocks[static_cast<std::size_t>(b)] * tuning_s.R_C;
  H = 0.5 * (H + H.transpose());
  c_quad = 0.5 * (c_quad + c_quad.transpose());

  CondensedQp qp;
  qp.H_c = H;
  qp.F = F;
  qp.c_quad = c_quad;
  qp.lb = tuning_s.u_min.replicate(nu, 1);
  qp.ub = tuning_s.u_max.replicate(nu, 1);
  qp.blocks = blocks;
  qp.m = m;
  return qp;
}

namespace {

struct Spectrum {
  double lo, hi;
};

Spectrum symmetric_extremes(const Mat& m) {
  if (m.rows() <= 512) {
    Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
    return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
  }
  // Power iteration with a deterministic start for desk-scale-plus sizes.
  const Eigen::Index n = m.rows();
  Vec v = Vec::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) += 1e-3 * std::sin(double(i + 1));
  v.normalize();
  double hi = 0.0;
  for (int it = 0; it < 10000; ++it) {
    Vec w = m * v;
    const double r = v.dot(w);
    w.normalize();
    if (std::abs(r - hi) <= 1e-12 * std::max(1.0, std::abs(r)) && it > 2) {
      hi = r;
      break;
    }
    hi = r;
    v = w;
  }
  // Smallest eigenvalue from the shifted matrix hi*I - M.
  Vec u = Vec::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) u(i) += 1e-3 * std::cos(double(i + 1));
  u.normalize();
  double shift_hi = 0.0;
  for (int it = 0; it < 10000; ++it) {
    Vec w = hi * u - m * u;
    const double r = u.dot(w);
    w.normalize();
    if (std::abs(r - shift_hi) <= 1e-12 * std::max(1.0, std::abs(r)) && it > 2) {
      shift_hi = r;
      break;
    }
    shift_hi = r;
    u = w;
  }
  return {hi - shift_hi, hi};
}

// Ruiz-style symmetric equilibration in the row infinity norm.
Vec ruiz_equilibrate(const Mat& h) {
  const Eigen::Index d = h.rows();
  Vec scale = Vec::Ones(d);
  for (int it = 0; it < 100; ++it) {
    double worst = 0.0;
    Vec norms(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      double r = 0.0;
      for (Eigen::Index j = 0; j < d; ++j)
        r = std::max(r, std::abs(scale(i) * h(i, j) * scale(j)));
      norms(i) = r;
      worst = std::max(worst, std::abs(1.0 - r));
    }
    if (worst < 1e-10) break;
    for (Eigen::Index i = 0; i < d; ++i)
      if (norms(i) > 0.0) scale(i) /= std::sqrt(norms(i));
  }
  return scale;
}

}  // namespace

Preconditioner precondition(const CondensedQp& qp) {
  const Mat& h = qp.H_c;
  check_symmetric_psd(h, "precondition: H_c", true);
  const Eigen::Index d = h.rows();

  // Candidate diagonal scalings; the best condition number wins, and the
  // identity candidate guarantees the preconditioner never hurts.
  std::vector<Vec> candidates;
  candidates.push_back(ruiz_equilibrate(h));
  candidates.push_back(h.diagonal().cwiseSqrt().cwiseInverse());
  candidates.push_back(Vec::Ones(d));

  double best_cond = 0.0;
  Vec best_scale;
  Spectrum best_spec{0.0, 0.0};
  for (const auto& s : candidates) {
    if (!s.allFinite() || !(s.array() > 0).all()) continue;
    const Mat m = s.asDiagonal() * h * s.asDiagonal();
    const Spectrum spec = symmetric_extremes(m);
    if (spec.lo <= 0.0) continue;
    const double cond = spec.hi / spec.lo;
    if (best_scale.size() == 0 || cond < best_cond) {
      best_cond = cond;
      best_scale = s;
      best_spec = spec;
    }
  }
  if (best_scale.size() == 0)
    throw std::runtime_error("precondition: H_c is not positive definite");

  const double theta = 1.0 / best_spec.hi;
  Preconditioner pre;
  pre.L = (theta * best_scale.array().square()).inverse().matrix();
  pre.H_cp = (theta * best_scale.array().square()).matrix().asDiagonal() * h;
  pre.mu = best_spec.lo / best_spec.hi;
  pre.lip = 1.0;
  return pre;
}

std::vector<double> beta_sequence(double mu, double lip, int i_max,
                                  BetaSchedule schedule, double alpha0) {
  require(mu > 0.0, "beta_sequence: mu must be > 0");
  require(lip >= mu, "beta_sequence: lip must be >= mu");
  require(i_max >= 1, "beta_sequence: i_max must be >= 1");
  const double q = mu / lip;
  std::vector<double> beta(static_cast<std::size_t>(i_max));
  if (schedule == BetaSchedule::Constant) {
    const double b = (std::sqrt(lip) - std::sqrt(mu)) / (std::sqrt(lip) + std::sqrt(mu));
    for (auto& v : beta) v = b;
    return beta;
  }
  double alpha = alpha0 > 0.0 ? alpha0 : std::sqrt(q);
  require(alpha > 0.0 && alpha <= 1.0, "beta_sequence: alpha0 must be in (0, 1]");
  for (int i = 0; i < i_max; ++i) {
    // Positive root of a^2 + (alpha^2 - q) a - alpha^2 = 0.
    const double c1 = alpha * alpha - q;
    const double next = 0.5 * (-c1 + std::sqrt(c1 * c1 + 4.0 * alpha * alpha));
    beta[static_cast<std::size_t>(i)] = alpha * (1.0 - alpha) / (alpha * alpha + next);
    alpha = next;
  }
  return beta;
}

void FwlFormats::validate() const {
  base.validate();
  hessian.validate();
  gradient_map.validate();
  beta.validate();
  if (product_width < 2 || product_width > 127)
    throw std::invalid_argument("fwl formats: bad product width");
  if (restart_width < 2 || restart_width > 127)
    throw std::invalid_argument("fwl formats: bad restart width");
}

namespace {

// Widen integer bits until every entry is representable; keeps the
// requested int_bits when they already fit.
FixedFormat fit_int_bits(FixedFormat f, double max_abs) {
  while (max_abs > FixedFormat{f.width, f.int_bits}.max_value() && f.int_bits < f.width)
    ++f.int_bits;
  return f;
}

FwlData prepare_fwl(const MpcDesign& dsn, FwlFormats formats) {
  formats.validate();
  formats.hessian = fit_int_bits(formats.hessian, dsn.pre.H_cp.cwiseAbs().maxCoeff());
  formats.gradient_map = fit_int_bits(formats.gradient_map, dsn.F_p.cwiseAbs().maxCoeff());

  FwlData fx;
  fx.formats = formats;
  const auto to_vector = [](const Mat& m) {
    return std::vector<double>(m.data(), m.data() + m.size());
  };
  // Eigen stores column-major; transpose to get row-major layouts.
  const Mat ht = dsn.pre.H_cp.transpose();
  const Mat ft = dsn.F_p.transpose();
  fx.H = FixedMatrix::quantized(to_vector(ht), static_cast<std::size_t>(dsn.d()),
                                static_cast<std::size_t>(dsn.d()), formats.hessian);
  fx.F = FixedMatrix::quantized(to_vector(ft), static_cast<std::size_t>(dsn.d()),
                                static_cast<std::size_t>(dsn.n()), formats.gradient_map);
  fx.lb = FixedVector::quantized(
      std::vector<double>(dsn.qp.lb.data(), dsn.qp.lb.data() + dsn.qp.lb.size()),
      formats.base);
  fx.ub = FixedVector::quantized(
      std::vector<double>(dsn.qp.ub.data(), dsn.qp.ub.data() + dsn.qp.ub.size()),
      formats.base);
  fx.beta = FixedVector::quantized(dsn.beta, formats.beta);
  fx.sched_h = TreeSchedule::standard(formats.hessian, formats.base,
                                      static_cast<std::size_t>(dsn.d()), formats.base,
                                      formats.product_width);
  fx.sched_f = TreeSchedule::standard(formats.gradient_map, formats.base,
                                      static_cast<std::size_t>(dsn.n()), formats.base,
                                      formats.product_width);
  return fx;
}

}  // namespace

MpcDesign build_design(const StateSpaceModel& model, const MpcTuning& tuning,
                       const ScalingSet& scaling, const DesignOptions& opts) {
  model.validate();
  require(model.domain == TimeDomain::Discrete, "build_design: model must be discrete");
  tuning.validate(model.n(), model.m(), model.p());
  scaling.validate();

  MpcDesign dsn;
  try {
    dsn.model_s = scale_model(model, scaling);
    dsn.tuning = scale_tuning(tuning, scaling);
    dsn.scaling = scaling;
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("build_design [scaling]: ") + e.what());
  }
  try {
    dsn.P = solve_dare(dsn.model_s.A, dsn.model_s.B, dsn.tuning.Q_C, dsn.tuning.R_C);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("build_design [terminal cost]: ") + e.what());
  }
  try {
    dsn.M_K = kalman_gain(dsn.model_s.A, dsn.model_s.C, dsn.tuning.Q_K, dsn.tuning.R_K);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("build_design [kalman gain]: ") + e.what());
  }
  try {
    const Mat btpb = dsn.model_s.B.transpose() * dsn.P * dsn.model_s.B;
    dsn.K_lq = (dsn.tuning.R_C + btpb).llt().solve(dsn.model_s.B.transpose() * dsn.P *
                                                   dsn.model_s.A);
    dsn.qp = condense(dsn.model_s, dsn.tuning, dsn.P, tuning.blocks);
    dsn.pre = precondition(dsn.qp);
    dsn.F_p = dsn.pre.L.cwiseInverse().asDiagonal() * dsn.qp.F;
    dsn.beta = beta_sequence(dsn.pre.mu, dsn.pre.lip, opts.beta_table_len,
                             opts.beta_schedule);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("build_design [condense/precondition]: ") +
                             e.what());
  }
  try {
    dsn.fwl = prepare_fwl(dsn, opts.fwl);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("build_design [fwl conversion]: ") + e.what());
  }
  return dsn;
}

}  // namespace rwmpc
