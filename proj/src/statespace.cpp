// SPDX-License-Identifier: Apache-2.0

#include "rwmpc/statespace.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

namespace rwmpc {

namespace {
constexpr double kPi = 3.14159265358979323846;

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

void StateSpaceModel::validate() const {
  require(A.rows() == A.cols(), "model: A must be square");
  require(B.rows() == A.rows(), "model: B row count must match A");
  require(C.cols() == A.rows(), "model: C column count must match A");
  require(D.size() == 0 || (D.rows() == C.rows() && D.cols() == B.cols()),
          "model: D must be p x m");
  if (C_aux) require(C_aux->cols() == A.rows(), "model: C_aux column count must match A");
  if (domain == TimeDomain::Discrete) require(Ts > 0.0, "model: discrete Ts must be > 0");
  require(A.allFinite() && B.allFinite() && C.allFinite(), "model: non-finite entries");
}

void PsSpec::validate() const {
  require(v_min < v_max, "ps spec: v_min must be < v_max");
  require(lag_tau > 0.0, "ps spec: lag_tau must be > 0");
  require(delay >= 0.0, "ps spec: delay must be >= 0");
}

void SurrogateSpec::validate() const {
  require(gamma > 0.0, "surrogate spec: gamma must be > 0");
  require(n_stable >= 0, "surrogate spec: n_stable must be >= 0");
  require(n_inputs >= 1 && n_outputs >= 1, "surrogate spec: channel counts must be >= 1");
  if (n_stable > 0)
    require(tau_min > 0.0 && tau_max >= tau_min, "surrogate spec: bad stable tau range");
}

Mat expm(const Mat& a) {
  require(a.allFinite(), "expm: non-finite entries");
  return a.exp();
}

StateSpaceModel zoh_discretize(const StateSpaceModel& m, double Ts) {
  m.validate();
  require(m.domain == TimeDomain::Continuous, "zoh_discretize: model must be continuous");
  require(Ts > 0.0, "zoh_discretize: Ts must be > 0");
  const Eigen::Index n = m.n(), nu = m.m();
  Mat aug = Mat::Zero(n + nu, n + nu);
  aug.topLeftCorner(n, n) = m.A * Ts;
  aug.topRightCorner(n, nu) = m.B * Ts;
  const Mat e = expm(aug);
  StateSpaceModel d = m;
  d.A = e.topLeftCorner(n, n);
  d.B = e.topRightCorner(n, nu);
  d.domain = TimeDomain::Discrete;
  d.Ts = Ts;
  return d;
}

StateSpaceModel pade_delay(double delay, int order) {
  require(delay > 0.0, "pade_delay: delay must be > 0");
  if (order != 3) throw std::invalid_argument("pade_delay: only order 3 is supported");
  const double T = delay;
  // [3/3] Pade of exp(-sT):
  //   H(s) = (-x^3 + 12x^2 - 60x + 120) / (x^3 + 12x^2 + 60x + 120), x = sT.
  // Controllable canonical form; biproper, so D = -1 and the numerator
  // residue doubles the even denominator coefficients.
  const double a0 = 120.0 / (T * T * T);
  const double a1 = 60.0 / (T * T);
  const double a2 = 12.0 / T;
  StateSpaceModel m;
  m.A = Mat::Zero(3, 3);
  m.A(0, 1) = 1.0;
  m.A(1, 2) = 1.0;
  m.A(2, 0) = -a0;
  m.A(2, 1) = -a1;
  m.A(2, 2) = -a2;
  m.B = Mat::Zero(3, 1);
  m.B(2, 0) = 1.0;
  m.C = Mat::Zero(1, 3);
  m.C(0, 0) = 2.0 * a0;
  m.C(0, 2) = 2.0 * a2;
  m.D = Mat::Constant(1, 1, -1.0);
  m.domain = TimeDomain::Continuous;
  return m;
}

namespace {

// Block-diagonal replication of a SISO model over `channels` channels.
StateSpaceModel replicate_channels(const StateSpaceModel& s, int channels) {
  const Eigen::Index ns = s.n();
  StateSpaceModel m;
  m.A = Mat::Zero(ns * channels, ns * channels);
  m.B = Mat::Zero(ns * channels, channels);
  m.C = Mat::Zero(channels, ns * channels);
  m.D = Mat::Zero(channels, channels);
  for (int c = 0; c < channels; ++c) {
    m.A.block(c * ns, c * ns, ns, ns) = s.A;
    m.B.block(c * ns, c, ns, 1) = s.B;
    m.C.block(c, c * ns, 1, ns) = s.C;
    if (s.D.size() > 0) m.D(c, c) = s.D(0, 0);
  }
  m.domain = s.domain;
  m.Ts = s.Ts;
  return m;
}

}  // namespace

StateSpaceModel build_ps_model(const PsSpec& spec, int channels) {
  spec.validate();
  require(channels >= 1, "build_ps_model: channels must be >= 1");
  StateSpaceModel lag;
  lag.A = Mat::Constant(1, 1, -1.0 / spec.lag_tau);
  lag.B = Mat::Constant(1, 1, 1.0 / spec.lag_tau);
  lag.C = Mat::Constant(1, 1, 1.0);
  lag.D = Mat::Zero(1, 1);
  lag.domain = TimeDomain::Continuous;
  StateSpaceModel chan = spec.delay > 0.0
                             ? series_connect(lag, pade_delay(spec.delay, spec.pade_order))
                             : lag;
  return replicate_channels(chan, channels);
}

Mat seeded_uniform(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      // 53 mantissa bits -> exact dyadic rational in [0, 1), mapped to [-1, 1).
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      m(i, j) = 2.0 * u - 1.0;
    }
  return m;
}

namespace {

// Smallest singular value of the PBH matrix [A_u - lambda*I, K] at the
// unstable eigenvalue; zero means the mode is uncontrollable (or, dually,
// unobservable).
double pbh_margin(const Mat& a_u, const Mat& coupling, std::complex<double> lambda) {
  const Eigen::Index r = a_u.rows();
  Eigen::MatrixXcd m(r, r + coupling.cols());
  m.leftCols(r) = a_u.cast<std::complex<double>>() -
                  lambda * Eigen::MatrixXcd::Identity(r, r);
  m.rightCols(coupling.cols()) = coupling.cast<std::complex<double>>();
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m);
  return svd.singularValues().minCoeff();
}

}  // namespace

StateSpaceModel build_surrogate(const SurrogateSpec& spec) {
  spec.validate();
  const int n = 2 + spec.n_stable;
  const int retries = 8;
  for (int attempt = 0; attempt < retries; ++attempt) {
    // Retry rule: attempt k draws from seed + k (documented, deterministic).
    const std::uint64_t seed = spec.seed + static_cast<std::uint64_t>(attempt);
    StateSpaceModel m;
    m.A = Mat::Zero(n, n);
    m.A(0, 0) = spec.gamma;
    m.A(0, 1) = spec.omega;
    m.A(1, 0) = -spec.omega;
    m.A(1, 1) = spec.gamma;
    for (int i = 0; i < spec.n_stable; ++i) {
      // Slowest modes first, log-spaced time constants.
      const double t = spec.n_stable == 1
                           ? 0.5
                           : static_cast<double>(i) / (spec.n_stable - 1);
      const double tau = std::exp(std::log(spec.tau_max) +
                                  t * (std::log(spec.tau_min) - std::log(spec.tau_max)));
      m.A(2 + i, 2 + i) = -1.0 / tau;
    }
    m.B = seeded_uniform(n, spec.n_inputs, seed * 3 + 1);
    m.C = seeded_uniform(spec.n_outputs, n, seed * 3 + 2);
    m.D = Mat::Zero(spec.n_outputs, spec.n_inputs);
    if (spec.coil_current_outputs)
      m.C_aux = seeded_uniform(spec.n_inputs, n, seed * 3 + 3);
    m.domain = TimeDomain::Continuous;

    // Normalize couplings: unit smallest singular value on the unstable
    // block, unit norm per stable mode.
    Eigen::JacobiSVD<Mat> svd_b(m.B.topRows(2));
    Eigen::JacobiSVD<Mat> svd_c(m.C.leftCols(2));
    const double sb = svd_b.singularValues().minCoeff();
    const double sc = svd_c.singularValues().minCoeff();
    if (sb > 1e-9) m.B.topRows(2) /= sb;
    if (sc > 1e-9) m.C.leftCols(2) /= sc;
    for (int i = 0; i < spec.n_stable; ++i) {
      const double nb = m.B.row(2 + i).norm();
      const double nc = m.C.col(2 + i).norm();
      if (nb > 1e-12) m.B.row(2 + i) /= nb;
      if (nc > 1e-12) m.C.col(2 + i) /= nc;
    }

    const std::complex<double> lambda(spec.gamma, spec.omega);
    const Mat a_u = m.A.topLeftCorner(2, 2);
    const double ctrb = pbh_margin(a_u, m.B.topRows(2), lambda);
    const double obsv = pbh_margin(a_u.transpose(), m.C.leftCols(2).transpose(), lambda);
    if (ctrb > 1e-6 && obsv > 1e-6) return m;
  }
  throw std::runtime_error(
      "build_surrogate: unstable mode degenerate for every retry of this seed");
}

StateSpaceModel truncate_surrogate(const StateSpaceModel& plant, const SurrogateSpec& spec,
                                   int keep_stable) {
  plant.validate();
  require(keep_stable >= 0 && keep_stable <= spec.n_stable,
          "truncate_surrogate: keep_stable out of range");
  const Eigen::Index keep = 2 + keep_stable;
  require(plant.n() == 2 + spec.n_stable, "truncate_surrogate: plant/spec mismatch");
  StateSpaceModel m;
  m.A = plant.A.topLeftCorner(keep, keep);
  m.B = plant.B.topRows(keep);
  m.C = plant.C.leftCols(keep);
  m.D = plant.D;
  if (plant.C_aux) m.C_aux = plant.C_aux->leftCols(keep);
  m.domain = plant.domain;
  m.Ts = plant.Ts;
  return m;
}

OutputReducer OutputReducer::from_angles(const std::vector<double>& angles_deg) {
  if (angles_deg.size() < 2)
    throw std::invalid_argument("output reducer: need at least two sensor angles");
  OutputReducer r;
  r.angles_deg = angles_deg;
  const Mat g = r.regressor();
  // Least-squares reduction: T_out = pinv(G).
  Eigen::JacobiSVD<Mat> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.singularValues().minCoeff() < 1e-9)
    throw std::invalid_argument("output reducer: sensor angles are degenerate");
  r.T_out = svd.matrixV() * svd.singularValues().cwiseInverse().asDiagonal() *
            svd.matrixU().transpose();
  return r;
}

Mat OutputReducer::regressor() const {
  Mat g(static_cast<Eigen::Index>(angles_deg.size()), 2);
  for (std::size_t i = 0; i < angles_deg.size(); ++i) {
    const double phi = angles_deg[i] * kPi / 180.0;
    g(static_cast<Eigen::Index>(i), 0) = std::cos(phi);
    g(static_cast<Eigen::Index>(i), 1) = std::sin(phi);
  }
  return g;
}

Vec OutputReducer::reduce(const Vec& y_m) const {
  if (y_m.size() != T_out.cols())
    throw std::invalid_argument("output reducer: measurement dimension mismatch");
  return T_out * y_m;
}

StateSpaceModel series_connect(const StateSpaceModel& m1, const StateSpaceModel& m2) {
  m1.validate();
  m2.validate();
  require(m1.p() == m2.m(), "series_connect: m1 outputs must match m2 inputs");
  require(m1.domain == m2.domain, "series_connect: time-domain mismatch");
  if (m1.domain == TimeDomain::Discrete)
    require(m1.Ts == m2.Ts, "series_connect: sampling-time mismatch");
  const Eigen::Index n1 = m1.n(), n2 = m2.n();
  const Mat d1 = m1.D.size() ? m1.D : Mat::Zero(m1.p(), m1.m());
  const Mat d2 = m2.D.size() ? m2.D : Mat::Zero(m2.p(), m2.m());
  StateSpaceModel m;
  m.A = Mat::Zero(n1 + n2, n1 + n2);
  m.A.topLeftCorner(n1, n1) = m1.A;
  m.A.bottomLeftCorner(n2, n1) = m2.B * m1.C;
  m.A.bottomRightCorner(n2, n2) = m2.A;
  m.B = Mat::Zero(n1 + n2, m1.m());
  m.B.topRows(n1) = m1.B;
  m.B.bottomRows(n2) = m2.B * d1;
  m.C = Mat::Zero(m2.p(), n1 + n2);
  m.C.leftCols(n1) = d2 * m1.C;
  m.C.rightCols(n2) = m2.C;
  m.D = d2 * d1;
  const Eigen::Index q1 = m1.C_aux ? m1.C_aux->rows() : 0;
  const Eigen::Index q2 = m2.C_aux ? m2.C_aux->rows() : 0;
  if (q1 + q2 > 0) {
    Mat aux = Mat::Zero(q1 + q2, n1 + n2);
    if (m1.C_aux) aux.topLeftCorner(q1, n1) = *m1.C_aux;
    if (m2.C_aux) aux.bottomRightCorner(q2, n2) = *m2.C_aux;
    m.C_aux = aux;
  }
  m.domain = m1.domain;
  m.Ts = m1.Ts;
  return m;
}

Eigen::MatrixXcd transfer_at(const StateSpaceModel& m, std::complex<double> s) {
  const Eigen::Index n = m.n();
  Eigen::MatrixXcd zi = s * Eigen::MatrixXcd::Identity(n, n) -
                        m.A.cast<std::complex<double>>();
  Eigen::MatrixXcd h = m.C.cast<std::complex<double>>() *
                       zi.partialPivLu().solve(m.B.cast<std::complex<double>>());
  if (m.D.size() > 0) h += m.D.cast<std::complex<double>>();
  return h;
}

}  // namespace rwmpc
