#include "cvarstable/cvar.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cvarstable/error.hpp"
#include "cvarstable/matvar.hpp"

namespace cvarstable {
namespace {

std::string dims(const MatrixXd& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

MatrixXd pseudo_inverse_spd(const MatrixXd& m, double rel_tol = 1e-12) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
  const VectorXd ev = es.eigenvalues();
  const double cut = rel_tol * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  VectorXd inv(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) inv(i) = ev(i) > cut ? 1.0 / ev(i) : 0.0;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

MatrixXd residualise(const MatrixXd& y, const MatrixXd& x) {
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(x);
  return y - x * cod.solve(y);
}

}  // namespace

void CvarParams::validate() const {
  const int nn = n();
  if (nn < 1 || sigma.cols() != nn) throw ShapeError("CvarParams: sigma must be square, got " + dims(sigma));
  if (r < 1 || r >= nn + 1) throw ShapeError("CvarParams: rank r=" + std::to_string(r) + " outside 1..n");
  if (p < 1) throw ShapeError("CvarParams: lag order p must be >= 1");
  if (mu.size() != nn) throw ShapeError("CvarParams: mu must have length n");
  if (alpha_adj.rows() != nn || alpha_adj.cols() != r) throw ShapeError("CvarParams: alpha_adj is " + dims(alpha_adj));
  if (beta_coint.rows() != nn || beta_coint.cols() != r) throw ShapeError("CvarParams: beta_coint is " + dims(beta_coint));
  if (static_cast<int>(psi.size()) != p - 1) throw ShapeError("CvarParams: expected p-1 lag matrices");
  for (const auto& m : psi)
    if (m.rows() != nn || m.cols() != nn) throw ShapeError("CvarParams: lag matrix is " + dims(m));
  require_spd(sigma, "sigma");
}

void normalise_beta(MatrixXd& beta, MatrixXd* alpha) {
  const auto r = beta.cols();
  const MatrixXd top = beta.topRows(r);
  Eigen::FullPivLU<MatrixXd> lu(top);
  if (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-12 * std::pow(std::max(top.cwiseAbs().maxCoeff(), 1e-300), r))
    throw NumericError("beta cannot be normalised: leading block is singular");
  const MatrixXd inv = lu.inverse();
  if (alpha) *alpha = *alpha * top.transpose();
  beta = beta * inv;
  beta.topRows(r).setIdentity();
}

std::vector<bool> SeriesData::boundary_mask() const {
  std::vector<bool> mask(static_cast<std::size_t>(length()), false);
  for (int t : tau_idx) mask.at(static_cast<std::size_t>(t)) = true;
  return mask;
}

void SeriesData::validate() const {
  if (prices.rows() == 0 || prices.cols() == 0) throw ShapeError("series is empty");
  if (!prices.allFinite()) throw ValidationError("series contains non-finite prices");
  for (std::size_t i = 0; i < tau_idx.size(); ++i) {
    if (tau_idx[i] < 0 || tau_idx[i] >= length()) throw ShapeError("boundary index outside the series");
    if (i > 0 && tau_idx[i] <= tau_idx[i - 1]) throw ShapeError("boundary indices must be strictly increasing");
  }
}

std::vector<int> TauSchedule::resolve(int T) const {
  std::vector<int> out;
  switch (kind) {
    case Kind::None:
      break;
    case Kind::Modulus:
      if (modulus < 1) throw ValidationError("tau modulus must be >= 1");
      for (int t = modulus; t <= T; t += modulus) out.push_back(t - 1);
      break;
    case Kind::Explicit:
      for (int t : explicit_rows) {
        if (t < 1 || t > T) throw ValidationError("explicit tau row " + std::to_string(t) + " outside 1.." + std::to_string(T));
        out.push_back(t - 1);
      }
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
      break;
  }
  return out;
}

int DesignSet::tilde_t() const {
  return static_cast<int>(std::count(boundary.begin(), boundary.end(), false));
}

std::vector<int> DesignSet::boundary_rows() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < boundary.size(); ++i)
    if (boundary[i]) out.push_back(static_cast<int>(i));
  return out;
}

void DesignSet::set_beta(const MatrixXd& beta) {
  const MatrixXd zb = beta.size() == 0 ? z : MatrixXd(z * beta);
  w.resize(y.rows(), x.cols() + zb.cols());
  w << x, zb;
  k = static_cast<int>(w.cols());
}

DesignSet DesignSet::select(const std::vector<int>& idx) const {
  DesignSet out;
  const auto m = static_cast<Eigen::Index>(idx.size());
  out.y.resize(m, y.cols());
  out.x.resize(m, x.cols());
  out.z.resize(m, z.cols());
  out.w.resize(m, w.cols());
  out.k = k;
  for (Eigen::Index i = 0; i < m; ++i) {
    const int s = idx[static_cast<std::size_t>(i)];
    out.y.row(i) = y.row(s);
    out.x.row(i) = x.row(s);
    out.z.row(i) = z.row(s);
    out.w.row(i) = w.row(s);
    out.source_row.push_back(source_row[static_cast<std::size_t>(s)]);
    out.boundary.push_back(boundary[static_cast<std::size_t>(s)]);
  }
  return out;
}

DesignSet DesignSet::intraday() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < boundary.size(); ++i)
    if (!boundary[i]) idx.push_back(static_cast<int>(i));
  return select(idx);
}

DesignSet build_design(const SeriesData& series, int p, const MatrixXd& beta) {
  const int T = series.length();
  const int n = series.n();
  if (p < 1) throw ShapeError("build_design: p must be >= 1");
  if (T <= p + 1)
    throw ShapeError("build_design: " + std::to_string(T) + " observations are too few for p=" + std::to_string(p));
  if (beta.size() != 0 && beta.rows() != n)
    throw ShapeError("build_design: beta is " + dims(beta) + " for n=" + std::to_string(n));
  const int rows = T - p;
  const int xc = 1 + n * (p - 1);
  const auto& x = series.prices;
  const auto mask = series.boundary_mask();

  DesignSet d;
  d.y.resize(rows, n);
  d.x.resize(rows, xc);
  d.z.resize(rows, n);
  for (int j = 0; j < rows; ++j) {
    const int t = p + j;
    d.y.row(j) = x.row(t) - x.row(t - 1);
    d.z.row(j) = x.row(t - 1);
    d.x(j, 0) = 1.0;
    for (int lag = 1; lag < p; ++lag) d.x.block(j, 1 + n * (lag - 1), 1, n) = x.row(t - lag) - x.row(t - lag - 1);
    d.source_row.push_back(t);
    d.boundary.push_back(mask[static_cast<std::size_t>(t)]);
  }
  d.set_beta(beta);
  return d;
}

OlsStats ols(const MatrixXd& w, const MatrixXd& y) {
  if (w.rows() != y.rows()) throw ShapeError("ols: W " + dims(w) + " and Y " + dims(y) + " row counts differ");
  if (w.rows() < w.cols()) throw ShapeError("ols: fewer rows than regressors");
  Eigen::JacobiSVD<MatrixXd> svd(w);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  if (!(cond < 1e12)) {
    std::ostringstream msg;
    msg << "ols: regressor matrix is rank deficient (condition number " << cond << ")";
    throw NumericError(msg.str());
  }
  OlsStats out;
  out.b_hat = w.colPivHouseholderQr().solve(y);
  const MatrixXd e = y - w * out.b_hat;
  out.s_hat = e.transpose() * e;
  out.s_hat = 0.5 * (out.s_hat + out.s_hat.transpose());
  out.condition = cond;
  return out;
}

double regression_loglik(const DesignSet& d, const MatrixXd& b, const MatrixXd& sigma) {
  const MatrixXd e = d.y - d.w * b;
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw NumericError("regression_loglik: sigma not positive definite");
  const double t = static_cast<double>(e.rows());
  const double n = static_cast<double>(e.cols());
  const double quad = (e.transpose() * e).cwiseProduct(llt.solve(MatrixXd::Identity(e.cols(), e.cols()))).sum();
  return -0.5 * t * n * std::log(2.0 * M_PI) - 0.5 * t * log_det_spd(sigma) - 0.5 * quad;
}

double companion_spectral_radius(const CvarParams& params) {
  const int n = params.n();
  const int p = params.p;
  std::vector<MatrixXd> a(static_cast<std::size_t>(p), MatrixXd::Zero(n, n));
  a[0] = MatrixXd::Identity(n, n) + params.pi();
  if (p > 1) {
    a[0] += params.psi[0];
    for (int i = 2; i < p; ++i) a[static_cast<std::size_t>(i - 1)] = params.psi[static_cast<std::size_t>(i - 1)] - params.psi[static_cast<std::size_t>(i - 2)];
    a[static_cast<std::size_t>(p - 1)] = -params.psi[static_cast<std::size_t>(p - 2)];
  }
  MatrixXd comp = MatrixXd::Zero(n * p, n * p);
  for (int i = 0; i < p; ++i) comp.block(0, n * i, n, n) = a[static_cast<std::size_t>(i)];
  if (p > 1) comp.bottomLeftCorner(n * (p - 1), n * (p - 1)).setIdentity();
  Eigen::EigenSolver<MatrixXd> es(comp, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

SeriesData simulate_cvar(const CvarParams& params, const std::vector<StableParams>& stable,
                         const std::vector<int>& tau_idx, int T, Rng& rng, const SimulationOptions& opts) {
  params.validate();
  const int n = params.n();
  const int p = params.p;
  if (T < 1) throw ValidationError("simulate_cvar: T must be >= 1");
  if (!tau_idx.empty() && static_cast<int>(stable.size()) != n)
    throw ValidationError("simulate_cvar: need one stable law per asset when boundaries are present");
  for (const auto& s : stable) s.validate();
  for (std::size_t i = 0; i < tau_idx.size(); ++i) {
    if (tau_idx[i] < 0 || tau_idx[i] >= T) throw ShapeError("simulate_cvar: boundary row outside 0..T-1");
    if (i > 0 && tau_idx[i] <= tau_idx[i - 1]) throw ShapeError("simulate_cvar: boundary rows must be increasing");
  }
  const int m = static_cast<int>(opts.initial.rows());
  if (m > 0 && opts.initial.cols() != n) throw ShapeError("simulate_cvar: initial rows must have n columns");
  if (m > T) throw ShapeError("simulate_cvar: more initial rows than T");

  const MatrixXd l = spd_cholesky(params.sigma, "sigma");
  MatrixXd eps(T, n);
  for (int t = 0; t < T; ++t) {
    VectorXd z(n);
    for (int i = 0; i < n; ++i) z(i) = std_normal(rng);
    eps.row(t) = (l * z).transpose();
  }
  for (int t : tau_idx)
    for (int i = 0; i < n; ++i) eps(t, i) = sample_stable(stable[static_cast<std::size_t>(i)], rng);

  // Levels with p virtual leading rows so lagged differences start at zero.
  const VectorXd start = m > 0 ? VectorXd(opts.initial.row(0).transpose()) : opts.x0.value_or(VectorXd::Zero(n));
  if (start.size() != n) throw ShapeError("simulate_cvar: x0 must have length n");
  MatrixXd lev(T + p, n);
  for (int i = 0; i < p; ++i) lev.row(i) = start.transpose();
  const MatrixXd pi = params.pi();
  for (int t = 0; t < T; ++t) {
    const int row = t + p;
    if (t < m) {
      lev.row(row) = opts.initial.row(t);
      continue;
    }
    const VectorXd prev = lev.row(row - 1).transpose();
    VectorXd dx = params.mu + pi * prev + eps.row(t).transpose();
    for (int i = 1; i < p; ++i) {
      const VectorXd lagdiff = (lev.row(row - i) - lev.row(row - i - 1)).transpose();
      dx += params.psi[static_cast<std::size_t>(i - 1)] * lagdiff;
    }
    lev.row(row) = (prev + dx).transpose();
  }

  SeriesData out;
  out.prices = lev.bottomRows(T);
  out.tau_idx = tau_idx;
  for (int i = 0; i < n; ++i) out.meta.assets.push_back("x" + std::to_string(i + 1));
  out.meta.interval = "simulated";
  const double rho = companion_spectral_radius(params);
  if (rho > 1.0 + 1e-6) {
    std::ostringstream msg;
    msg << "explosive parameters: companion spectral radius " << rho;
    out.meta.warnings.push_back(msg.str());
  }
  if (!out.prices.allFinite()) throw NumericError("simulate_cvar: series diverged to non-finite values");
  return out;
}

SeriesData simulate_cvar(const CvarParams& params, const std::vector<StableParams>& stable, const TauSchedule& tau,
                         int T, Rng& rng, const SimulationOptions& opts) {
  return simulate_cvar(params, stable, tau.resolve(T), T, rng, opts);
}

JohansenResult johansen_estimate(const SeriesData& series, int p, int r) {
  series.validate();
  const int n = series.n();
  if (r < 1 || r >= n) throw ValidationError("johansen_estimate: need 1 <= r < n");
  if (series.length() < 10 * n) throw ShapeError("johansen_estimate: series too short");
  const DesignSet d = build_design(series, p, MatrixXd());
  const double t = d.rows();

  const MatrixXd r0 = residualise(d.y, d.x);
  const MatrixXd r1 = residualise(d.z, d.x);
  const MatrixXd s00 = r0.transpose() * r0 / t;
  const MatrixXd s11 = r1.transpose() * r1 / t;
  const MatrixXd s01 = r0.transpose() * r1 / t;
  const MatrixXd s00_inv = pseudo_inverse_spd(s00);
  const MatrixXd a = s01.transpose() * s00_inv * s01;

  JohansenResult res;
  res.eigenvalues = VectorXd::Zero(n);
  MatrixXd beta(n, r);

  Eigen::SelfAdjointEigenSolver<MatrixXd> es11(0.5 * (s11 + s11.transpose()));
  const VectorXd ev11 = es11.eigenvalues();
  const double cut = 1e-12 * std::max(ev11.maxCoeff(), 1e-300);
  int null_dim = 0;
  while (null_dim < n && ev11(null_dim) <= cut) ++null_dim;

  if (null_dim == n) throw NumericError("johansen_estimate: lagged levels have no variation");
  // Exact dependencies among lagged levels are perfect cointegrating relations.
  if (null_dim > 0) {
    if (null_dim < r) throw NumericError("johansen_estimate: partially degenerate levels, cannot complete rank");
    res.degenerate = true;
    beta = es11.eigenvectors().leftCols(r);
    for (int i = 0; i < null_dim; ++i) res.eigenvalues(i) = 1.0;
    const MatrixXd vc = es11.eigenvectors().rightCols(n - null_dim);
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> ges(vc.transpose() * a * vc, vc.transpose() * s11 * vc);
    if (ges.info() != Eigen::Success) throw NumericError("johansen_estimate: eigen-solver failed");
    const VectorXd rest = ges.eigenvalues();
    for (int i = 0; i < n - null_dim; ++i) res.eigenvalues(null_dim + i) = rest(rest.size() - 1 - i);
  } else {
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> ges(0.5 * (a + a.transpose()), 0.5 * (s11 + s11.transpose()));
    if (ges.info() != Eigen::Success) throw NumericError("johansen_estimate: eigen-solver failed");
    const VectorXd ev = ges.eigenvalues();
    for (int i = 0; i < n; ++i) res.eigenvalues(i) = ev(n - 1 - i);
    for (int i = 0; i < r; ++i) beta.col(i) = ges.eigenvectors().col(n - 1 - i);
  }
  normalise_beta(beta);

  DesignSet dz = d;
  dz.set_beta(beta);
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(dz.w);
  const MatrixXd b = cod.solve(dz.y);
  const MatrixXd e = dz.y - dz.w * b;

  CvarParams& out = res.params;
  out.r = r;
  out.p = p;
  out.beta_coint = beta;
  out.mu = b.row(0).transpose();
  for (int lag = 1; lag < p; ++lag) out.psi.push_back(b.block(1 + n * (lag - 1), 0, n, n).transpose());
  out.alpha_adj = b.bottomRows(r).transpose();
  out.sigma = e.transpose() * e / t;
  if (!out.alpha_adj.allFinite() || !out.beta_coint.allFinite())
    throw NumericError("johansen_estimate: non-finite estimates");
  return res;
}

}  // namespace cvarstable
