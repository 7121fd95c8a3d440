#include "cvarstable/matvar.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>

#include "cvarstable/error.hpp"

namespace cvarstable {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

std::string shape(const MatrixXd& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

double log_multigamma(double a, int n) {
  double out = 0.25 * n * (n - 1) * std::log(std::numbers::pi);
  for (int j = 1; j <= n; ++j) out += std::lgamma(a + 0.5 * (1 - j));
  return out;
}

}  // namespace

bool is_spd(const MatrixXd& m, double rel_floor) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  if (!m.allFinite()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, m.cwiseAbs().maxCoeff())) return false;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) return false;
  const double hi = es.eigenvalues().maxCoeff();
  const double lo = es.eigenvalues().minCoeff();
  return hi > 0.0 && lo > rel_floor * hi;
}

void require_spd(const MatrixXd& m, std::string_view what) {
  if (is_spd(m)) return;
  std::ostringstream msg;
  msg << std::string(what) << " is not symmetric positive definite (" << shape(m) << ")";
  if (m.rows() == m.cols() && m.rows() > 0 && m.allFinite()) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    msg << "; eigenvalues " << es.eigenvalues().transpose();
  }
  throw NumericError(msg.str());
}

MatrixXd spd_cholesky(const MatrixXd& m, std::string_view what, bool* regularised) {
  if (regularised) *regularised = false;
  const MatrixXd sym = 0.5 * (m + m.transpose());
  if (is_spd(sym)) {
    Eigen::LLT<MatrixXd> llt(sym);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  if (sym.allFinite() && sym.rows() > 0) {
    const double bump = 1e-8 * std::max(sym.trace(), 1e-300) / static_cast<double>(sym.rows());
    MatrixXd reg = sym;
    reg.diagonal().array() += bump;
    Eigen::LLT<MatrixXd> llt(reg);
    if (llt.info() == Eigen::Success && is_spd(reg)) {
      if (regularised) *regularised = true;
      return llt.matrixL();
    }
  }
  require_spd(sym, what);
  throw NumericError(std::string(what) + ": Cholesky factorisation failed");
}

double log_det_spd(const MatrixXd& m) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError("log_det_spd: matrix not positive definite");
  const MatrixXd l = llt.matrixL();
  return 2.0 * l.diagonal().array().log().sum();
}

MatrixXd sample_matrix_normal(const MatrixNormalSpec& spec, Rng& rng) {
  const auto k = spec.mean.rows();
  const auto n = spec.mean.cols();
  if (spec.row_scale.rows() != k || spec.row_scale.cols() != k || spec.col_scale.rows() != n ||
      spec.col_scale.cols() != n) {
    throw ShapeError("sample_matrix_normal: mean " + shape(spec.mean) + ", row_scale " + shape(spec.row_scale) +
                     ", col_scale " + shape(spec.col_scale));
  }
  const MatrixXd lr = spd_cholesky(spec.row_scale, "row_scale");
  const MatrixXd lc = spd_cholesky(spec.col_scale, "col_scale");
  MatrixXd z(k, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < k; ++i) z(i, j) = std_normal(rng);
  return spec.mean + lr * z * lc.transpose();
}

double matrix_normal_logpdf(const MatrixXd& x, const MatrixNormalSpec& spec) {
  const double k = static_cast<double>(x.rows());
  const double n = static_cast<double>(x.cols());
  if (x.rows() != spec.mean.rows() || x.cols() != spec.mean.cols())
    throw ShapeError("matrix_normal_logpdf: x " + shape(x) + " vs mean " + shape(spec.mean));
  Eigen::LLT<MatrixXd> lr(spec.row_scale);
  Eigen::LLT<MatrixXd> lc(spec.col_scale);
  if (lr.info() != Eigen::Success || lc.info() != Eigen::Success)
    throw NumericError("matrix_normal_logpdf: scale matrix not positive definite");
  const MatrixXd d = x - spec.mean;
  // tr(C^{-1} D^T R^{-1} D)
  const MatrixXd rd = lr.solve(d);
  const MatrixXd inner = d.transpose() * rd;
  const double quad = lc.solve(inner).trace();
  return -0.5 * k * n * kLog2Pi - 0.5 * n * log_det_spd(spec.row_scale) - 0.5 * k * log_det_spd(spec.col_scale) -
         0.5 * quad;
}

MatrixXd sample_inverse_wishart(const MatrixXd& scale, double dof, Rng& rng) {
  const auto n = scale.rows();
  if (scale.cols() != n) throw ShapeError("sample_inverse_wishart: scale must be square, got " + shape(scale));
  if (!(dof > static_cast<double>(n) - 1.0))
    throw DomainError("sample_inverse_wishart: dof " + std::to_string(dof) + " must exceed n-1 = " +
                      std::to_string(n - 1));
  const MatrixXd c = spd_cholesky(scale, "inverse-Wishart scale");
  // Bartlett factor of a Wishart(I, dof) draw.
  MatrixXd a = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::chi_squared_distribution<double> chi(dof - static_cast<double>(i));
    a(i, i) = std::sqrt(chi(rng));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = std_normal(rng);
  }
  // Sigma = C A^{-T} A^{-1} C^T
  const MatrixXd a_inv_t = a.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(n, n)).transpose();
  const MatrixXd g = c * a_inv_t;
  MatrixXd out = g * g.transpose();
  return 0.5 * (out + out.transpose());
}

double inverse_wishart_logpdf(const MatrixXd& x, const MatrixXd& scale, double dof) {
  const int n = static_cast<int>(x.rows());
  Eigen::LLT<MatrixXd> lx(x);
  if (lx.info() != Eigen::Success) throw NumericError("inverse_wishart_logpdf: x not positive definite");
  const double tr = lx.solve(scale).trace();
  return 0.5 * dof * log_det_spd(scale) - 0.5 * dof * n * std::log(2.0) - log_multigamma(0.5 * dof, n) -
         0.5 * (dof + n + 1) * log_det_spd(x) - 0.5 * tr;
}

MatrixXd kron(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

VectorXd vec(const MatrixXd& m) { return Eigen::Map<const VectorXd>(m.data(), m.size()); }

MatrixXd kron_vec_apply(const MatrixXd& a, const MatrixXd& x, const MatrixXd& b) {
  if (a.cols() != x.rows() || x.cols() != b.rows())
    throw ShapeError("kron_vec_apply: A " + shape(a) + ", X " + shape(x) + ", B " + shape(b) + " not conformable");
  return a * x * b;
}

TransformSet build_transform(const MatrixXd& sigma, const VectorXd& d_lambda, int tilde_t, int total_t,
                             std::vector<int> tau_idx) {
  const auto n = sigma.rows();
  if (sigma.cols() != n || d_lambda.size() != n)
    throw ShapeError("build_transform: sigma " + shape(sigma) + ", d_lambda length " + std::to_string(d_lambda.size()));
  if ((d_lambda.array() <= 0.0).any() || !d_lambda.allFinite())
    throw DomainError("build_transform: d_lambda must be strictly positive");
  std::sort(tau_idx.begin(), tau_idx.end());
  if (std::adjacent_find(tau_idx.begin(), tau_idx.end()) != tau_idx.end())
    throw ShapeError("build_transform: duplicate inter-day index");
  if (!tau_idx.empty() && (tau_idx.front() < 0 || tau_idx.back() >= total_t))
    throw ShapeError("build_transform: inter-day index outside [0, total_t)");
  if (tilde_t + static_cast<int>(tau_idx.size()) != total_t)
    throw ShapeError("build_transform: tilde_t + |tau| must equal total_t");

  const MatrixXd sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw NumericError("build_transform: eigendecomposition failed");
  const VectorXd ev = es.eigenvalues();
  if (!(ev.minCoeff() > kSpdFloor * ev.maxCoeff()) || !(ev.maxCoeff() > 0.0)) {
    std::ostringstream msg;
    msg << "build_transform: sigma near-singular, eigenvalues " << ev.transpose();
    throw NumericError(msg.str());
  }
  // Descending eigenvalues; each eigenvector's largest-magnitude entry made positive.
  MatrixXd u(n, n);
  VectorXd f(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = n - 1 - j;
    f(j) = ev(src);
    VectorXd col = es.eigenvectors().col(src);
    Eigen::Index imax = 0;
    col.cwiseAbs().maxCoeff(&imax);
    if (col(imax) < 0) col = -col;
    u.col(j) = col;
  }
  const VectorXd s_half = (f.array() / d_lambda.array()).sqrt();

  TransformSet ts;
  ts.q_block = s_half.asDiagonal() * u.transpose();
  ts.tilde_t = tilde_t;
  ts.total_t = total_t;
  ts.tau_idx = std::move(tau_idx);
  return ts;
}

MatrixXd apply_transform(const MatrixXd& y_star, const TransformSet& ts) {
  if (y_star.cols() != ts.total_t || y_star.rows() != ts.q_block.rows())
    throw ShapeError("apply_transform: y_star " + shape(y_star) + " does not match transform (n=" +
                     std::to_string(ts.q_block.rows()) + ", T=" + std::to_string(ts.total_t) + ")");
  MatrixXd out = y_star;
  const MatrixXd block = ts.applied_block();
  for (int c : ts.tau_idx) {
    if (c < 0 || c >= ts.total_t) throw ShapeError("apply_transform: inter-day index out of range");
    out.col(c) = block * y_star.col(c);
  }
  return out;
}

MatrixXd aggregate_block(const TransformSet& ts) {
  const auto n = ts.q_block.rows();
  return static_cast<double>(ts.tilde_t) * MatrixXd::Identity(n, n) +
         static_cast<double>(ts.tau_idx.size()) * ts.applied_block();
}

MatrixXd forward_B(const MatrixXd& b, const TransformSet& ts) {
  if (b.cols() != ts.q_block.rows()) throw ShapeError("forward_B: B " + shape(b) + " has wrong column count");
  return (aggregate_block(ts) * b.transpose()).transpose();
}

MatrixXd recover_B(const MatrixXd& b_tilde, const TransformSet& ts) {
  if (b_tilde.cols() != ts.q_block.rows())
    throw ShapeError("recover_B: B_tilde " + shape(b_tilde) + " has wrong column count");
  const MatrixXd m = aggregate_block(ts);
  Eigen::FullPivLU<MatrixXd> lu(m);
  const Eigen::JacobiSVD<MatrixXd> svd(m);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  const double cond = smin > 0 ? smax / smin : std::numeric_limits<double>::infinity();
  if (!lu.isInvertible() || cond > 1e12) {
    std::ostringstream msg;
    msg << "recover_B: aggregate block singular (condition number " << cond << ")";
    throw NumericError(msg.str());
  }
  return lu.solve(b_tilde.transpose()).transpose();
}

}  // namespace cvarstable
