#include "cvarstable/gibbs.hpp"

#include <cmath>
#include <sstream>

#include "cvarstable/error.hpp"

namespace cvarstable {
namespace {

MatrixXd spd_inverse(const MatrixXd& m, std::string_view what) {
  Eigen::LDLT<MatrixXd> ldlt(m);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) throw NumericError(std::string(what) + " is not invertible");
  MatrixXd inv = ldlt.solve(MatrixXd::Identity(m.rows(), m.cols()));
  return 0.5 * (inv + inv.transpose());
}

VectorXd to_vec(const MatrixXd& m) { return Eigen::Map<const VectorXd>(m.data(), m.size()); }
MatrixXd to_mat(const VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const MatrixXd>(v.data(), rows, cols);
}

VectorXd stable_field(const std::vector<StableParams>& stable, double StableParams::*field, Eigen::Index n,
                      double fallback) {
  VectorXd out = VectorXd::Constant(n, fallback);
  for (Eigen::Index i = 0; i < n && i < static_cast<Eigen::Index>(stable.size()); ++i)
    out(i) = stable[static_cast<std::size_t>(i)].*field;
  return out;
}

bool finite_state(const ChainState& s) {
  return s.sigma.allFinite() && s.b_tilde.allFinite() && s.b.allFinite() && s.beta_free.allFinite() &&
         s.lambda.allFinite();
}

ChainTrace run_engine(const SeriesData& series, int p, int r, const std::vector<StableParams>& stable,
                      const PriorSpec& priors, const ChainConfig& cfg, Rng& rng, bool mixture) {
  cfg.validate();
  series.validate();
  const int n = series.n();
  ChainState st = initial_state(series, p, r, mixture ? stable : std::vector<StableParams>{});
  DesignSet d = build_design(series, p, assemble_beta(st.beta_free, r));
  if (!mixture) std::fill(d.boundary.begin(), d.boundary.end(), false);
  priors.validate(n, d.k, r);

  std::vector<int> intra_rows;
  for (int i = 0; i < d.rows(); ++i)
    if (!d.boundary[static_cast<std::size_t>(i)]) intra_rows.push_back(i);
  if (static_cast<int>(intra_rows.size()) <= d.k)
    throw ShapeError("too few intra-day rows for the conjugate conditionals");
  const bool has_tau = static_cast<int>(intra_rows.size()) < d.rows();
  const VectorXd delta = stable_field(stable, &StableParams::delta, n, 0.0);

  ChainTrace trace;
  trace.n = n;
  trace.k = d.k;
  trace.r = r;
  AmHistory history;
  DesignSet work = d;

  const long total = static_cast<long>(cfg.burnin) + static_cast<long>(cfg.draws) * cfg.thin;
  for (long it = 0; it < total; ++it) {
    st.sigma = cond_sigma_draw(d.select(intra_rows), priors, rng);
    ++trace.acceptance.sigma.accepted;
    ++trace.acceptance.sigma.proposed;

    TransformSet ts = make_transform(d, st.sigma, st.lambda, stable);
    MatrixXd zs = whiten_response(d, ts, delta);

    st.b_tilde = cond_b_tilde_draw(zs, d, st.sigma, priors, rng);
    ++trace.acceptance.b_tilde.accepted;
    ++trace.acceptance.b_tilde.proposed;
    st.b = b_from_tilde(st.b_tilde, ts);

    if (mixture && has_tau) {
      const LambdaUpdate upd = cond_lambda_draw(boundary_residuals(d, st.b, delta), stable, st.lambda, rng);
      trace.acceptance.lambda.accepted += upd.accepted;
      trace.acceptance.lambda.proposed += upd.proposed;
      if (upd.accepted > 0) {
        st.lambda = upd.lambda;
        ts = make_transform(d, st.sigma, st.lambda, stable);
        zs = whiten_response(d, ts, delta);
      }
    }

    const auto rows_free = st.beta_free.rows();
    const LogDensity target = [&](const VectorXd& v) {
      return beta_logpost(to_mat(v, rows_free, r), work, zs, priors);
    };
    VectorXd cur = to_vec(st.beta_free);
    double cur_lp = target(cur);
    for (int s = 0; s < cfg.beta_steps; ++s) {
      const AmStep step = adaptive_metropolis_step(cur, cur_lp, history, target, cfg, rng);
      ++trace.acceptance.beta.proposed;
      if (step.accepted) {
        ++trace.acceptance.beta.accepted;
        cur = step.next;
        cur_lp = step.logp;
      }
      history.add(cur);
    }
    st.beta_free = to_mat(cur, rows_free, r);
    d.set_beta(assemble_beta(st.beta_free, r));

    if (!finite_state(st) || !std::isfinite(cur_lp)) throw SamplerError("chain state became non-finite", it);
    if (it >= cfg.burnin && (it - cfg.burnin) % cfg.thin == 0) trace.states.push_back(st);
  }
  return trace;
}

}  // namespace

PriorSpec PriorSpec::vague(int n, int k, int r) {
  PriorSpec p;
  p.beta_bar = MatrixXd::Zero(n, r);
  p.beta_bar.topRows(r).setIdentity();
  p.q_prior = MatrixXd::Identity(r, r);
  p.h_mat = MatrixXd::Identity(n, n);
  p.s_mat = 0.01 * MatrixXd::Identity(n, n);
  p.h_dof = n + 2;
  p.p_mat = MatrixXd::Zero(k, n);
  p.a_mat = 0.01 * MatrixXd::Identity(k, k);
  return p;
}

void PriorSpec::validate(int n, int k, int r) const {
  auto need = [](const MatrixXd& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols)
      throw ShapeError(std::string("prior ") + what + " must be " + std::to_string(rows) + "x" + std::to_string(cols));
  };
  need(s_mat, n, n, "S");
  need(p_mat, k, n, "P");
  need(a_mat, k, k, "A");
  require_spd(s_mat, "prior S");
  require_spd(a_mat, "prior A");
  if (!(h_dof > n - 1)) throw DomainError("prior h must exceed n - 1");
  if (gaussian_beta_prior) {
    need(beta_bar, n, r, "beta_bar");
    need(q_prior, r, r, "Q");
    need(h_mat, n, n, "H");
    require_spd(q_prior, "prior Q");
    require_spd(h_mat, "prior H");
  }
}

double PriorSpec::log_beta_prior(const MatrixXd& beta_free) const {
  if (!gaussian_beta_prior) return 0.0;
  const auto r = beta_free.cols();
  const auto m = beta_free.rows();
  MatrixNormalSpec spec{free_part(beta_bar, static_cast<int>(r)), h_mat.bottomRightCorner(m, m), q_prior};
  return matrix_normal_logpdf(beta_free, spec);
}

MatrixXd assemble_beta(const MatrixXd& beta_free, int r) {
  MatrixXd beta(beta_free.rows() + r, r);
  beta.topRows(r).setIdentity();
  beta.bottomRows(beta_free.rows()) = beta_free;
  return beta;
}

MatrixXd free_part(const MatrixXd& beta, int r) { return beta.bottomRows(beta.rows() - r); }

void ChainConfig::validate() const {
  if (burnin < 0) throw ValidationError("chain burn-in must be >= 0");
  if (draws < 1) throw ValidationError("chain draws must be >= 1");
  if (thin < 1) throw ValidationError("chain thinning must be >= 1");
  if (beta_steps < 1) throw ValidationError("beta steps must be >= 1");
  if (!(am_weight >= 0.0 && am_weight <= 1.0)) throw ValidationError("adaptive weight must be in [0, 1]");
  if (!(am_fixed_scale > 0.0)) throw ValidationError("fixed proposal scale must be positive");
}

std::vector<double> flatten(const ChainState& s) {
  std::vector<double> out;
  auto push = [&](const MatrixXd& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(m(i, j));
  };
  push(s.beta_free);
  push(s.b);
  for (Eigen::Index i = 0; i < s.sigma.rows(); ++i)
    for (Eigen::Index j = i; j < s.sigma.cols(); ++j) out.push_back(s.sigma(i, j));
  for (Eigen::Index i = 0; i < s.lambda.size(); ++i) out.push_back(s.lambda(i));
  return out;
}

std::vector<std::string> trace_columns(const ChainTrace& trace) {
  std::vector<std::string> names;
  if (trace.states.empty()) return names;
  const auto& s = trace.states.front();
  auto idx = [](Eigen::Index i, Eigen::Index j) { return "[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]"; };
  for (Eigen::Index j = 0; j < s.beta_free.cols(); ++j)
    for (Eigen::Index i = 0; i < s.beta_free.rows(); ++i) names.push_back("beta" + idx(i + trace.r, j));
  for (Eigen::Index j = 0; j < s.b.cols(); ++j)
    for (Eigen::Index i = 0; i < s.b.rows(); ++i) names.push_back("B" + idx(i, j));
  for (Eigen::Index i = 0; i < s.sigma.rows(); ++i)
    for (Eigen::Index j = i; j < s.sigma.cols(); ++j) names.push_back("sigma" + idx(i, j));
  for (Eigen::Index i = 0; i < s.lambda.size(); ++i) names.push_back("lambda[" + std::to_string(i + 1) + "]");
  return names;
}

std::vector<ParamSummary> summarise(const ChainTrace& trace) {
  const auto names = trace_columns(trace);
  std::vector<ParamSummary> out(names.size());
  if (trace.states.empty()) return out;
  std::vector<double> sum(names.size(), 0.0), sq(names.size(), 0.0);
  for (const auto& s : trace.states) {
    const auto v = flatten(s);
    for (std::size_t i = 0; i < v.size(); ++i) sum[i] += v[i];
  }
  const double m = static_cast<double>(trace.states.size());
  for (std::size_t i = 0; i < names.size(); ++i) out[i] = {names[i], sum[i] / m, 0.0};
  for (const auto& s : trace.states) {
    const auto v = flatten(s);
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] += (v[i] - out[i].mean) * (v[i] - out[i].mean);
  }
  for (std::size_t i = 0; i < names.size(); ++i) out[i].stdev = m > 1 ? std::sqrt(sq[i] / (m - 1)) : 0.0;
  return out;
}

ConjugatePosterior conjugate_posterior(const MatrixXd& w, const MatrixXd& y, const PriorSpec& priors) {
  const OlsStats o = ols(w, y);
  const MatrixXd wtw = w.transpose() * w;
  ConjugatePosterior c;
  c.b_hat = o.b_hat;
  c.a_z = priors.a_mat + wtw;
  c.a_z = 0.5 * (c.a_z + c.a_z.transpose());
  Eigen::LDLT<MatrixXd> az(c.a_z);
  if (az.info() != Eigen::Success) throw NumericError("A_Z is singular");
  c.b_z = az.solve(priors.a_mat * priors.p_mat + w.transpose() * y);
  const MatrixXd mid = spd_inverse(spd_inverse(priors.a_mat, "prior A") + spd_inverse(wtw, "W'W"), "A^-1 + (W'W)^-1");
  const MatrixXd diff = priors.p_mat - o.b_hat;
  c.s_post = priors.s_mat + o.s_hat + diff.transpose() * mid * diff;
  c.s_post = 0.5 * (c.s_post + c.s_post.transpose());
  c.dof = static_cast<double>(y.rows()) + priors.h_dof;
  return c;
}

MatrixXd cond_sigma_draw(const DesignSet& intraday, const PriorSpec& priors, Rng& rng) {
  const ConjugatePosterior c = conjugate_posterior(intraday.w, intraday.y, priors);
  require_spd(c.s_post, "Sigma posterior scale");
  return sample_inverse_wishart(c.s_post, c.dof, rng);
}

double cond_sigma_logpdf(const MatrixXd& sigma, const DesignSet& intraday, const PriorSpec& priors) {
  const ConjugatePosterior c = conjugate_posterior(intraday.w, intraday.y, priors);
  return inverse_wishart_logpdf(sigma, c.s_post, c.dof);
}

MatrixXd cond_b_tilde_draw(const MatrixXd& z_star, const DesignSet& d, const MatrixXd& sigma, const PriorSpec& priors,
                           Rng& rng) {
  const ConjugatePosterior c = conjugate_posterior(d.w, z_star, priors);
  return sample_matrix_normal({c.b_z, spd_inverse(c.a_z, "A_Z"), sigma}, rng);
}

double cond_b_tilde_logpdf(const MatrixXd& b_tilde, const MatrixXd& z_star, const DesignSet& d,
                           const MatrixXd& sigma, const PriorSpec& priors) {
  const ConjugatePosterior c = conjugate_posterior(d.w, z_star, priors);
  return matrix_normal_logpdf(b_tilde, {c.b_z, spd_inverse(c.a_z, "A_Z"), sigma});
}

double beta_logpost(const MatrixXd& beta_free, DesignSet& d, const MatrixXd& z_star, const PriorSpec& priors) {
  const int r = static_cast<int>(beta_free.cols());
  d.set_beta(assemble_beta(beta_free, r));
  ConjugatePosterior c;
  try {
    c = conjugate_posterior(d.w, z_star, priors);
  } catch (const NumericError&) {
    return -std::numeric_limits<double>::infinity();
  }
  const double n = static_cast<double>(z_star.cols());
  const double out = priors.log_beta_prior(beta_free) - 0.5 * c.dof * log_det_spd(c.s_post) -
                     0.5 * n * log_det_spd(c.a_z);
  if (std::isnan(out)) throw NumericError("beta_logpost: non-finite determinant");
  return out;
}

TransformSet make_transform(const DesignSet& d, const MatrixXd& sigma, const VectorXd& lambda,
                            const std::vector<StableParams>& stable) {
  const auto tau = d.boundary_rows();
  const auto n = sigma.rows();
  if (tau.empty()) {
    TransformSet ts;
    ts.q_block = MatrixXd::Identity(n, n);
    ts.tilde_t = d.rows();
    ts.total_t = d.rows();
    return ts;
  }
  if (lambda.size() != n || static_cast<Eigen::Index>(stable.size()) != n)
    throw ShapeError("make_transform: need lambda and a stable law per asset");
  VectorXd dl(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = stable[static_cast<std::size_t>(i)].gamma;
    dl(i) = lambda(i) * g * g;
  }
  return build_transform(sigma, dl, d.tilde_t(), d.rows(), tau);
}

MatrixXd whiten_response(const DesignSet& d, const TransformSet& ts, const VectorXd& delta) {
  if (ts.tau_idx.empty()) return d.y;
  MatrixXd shifted = d.y;
  for (int t : ts.tau_idx) shifted.row(t) -= delta.transpose();
  return apply_transform(shifted.transpose(), ts).transpose();
}

MatrixXd b_from_tilde(const MatrixXd& b_tilde, const TransformSet& ts) {
  return recover_B(static_cast<double>(ts.total_t) * b_tilde, ts);
}

MatrixXd boundary_residuals(const DesignSet& d, const MatrixXd& b, const VectorXd& delta) {
  const auto tau = d.boundary_rows();
  MatrixXd e(static_cast<Eigen::Index>(tau.size()), d.y.cols());
  for (std::size_t i = 0; i < tau.size(); ++i)
    e.row(static_cast<Eigen::Index>(i)) = d.y.row(tau[i]) - delta.transpose() - d.w.row(tau[i]) * b;
  return e;
}

double lambda_log_ratio(const VectorXd& e, double gamma, double lam, double lam_prop) {
  if (lam_prop == lam) return 0.0;
  const double ss = e.squaredNorm() / (gamma * gamma);
  const double m = static_cast<double>(e.size());
  return -0.5 * m * (std::log(lam_prop) - std::log(lam)) - 0.5 * ss * (1.0 / lam_prop - 1.0 / lam);
}

VectorXd sample_lambda_prior(const std::vector<StableParams>& stable, Rng& rng) {
  VectorXd out(static_cast<Eigen::Index>(stable.size()));
  for (std::size_t i = 0; i < stable.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = stable[i].a == 2.0 ? 2.0 : sample_positive_stable(stable[i].a, rng);
  return out;
}

LambdaUpdate cond_lambda_draw(const MatrixXd& residuals_tau, const std::vector<StableParams>& stable,
                              const VectorXd& lambda_current, Rng& rng) {
  const auto n = lambda_current.size();
  if (residuals_tau.cols() != n || static_cast<Eigen::Index>(stable.size()) != n)
    throw ShapeError("cond_lambda_draw: residual, lambda and stable dimensions differ");
  LambdaUpdate out{lambda_current, 0, 0};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = stable[static_cast<std::size_t>(i)];
    if (s.a == 2.0) {
      out.lambda(i) = 2.0;
      continue;
    }
    double prop = 0.0;
    do {
      prop = sample_positive_stable(s.a, rng);
    } while (!(prop > 0.0));
    ++out.proposed;
    const double lr = lambda_log_ratio(residuals_tau.col(i), s.gamma, lambda_current(i), prop);
    if (std::log(open_uniform(rng)) < lr) {
      out.lambda(i) = prop;
      ++out.accepted;
    }
  }
  return out;
}

void AmHistory::add(const VectorXd& x) {
  if (count_ == 0) {
    mean_ = VectorXd::Zero(x.size());
    m2_ = MatrixXd::Zero(x.size(), x.size());
  }
  ++count_;
  const VectorXd d0 = x - mean_;
  mean_ += d0 / static_cast<double>(count_);
  m2_ += d0 * (x - mean_).transpose();
}

MatrixXd AmHistory::covariance() const {
  if (count_ < 2) return MatrixXd();
  MatrixXd c = m2_ / static_cast<double>(count_ - 1);
  return 0.5 * (c + c.transpose());
}

VectorXd am_propose(const VectorXd& current, const AmHistory& history, const ChainConfig& cfg, Rng& rng,
                    bool* adaptive) {
  const auto dim = current.size();
  const double dd = static_cast<double>(dim);
  VectorXd z(dim);
  bool use_adaptive = false;
  MatrixXd l;
  if (history.count() >= cfg.am_threshold) {
    const bool pick = open_uniform(rng) < cfg.am_weight;
    if (pick) {
      const MatrixXd cov = history.covariance();
      if (cov.size() > 0 && is_spd(cov)) {
        Eigen::LLT<MatrixXd> llt((2.38 * 2.38 / dd) * cov);
        if (llt.info() == Eigen::Success) {
          l = llt.matrixL();
          use_adaptive = true;
        }
      }
    }
  }
  for (Eigen::Index i = 0; i < dim; ++i) z(i) = std_normal(rng);
  if (adaptive) *adaptive = use_adaptive;
  if (use_adaptive) return current + l * z;
  return current + (cfg.am_fixed_scale / std::sqrt(dd)) * z;
}

AmStep adaptive_metropolis_step(const VectorXd& current, double current_logp, const AmHistory& history,
                                const LogDensity& target, const ChainConfig& cfg, Rng& rng) {
  AmStep out;
  const VectorXd prop = am_propose(current, history, cfg, rng, &out.adaptive);
  const double lp = target(prop);
  const double u = open_uniform(rng);
  if (std::isfinite(lp) && std::log(u) < lp - current_logp) {
    out.next = prop;
    out.logp = lp;
    out.accepted = true;
  } else {
    out.next = current;
    out.logp = current_logp;
  }
  return out;
}

ChainState initial_state(const SeriesData& series, int p, int r, const std::vector<StableParams>& stable) {
  const int n = series.n();
  ChainState st;
  MatrixXd beta = MatrixXd::Zero(n, r);
  beta.topRows(r).setIdentity();
  try {
    beta = johansen_estimate(series, p, r).params.beta_coint;
  } catch (const Error&) {
    // Keep the identity/zero start.
  }
  st.beta_free = free_part(beta, r);
  DesignSet d = build_design(series, p, beta);
  const bool mixture = !stable.empty();
  if (!mixture) std::fill(d.boundary.begin(), d.boundary.end(), false);
  const DesignSet di = d.intraday();
  try {
    const OlsStats o = ols(di.w, di.y);
    st.sigma = o.s_hat / static_cast<double>(std::max(di.rows() - di.k, 1));
    if (!is_spd(st.sigma)) st.sigma = MatrixXd::Identity(n, n);
  } catch (const Error&) {
    st.sigma = MatrixXd::Identity(n, n);
  }
  if (mixture) {
    st.lambda = VectorXd::Ones(n);
    for (int i = 0; i < n; ++i)
      if (stable[static_cast<std::size_t>(i)].a == 2.0) st.lambda(i) = 2.0;
  }
  const TransformSet ts = make_transform(d, st.sigma, st.lambda, stable);
  const VectorXd delta = stable_field(stable, &StableParams::delta, n, 0.0);
  const MatrixXd zs = whiten_response(d, ts, delta);
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(d.w);
  st.b_tilde = cod.solve(zs);
  st.b = b_from_tilde(st.b_tilde, ts);
  return st;
}

ChainTrace run_gibbs(const SeriesData& series, int p, int r, const std::vector<StableParams>& stable,
                     const PriorSpec& priors, const ChainConfig& cfg, Rng& rng) {
  if (static_cast<int>(stable.size()) != series.n())
    throw ValidationError("run_gibbs: need one stable law per asset");
  for (const auto& s : stable) {
    s.validate();
    if (!s.is_symmetric())
      throw ValidationError("the exact sampler requires symmetric stable laws (b = 0); use the ABC estimator");
  }
  return run_engine(series, p, r, stable, priors, cfg, rng, true);
}

ChainTrace gaussian_bayes_estimate(const SeriesData& series, int p, int r, const PriorSpec& priors,
                                   const ChainConfig& cfg, Rng& rng) {
  return run_engine(series, p, r, {}, priors, cfg, rng, false);
}

}  // namespace cvarstable
