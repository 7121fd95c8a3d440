#include "cvarstable/abc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cvarstable/error.hpp"

namespace cvarstable {
namespace {

VectorXd to_vec(const MatrixXd& m) { return Eigen::Map<const VectorXd>(m.data(), m.size()); }

std::vector<double> boundary_values(const DesignSet& d, int asset) {
  std::vector<double> out;
  for (int t : d.boundary_rows()) out.push_back(d.y(t, asset));
  return out;
}

VectorXd quantile_block(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const QuantileStats q = quantile_stats(s);
  const double iqr = std::max(q.q75 - q.q25, 1e-300);
  const double q10 = sample_quantile(s, 0.10);
  const double q90 = sample_quantile(s, 0.90);
  VectorXd out(kQuantileStatsPerAsset);
  out << q.nu_alpha, q.nu_beta, q.q50, std::log(iqr), (q90 - q10) / iqr;
  return out;
}

bool use_quantiles(const DesignSet& d, bool requested) {
  return requested && static_cast<int>(d.boundary_rows().size()) >= kMinQuantilePoints;
}

double positive_or_one(double v) { return std::isfinite(v) && v > 1e-12 ? v : 1.0; }

VectorXd stable_delta(const std::vector<StableParams>& stable) {
  VectorXd out(static_cast<Eigen::Index>(stable.size()));
  for (std::size_t i = 0; i < stable.size(); ++i) out(static_cast<Eigen::Index>(i)) = stable[i].delta;
  return out;
}

DesignSet with_beta(const DesignSet& d, const MatrixXd& beta_free, int r) {
  DesignSet out = d;
  out.set_beta(assemble_beta(beta_free, r));
  return out;
}

MatrixXd whitened(const DesignSet& d, const MatrixXd& sigma, const VectorXd& lambda,
                  const std::vector<StableParams>& stable) {
  return whiten_response(d, make_transform(d, sigma, lambda, stable), stable_delta(stable));
}

}  // namespace

std::string summary_spec_id(int n, int p, bool quantiles) {
  return std::string(quantiles ? "ols+cov+quant" : "ols+cov") + "/n" + std::to_string(n) + "p" + std::to_string(p);
}

SummaryVector raw_summary(const SeriesData& series, int p, bool quantiles) {
  const DesignSet d = build_design(series, p, MatrixXd());
  const DesignSet di = d.intraday();
  const int n = series.n();
  const OlsStats o = ols(di.w, di.y);
  const bool q = use_quantiles(d, quantiles);
  const auto n_ols = o.b_hat.size();
  const auto n_cov = n * (n + 1) / 2;
  SummaryVector out;
  out.values.resize(n_ols + n_cov + (q ? n * kQuantileStatsPerAsset : 0));
  out.values.head(n_ols) = to_vec(o.b_hat);
  const MatrixXd s = o.s_hat / static_cast<double>(di.rows());
  Eigen::Index pos = n_ols;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) out.values(pos++) = s(i, j);
  if (q) {
    for (int i = 0; i < n; ++i) {
      const auto v = boundary_values(d, i);
      out.values.segment(pos, kQuantileStatsPerAsset) = quantile_block(v);
      pos += kQuantileStatsPerAsset;
    }
  }
  out.spec_id = summary_spec_id(n, p, q);
  if (!out.values.allFinite()) throw NumericError("summary statistics are not finite");
  return out;
}

SummaryScales reference_scales(const SeriesData& observed, int p, Rng& rng, int bootstrap, bool quantiles) {
  const DesignSet d = build_design(observed, p, MatrixXd());
  const DesignSet di = d.intraday();
  const int n = observed.n();
  const OlsStats o = ols(di.w, di.y);
  const double t = di.rows();
  const bool q = use_quantiles(d, quantiles);

  SummaryScales sc;
  sc.spec_id = summary_spec_id(n, p, q);
  if (quantiles && !q)
    sc.notes.push_back("fewer than " + std::to_string(kMinQuantilePoints) +
                       " boundary points: quantile block dropped");
  const auto n_ols = o.b_hat.size();
  sc.values.resize(n_ols + n * (n + 1) / 2 + (q ? n * kQuantileStatsPerAsset : 0));

  const MatrixXd wtw_inv = (di.w.transpose() * di.w).ldlt().solve(MatrixXd::Identity(di.k, di.k));
  const MatrixXd sig_dof = o.s_hat / std::max(t - di.k, 1.0);
  Eigen::Index pos = 0;
  for (Eigen::Index j = 0; j < o.b_hat.cols(); ++j)
    for (Eigen::Index i = 0; i < o.b_hat.rows(); ++i) sc.values(pos++) = positive_or_one(std::sqrt(sig_dof(j, j) * wtw_inv(i, i)));
  const MatrixXd s = o.s_hat / t;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) sc.values(pos++) = positive_or_one(std::sqrt((s(i, j) * s(i, j) + s(i, i) * s(j, j)) / t));

  if (q) {
    if (bootstrap < 2) throw ValidationError("bootstrap resamples must be >= 2");
    for (int i = 0; i < n; ++i) {
      const auto v = boundary_values(d, i);
      std::uniform_int_distribution<std::size_t> pick(0, v.size() - 1);
      VectorXd sum = VectorXd::Zero(kQuantileStatsPerAsset), sq = VectorXd::Zero(kQuantileStatsPerAsset);
      std::vector<double> res(v.size());
      for (int b = 0; b < bootstrap; ++b) {
        for (auto& x : res) x = v[pick(rng)];
        const VectorXd st = quantile_block(res);
        sum += st;
        sq += st.cwiseProduct(st);
      }
      const double m = bootstrap;
      for (int k = 0; k < kQuantileStatsPerAsset; ++k) {
        const double var = (sq(k) - sum(k) * sum(k) / m) / (m - 1.0);
        sc.values(pos++) = positive_or_one(std::sqrt(std::max(var, 0.0)));
      }
    }
  }
  return sc;
}

SummaryVector summary_stats(const SeriesData& series, int p, int /*r*/, const SummaryScales& scales) {
  const bool q = scales.spec_id.rfind("ols+cov+quant", 0) == 0;
  SummaryVector raw = raw_summary(series, p, q);
  if (raw.spec_id != scales.spec_id || raw.values.size() != scales.values.size())
    throw ValidationError("summary spec mismatch: " + raw.spec_id + " vs " + scales.spec_id);
  raw.values = raw.values.cwiseQuotient(scales.values);
  return raw;
}

double summary_distance(const SummaryVector& a, const SummaryVector& b) {
  if (a.spec_id != b.spec_id || a.values.size() != b.values.size())
    throw ValidationError("cannot compare summaries of different specs (" + a.spec_id + " vs " + b.spec_id + ")");
  return (a.values - b.values).norm();
}

int abc_kernel(const SummaryVector& s_obs, const SummaryVector& s_sim, double epsilon) {
  if (!(epsilon >= 0.0)) throw DomainError("ABC tolerance must be >= 0");
  return summary_distance(s_obs, s_sim) <= epsilon ? 1 : 0;
}

SeriesData simulate_synthetic(const CvarParams& theta, const VectorXd& /*lambda*/,
                              const std::vector<StableParams>& stable, const std::vector<int>& tau_idx, int T,
                              Rng& rng, const SimulationOptions& opts) {
  return simulate_cvar(theta, stable, tau_idx, T, rng, opts);
}

void AbcConfig::validate() const {
  chain.validate();
  if (!std::isnan(epsilon) && !(epsilon >= 0.0)) throw ValidationError("abc epsilon must be >= 0");
  if (!(calibrate_quantile > 0.0 && calibrate_quantile <= 100.0))
    throw ValidationError("abc calibrate_quantile must be in (0, 100]");
  if (calibrate_draws < 2) throw ValidationError("abc calibrate_draws must be >= 2");
  for (std::size_t i = 0; i < anneal.size(); ++i) {
    if (!(anneal[i] >= 0.0)) throw ValidationError("anneal tolerances must be >= 0");
    if (i > 0 && !(anneal[i] < anneal[i - 1])) throw ValidationError("anneal schedule must be strictly decreasing");
  }
  if (anneal_every < 0) throw ValidationError("anneal_every must be >= 0");
  if (patience < 1) throw ValidationError("abc patience must be >= 1");
}

CvarParams params_from_state(const ChainState& s, int p, int r) {
  const auto n = s.sigma.rows();
  CvarParams out;
  out.r = r;
  out.p = p;
  out.sigma = s.sigma;
  out.beta_coint = assemble_beta(s.beta_free, r);
  out.mu = s.b.row(0).transpose();
  for (int lag = 1; lag < p; ++lag) out.psi.push_back(s.b.block(1 + n * (lag - 1), 0, n, n).transpose());
  out.alpha_adj = s.b.bottomRows(r).transpose();
  return out;
}

double log_prior_state(const ChainState& s, const PriorSpec& priors) {
  MatrixNormalSpec b_prior{priors.p_mat, priors.a_mat.ldlt().solve(MatrixXd::Identity(priors.a_mat.rows(), priors.a_mat.cols())),
                           s.sigma};
  return inverse_wishart_logpdf(s.sigma, priors.s_mat, priors.h_dof) + matrix_normal_logpdf(s.b_tilde, b_prior) +
         priors.log_beta_prior(s.beta_free);
}

double abc_log_ratio(const ChainState& cur, const ChainState& prop, const DesignSet& d,
                     const std::vector<StableParams>& stable, const PriorSpec& priors) {
  const int r = static_cast<int>(cur.beta_free.cols());
  const DesignSet dc = with_beta(d, cur.beta_free, r);
  const DesignSet dp = with_beta(d, prop.beta_free, r);
  const double fwd = cond_sigma_logpdf(prop.sigma, dc.intraday(), priors) +
                     cond_b_tilde_logpdf(prop.b_tilde, whitened(dc, prop.sigma, cur.lambda, stable), dc, prop.sigma, priors);
  const double bwd = cond_sigma_logpdf(cur.sigma, dp.intraday(), priors) +
                     cond_b_tilde_logpdf(cur.b_tilde, whitened(dp, cur.sigma, prop.lambda, stable), dp, cur.sigma, priors);
  return log_prior_state(prop, priors) - log_prior_state(cur, priors) + bwd - fwd;
}

double calibrate_epsilon(const SummaryVector& s_obs, const SummaryScales& scales, const CvarParams& theta,
                         const std::vector<StableParams>& stable, const SeriesData& observed, int p, double quantile,
                         int draws, Rng& rng) {
  SimulationOptions opts;
  opts.initial = observed.prices.topRows(p);
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(draws));
  for (int k = 0; k < draws; ++k) {
    const SeriesData sim = simulate_synthetic(theta, VectorXd(), stable, observed.tau_idx, observed.length(), rng, opts);
    dist.push_back(summary_distance(s_obs, summary_stats(sim, p, theta.r, scales)));
  }
  std::sort(dist.begin(), dist.end());
  return sample_quantile(dist, quantile / 100.0);
}

AbcRun run_hadmcmc_abc(const SeriesData& series, int p, int r, const std::vector<StableParams>& stable,
                       const PriorSpec& priors, const AbcConfig& cfg, Rng& rng) {
  cfg.validate();
  series.validate();
  const int n = series.n();
  if (static_cast<int>(stable.size()) != n) throw ValidationError("run_hadmcmc_abc: need one stable law per asset");
  for (const auto& s : stable) s.validate();

  ChainState cur = initial_state(series, p, r, stable);
  DesignSet d = build_design(series, p, assemble_beta(cur.beta_free, r));
  priors.validate(n, d.k, r);

  // Johansen (alpha, beta, mu, psi) with the intra-day Sigma; Johansen's own
  // residual covariance absorbs the boundary jumps.
  CvarParams pilot;
  try {
    pilot = johansen_estimate(series, p, r).params;
    pilot.sigma = cur.sigma;
    pilot.validate();
  } catch (const Error&) {
    pilot = params_from_state(cur, p, r);
  }

  AbcRun run;
  const SummaryScales scales = reference_scales(series, p, rng, cfg.bootstrap, cfg.quantile_block);
  run.s_obs = summary_stats(series, p, r, scales);
  SimulationOptions sim_opts;
  sim_opts.initial = series.prices.topRows(p);
  const int T = series.length();

  double eps_fixed = cfg.epsilon;
  if (!cfg.use_kernel) {
    eps_fixed = std::numeric_limits<double>::infinity();
  } else if (cfg.anneal.empty() && std::isnan(eps_fixed)) {
    eps_fixed = calibrate_epsilon(run.s_obs, scales, pilot, stable, series, p, cfg.calibrate_quantile,
                                  cfg.calibrate_draws, rng);
  }
  const long every = cfg.anneal.empty()
                         ? 1
                         : (cfg.anneal_every > 0 ? cfg.anneal_every
                                                 : std::max<long>(1, cfg.chain.burnin / static_cast<long>(cfg.anneal.size())));
  auto eps_at = [&](long it) {
    if (cfg.anneal.empty()) return eps_fixed;
    const auto stage = std::min<std::size_t>(static_cast<std::size_t>(it / every), cfg.anneal.size() - 1);
    return cfg.anneal[stage];
  };

  auto distance_of = [&](const ChainState& s) {
    const SeriesData sim =
        simulate_synthetic(params_from_state(s, p, r), s.lambda, stable, series.tau_idx, T, rng, sim_opts);
    return summary_distance(run.s_obs, summary_stats(sim, p, r, scales));
  };
  double cur_dist = cfg.use_kernel ? distance_of(cur) : std::numeric_limits<double>::quiet_NaN();

  ChainTrace& trace = run.trace;
  trace.n = n;
  trace.k = d.k;
  trace.r = r;
  AmHistory history;
  long since_accept = 0;

  // Early rejection: the MH uniform is checked before paying for a simulation.
  auto try_move = [&](const ChainState& prop, double log_ratio, double eps, BlockRate& block) {
    ++block.proposed;
    if (!std::isfinite(log_ratio) && !(log_ratio > 0)) return false;
    if (!(std::log(open_uniform(rng)) < log_ratio)) return false;
    double dist = std::numeric_limits<double>::quiet_NaN();
    if (cfg.use_kernel) {
      ++block.simulated;
      try {
        dist = distance_of(prop);
      } catch (const NumericError&) {
        return false;  // proposal produced a degenerate synthetic series
      }
      if (!(dist <= eps)) return false;
    }
    ++block.accepted;
    cur = prop;
    cur_dist = dist;
    return true;
  };
  auto refresh_b = [&](ChainState& s) { s.b = b_from_tilde(s.b_tilde, make_transform(d, s.sigma, s.lambda, stable)); };

  const long total = static_cast<long>(cfg.chain.burnin) + static_cast<long>(cfg.chain.draws) * cfg.chain.thin;
  for (long it = 0; it < total; ++it) {
    const double eps = eps_at(it);
    bool accepted = false;
    const VectorXd beta_vec = Eigen::Map<const VectorXd>(cur.beta_free.data(), cur.beta_free.size());
    if (!cfg.blockwise) {
      ChainState prop;
      prop.sigma = cond_sigma_draw(d.intraday(), priors, rng);
      prop.b_tilde = cond_b_tilde_draw(whitened(d, prop.sigma, cur.lambda, stable), d, prop.sigma, priors, rng);
      prop.lambda = sample_lambda_prior(stable, rng);
      const VectorXd bv = am_propose(beta_vec, history, cfg.chain, rng);
      prop.beta_free = Eigen::Map<const MatrixXd>(bv.data(), cur.beta_free.rows(), r);
      refresh_b(prop);
      accepted = try_move(prop, abc_log_ratio(cur, prop, d, stable, priors), eps, trace.acceptance.joint);
      if (accepted) d.set_beta(assemble_beta(cur.beta_free, r));
    } else {
      const double lp_cur = log_prior_state(cur, priors);
      {
        ChainState prop = cur;
        const DesignSet di = d.intraday();
        prop.sigma = cond_sigma_draw(di, priors, rng);
        refresh_b(prop);
        const double lr = log_prior_state(prop, priors) - lp_cur + cond_sigma_logpdf(cur.sigma, di, priors) -
                          cond_sigma_logpdf(prop.sigma, di, priors);
        accepted |= try_move(prop, lr, eps, trace.acceptance.sigma);
      }
      {
        ChainState prop = cur;
        const MatrixXd zs = whitened(d, cur.sigma, cur.lambda, stable);
        prop.b_tilde = cond_b_tilde_draw(zs, d, cur.sigma, priors, rng);
        refresh_b(prop);
        const double lr = log_prior_state(prop, priors) - log_prior_state(cur, priors) +
                          cond_b_tilde_logpdf(cur.b_tilde, zs, d, cur.sigma, priors) -
                          cond_b_tilde_logpdf(prop.b_tilde, zs, d, cur.sigma, priors);
        accepted |= try_move(prop, lr, eps, trace.acceptance.b_tilde);
      }
      {
        ChainState prop = cur;
        prop.lambda = sample_lambda_prior(stable, rng);
        refresh_b(prop);
        accepted |= try_move(prop, 0.0, eps, trace.acceptance.lambda);
      }
      {
        ChainState prop = cur;
        const VectorXd cv = Eigen::Map<const VectorXd>(cur.beta_free.data(), cur.beta_free.size());
        const VectorXd bv = am_propose(cv, history, cfg.chain, rng);
        prop.beta_free = Eigen::Map<const MatrixXd>(bv.data(), cur.beta_free.rows(), r);
        const double lr = priors.log_beta_prior(prop.beta_free) - priors.log_beta_prior(cur.beta_free);
        if (try_move(prop, lr, eps, trace.acceptance.beta)) {
          accepted = true;
          d.set_beta(assemble_beta(cur.beta_free, r));
        }
      }
      // Blockwise: the overall rate pools every block move.
      const auto& a = trace.acceptance;
      trace.acceptance.joint.proposed = a.sigma.proposed + a.b_tilde.proposed + a.lambda.proposed + a.beta.proposed;
      trace.acceptance.joint.accepted = a.sigma.accepted + a.b_tilde.accepted + a.lambda.accepted + a.beta.accepted;
      trace.acceptance.joint.simulated = a.sigma.simulated + a.b_tilde.simulated + a.lambda.simulated + a.beta.simulated;
    }
    history.add(Eigen::Map<const VectorXd>(cur.beta_free.data(), cur.beta_free.size()));

    since_accept = accepted ? 0 : since_accept + 1;
    if (since_accept >= cfg.patience) {
      std::ostringstream msg;
      msg << "ABC chain stalled: no proposal accepted in " << cfg.patience << " iterations at epsilon " << eps
          << "; increase epsilon or use an annealing schedule";
      throw SamplerError(msg.str(), it);
    }
    if (!cur.sigma.allFinite() || !cur.b.allFinite() || !cur.beta_free.allFinite())
      throw SamplerError("ABC chain state became non-finite", it);
    if (it >= cfg.chain.burnin && (it - cfg.chain.burnin) % cfg.chain.thin == 0) {
      trace.states.push_back(cur);
      trace.distance.push_back(cur_dist);
      trace.epsilon.push_back(eps);
    }
  }
  run.epsilon = eps_at(total - 1);
  return run;
}

}  // namespace cvarstable
