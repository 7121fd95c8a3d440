#pragma once

// Likelihood-free sampler for the general (skewed) boundary-mixture model.
// Proposals come from the conjugate conditionals of the symmetric model; the
// accept step compares summaries of a synthetic series with the observed ones
// under a hard kernel.

#include <Eigen/Dense>
#include <limits>
#include <string>
#include <vector>

#include "cvarstable/cvar.hpp"
#include "cvarstable/gibbs.hpp"
#include "cvarstable/stable.hpp"

namespace cvarstable {

/// Blocks: auxiliary OLS coefficients of Y on [X, Z] and the upper triangle of
/// S_hat / t, both over intra-day rows only; five quantile statistics per
/// asset of the boundary differences.
/// The quantile block is dropped when fewer than kMinQuantilePoints exist.
inline constexpr int kMinQuantilePoints = 10;
inline constexpr int kQuantileStatsPerAsset = 5;

struct SummaryScales {
  VectorXd values;  // one positive scale per summary entry
  std::string spec_id;
  std::vector<std::string> notes;
};

struct SummaryVector {
  VectorXd values;
  std::string spec_id;
};

/// Summary spec name, e.g. "ols+cov+quant/n2p1".
std::string summary_spec_id(int n, int p, bool quantiles);
/// Unscaled summary entries.
SummaryVector raw_summary(const SeriesData& series, int p, bool quantiles = true);
/// Scales from the observed series: OLS standard errors, asymptotic standard
/// errors of the covariance entries, bootstrap SDs of the quantile statistics.
SummaryScales reference_scales(const SeriesData& observed, int p, Rng& rng, int bootstrap = 200,
                               bool quantiles = true);
/// Standardised summary. `r` is accepted for interface symmetry; the
/// auxiliary regression is rank-unrestricted.
SummaryVector summary_stats(const SeriesData& series, int p, int r, const SummaryScales& scales);

/// Throws ValidationError on spec mismatch.
double summary_distance(const SummaryVector& a, const SummaryVector& b);
/// 1 iff ||a - b||_2 <= epsilon.
int abc_kernel(const SummaryVector& s_obs, const SummaryVector& s_sim, double epsilon);

/// Simulates from theta with fresh stable boundary noise. `lambda` is carried
/// for interface symmetry and does not enter the simulation.
SeriesData simulate_synthetic(const CvarParams& theta, const VectorXd& lambda, const std::vector<StableParams>& stable,
                              const std::vector<int>& tau_idx, int T, Rng& rng, const SimulationOptions& opts = {});

struct AbcConfig {
  /// Absolute tolerance; NaN means calibrate.
  double epsilon = std::numeric_limits<double>::quiet_NaN();
  double calibrate_quantile = 10.0;  // percent
  int calibrate_draws = 200;
  /// Strictly decreasing tolerances, each held for `anneal_every` iterations;
  /// the last one stays in force. Overrides `epsilon` when non-empty.
  std::vector<double> anneal;
  int anneal_every = 0;  // 0: spread evenly over burn-in
  bool quantile_block = true;
  bool use_kernel = true;   // off: no simulation, kernel fixed at 1
  bool blockwise = false;   // Metropolis-within-Gibbs instead of joint updates
  long patience = 20000;    // iterations without acceptance before SamplerError
  int bootstrap = 200;
  ChainConfig chain;
  void validate() const;
};

/// theta from a chain state (beta assembled, B split into mu, psi, alpha).
CvarParams params_from_state(const ChainState& s, int p, int r);

/// log p(Sigma) + log p(B_tilde | Sigma) + log p(beta); lambda's prior is
/// omitted because it always cancels against its proposal.
double log_prior_state(const ChainState& s, const PriorSpec& priors);

/// ABC-MH log ratio (without the kernel) for a joint move cur -> prop where
/// prop's Sigma, B_tilde come from the conjugate conditionals at cur's beta
/// and lambda, lambda from its prior and beta from a symmetric walk.
/// `d` is the observed design; its W is rebuilt internally.
double abc_log_ratio(const ChainState& cur, const ChainState& prop, const DesignSet& d,
                     const std::vector<StableParams>& stable, const PriorSpec& priors);

/// Tolerance as the q-th percentile of distances between s_obs and
/// simulations at theta.
double calibrate_epsilon(const SummaryVector& s_obs, const SummaryScales& scales, const CvarParams& theta,
                         const std::vector<StableParams>& stable, const SeriesData& observed, int p, double quantile,
                         int draws, Rng& rng);

struct AbcRun {
  ChainTrace trace;
  double epsilon = 0;  // final tolerance
  SummaryVector s_obs;
};

AbcRun run_hadmcmc_abc(const SeriesData& series, int p, int r, const std::vector<StableParams>& stable,
                       const PriorSpec& priors, const AbcConfig& cfg, Rng& rng);

}  // namespace cvarstable
