#pragma once

// Conjugate sampler for the symmetric boundary-mixture model, plus the
// Gaussian-only baseline that shares its machinery.
//
// Notation: W = [X, Z beta] (t x k), B is k x n, the B prior is
// MN(P, A^{-1}, Sigma) and the Sigma prior is IW(S, h). Boundary rows are
// whitened with the transform of matvar.hpp after subtracting delta, giving a
// working response Z_* whose rows all have covariance Sigma.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cvarstable/cvar.hpp"
#include "cvarstable/matvar.hpp"
#include "cvarstable/rng.hpp"
#include "cvarstable/stable.hpp"

namespace cvarstable {

struct PriorSpec {
  MatrixXd beta_bar;  // n x r prior mean of beta
  MatrixXd q_prior;   // r x r
  MatrixXd h_mat;     // n x n
  MatrixXd s_mat;     // n x n
  double h_dof = 0;
  MatrixXd p_mat;     // k x n
  MatrixXd a_mat;     // k x k
  /// Off: flat prior on the free beta entries.
  bool gaussian_beta_prior = false;

  /// S = 0.01 I, h = n + 2, A = 0.01 I, P = 0, flat beta.
  static PriorSpec vague(int n, int k, int r);
  void validate(int n, int k, int r) const;
  double log_beta_prior(const MatrixXd& beta_free) const;
};

/// [I_r; beta_free].
MatrixXd assemble_beta(const MatrixXd& beta_free, int r);
MatrixXd free_part(const MatrixXd& beta, int r);

struct ChainState {
  MatrixXd sigma;
  MatrixXd b_tilde;
  MatrixXd b;          // recovered regression coefficients
  MatrixXd beta_free;  // (n - r) x r
  VectorXd lambda;     // empty for the Gaussian baseline
};

struct BlockRate {
  long accepted = 0;
  long proposed = 0;
  long simulated = 0;  // ABC: proposals that passed the MH test and were simulated
  double rate() const { return proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0; }
};

struct AcceptanceStats {
  BlockRate sigma, b_tilde, lambda, beta, joint;
};

struct ChainConfig {
  int burnin = 2000;
  int draws = 5000;
  int thin = 1;
  int beta_steps = 1;       // Metropolis steps on beta per sweep
  double am_weight = 0.95;  // weight of the adaptive component
  int am_threshold = 100;   // history length before adapting
  double am_fixed_scale = 0.1;
  void validate() const;
};

struct ChainTrace {
  std::vector<ChainState> states;
  AcceptanceStats acceptance;
  std::uint64_t seed = 0;
  std::string config_echo;
  std::vector<double> distance;  // ABC only: distance of the current state
  std::vector<double> epsilon;   // ABC only: tolerance in force
  int n = 0, k = 0, r = 0;
};

/// Posterior mean and standard deviation of one scalar.
struct ParamSummary {
  std::string name;
  double mean = 0;
  double stdev = 0;
};

/// Every scalar of (beta_free, B, Sigma, lambda) in a fixed order.
std::vector<ParamSummary> summarise(const ChainTrace& trace);
/// Flattened values in the same order as summarise; names via trace_columns.
std::vector<std::string> trace_columns(const ChainTrace& trace);
std::vector<double> flatten(const ChainState& s);

/// Conjugate posterior of a regression Y = W B + E under the prior above.
struct ConjugatePosterior {
  MatrixXd a_z;     // A + W'W
  MatrixXd b_z;     // A_Z^{-1} (A P + W'Y)
  MatrixXd b_hat;   // least squares
  MatrixXd s_post;  // S + S_hat + (P - B_hat)' [A^{-1} + (W'W)^{-1}]^{-1} (P - B_hat)
  double dof = 0;   // t + h
};
ConjugatePosterior conjugate_posterior(const MatrixXd& w, const MatrixXd& y, const PriorSpec& priors);

/// Sigma given the intra-day rows with B integrated out.
MatrixXd cond_sigma_draw(const DesignSet& intraday, const PriorSpec& priors, Rng& rng);
double cond_sigma_logpdf(const MatrixXd& sigma, const DesignSet& intraday, const PriorSpec& priors);

/// B_tilde given Sigma and the whitened response.
MatrixXd cond_b_tilde_draw(const MatrixXd& z_star, const DesignSet& d, const MatrixXd& sigma, const PriorSpec& priors,
                           Rng& rng);
double cond_b_tilde_logpdf(const MatrixXd& b_tilde, const MatrixXd& z_star, const DesignSet& d,
                           const MatrixXd& sigma, const PriorSpec& priors);

/// log p(beta) - ((t + h)/2) log|S_Z| - (n/2) log|A_Z|, up to a constant.
/// `d` has its W rebuilt for the assembled beta.
double beta_logpost(const MatrixXd& beta_free, DesignSet& d, const MatrixXd& z_star, const PriorSpec& priors);

/// Boundary rows of the working response: (y - delta) whitened by ts.
/// ts.tau_idx indexes design rows.
MatrixXd whiten_response(const DesignSet& d, const TransformSet& ts, const VectorXd& delta);
/// Transform for the current (Sigma, lambda); identity block when d has no boundary rows.
TransformSet make_transform(const DesignSet& d, const MatrixXd& sigma, const VectorXd& lambda,
                            const std::vector<StableParams>& stable);
/// B from B_tilde; B_tilde is a row-average coefficient so this is recover_B(t * B_tilde).
MatrixXd b_from_tilde(const MatrixXd& b_tilde, const TransformSet& ts);
/// Boundary residuals (y - delta) - W B, |tau| x n.
MatrixXd boundary_residuals(const DesignSet& d, const MatrixXd& b, const VectorXd& delta);

struct LambdaUpdate {
  VectorXd lambda;
  int accepted = 0;
  int proposed = 0;
};
/// Log MH ratio for moving one component from lam to lam_prop; e holds that
/// component's boundary residuals.
double lambda_log_ratio(const VectorXd& e, double gamma, double lam, double lam_prop);
/// Independence MH per component with the positive-stable prior as proposal.
/// Components with a = 2 are pinned at 2 (no mixing).
LambdaUpdate cond_lambda_draw(const MatrixXd& residuals_tau, const std::vector<StableParams>& stable,
                              const VectorXd& lambda_current, Rng& rng);
/// Prior draw of the full lambda vector.
VectorXd sample_lambda_prior(const std::vector<StableParams>& stable, Rng& rng);

/// Running mean and covariance of past draws (Welford).
class AmHistory {
 public:
  void add(const VectorXd& x);
  long count() const { return count_; }
  MatrixXd covariance() const;

 private:
  long count_ = 0;
  VectorXd mean_;
  MatrixXd m2_;
};

struct AmStep {
  VectorXd next;
  double logp = 0;
  bool accepted = false;
  bool adaptive = false;
};
using LogDensity = std::function<double(const VectorXd&)>;

/// Draws the mixture proposal without evaluating any target.
VectorXd am_propose(const VectorXd& current, const AmHistory& history, const ChainConfig& cfg, Rng& rng,
                    bool* adaptive = nullptr);
AmStep adaptive_metropolis_step(const VectorXd& current, double current_logp, const AmHistory& history,
                                const LogDensity& target, const ChainConfig& cfg, Rng& rng);

/// Stable laws are fixed inputs and must be symmetric.
ChainTrace run_gibbs(const SeriesData& series, int p, int r, const std::vector<StableParams>& stable,
                     const PriorSpec& priors, const ChainConfig& cfg, Rng& rng);

/// Same engine with every row treated as Gaussian.
ChainTrace gaussian_bayes_estimate(const SeriesData& series, int p, int r, const PriorSpec& priors,
                                   const ChainConfig& cfg, Rng& rng);

/// Starting point shared by the samplers: Johansen beta when available,
/// least-squares Sigma and B. An empty `stable` means the Gaussian model.
ChainState initial_state(const SeriesData& series, int p, int r, const std::vector<StableParams>& stable);

}  // namespace cvarstable
