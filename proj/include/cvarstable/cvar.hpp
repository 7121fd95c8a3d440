#pragma once

// Error-correction model mechanics: regression design, simulation under the
// Gaussian/stable boundary mixture, least squares and the Johansen baseline.
//
// Indexing: price rows are 0-based. Row t of a design corresponds to price
// row t, for t = p, ..., T-1 (one-based p+1..T). A price row is an inter-day
// boundary when the innovation that produced it is stable.

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "cvarstable/rng.hpp"
#include "cvarstable/stable.hpp"

namespace cvarstable {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct CvarParams {
  VectorXd mu;                // n
  MatrixXd alpha_adj;         // n x r
  MatrixXd beta_coint;        // n x r, top r x r block is I after normalisation
  std::vector<MatrixXd> psi;  // p - 1 matrices, n x n
  MatrixXd sigma;             // n x n intra-day covariance
  int r = 1;
  int p = 1;

  int n() const { return static_cast<int>(sigma.rows()); }
  MatrixXd pi() const { return alpha_adj * beta_coint.transpose(); }
  /// Shapes, SPD sigma, rank. Throws ShapeError / NumericError.
  void validate() const;
};

/// Rescales beta so its leading r x r block is the identity and adjusts alpha
/// so Pi is unchanged. Throws NumericError if the block is singular.
void normalise_beta(MatrixXd& beta, MatrixXd* alpha = nullptr);

struct SeriesMeta {
  std::vector<std::string> assets;
  std::vector<std::string> timestamps;  // empty for simulated data
  std::string interval;
  std::vector<std::string> warnings;
};

struct SeriesData {
  MatrixXd prices;           // T x n
  std::vector<int> tau_idx;  // sorted 0-based boundary rows
  SeriesMeta meta;

  int n() const { return static_cast<int>(prices.cols()); }
  int length() const { return static_cast<int>(prices.rows()); }
  std::vector<bool> boundary_mask() const;
  void validate() const;
};

/// Which price rows carry stable innovations.
struct TauSchedule {
  enum class Kind { None, Modulus, Explicit };
  Kind kind = Kind::None;
  int modulus = 0;            // one-based rows t with t % modulus == 0
  std::vector<int> explicit_rows;  // one-based

  static TauSchedule none() { return {}; }
  static TauSchedule every(int m) { return {Kind::Modulus, m, {}}; }
  static TauSchedule rows(std::vector<int> one_based) { return {Kind::Explicit, 0, std::move(one_based)}; }

  /// 0-based sorted rows within [0, T).
  std::vector<int> resolve(int T) const;
};

struct DesignSet {
  MatrixXd y;  // Delta x_t
  MatrixXd x;  // [1, Delta x_{t-1}', ..., Delta x_{t-p+1}']
  MatrixXd z;  // x_{t-1}'
  MatrixXd w;  // [X, Z beta]
  int k = 0;
  std::vector<int> source_row;  // price row of each design row
  std::vector<bool> boundary;

  int rows() const { return static_cast<int>(y.rows()); }
  int tilde_t() const;
  /// Positions (0-based design rows) flagged as boundary.
  std::vector<int> boundary_rows() const;
  /// Rebuild W for a new beta.
  void set_beta(const MatrixXd& beta);
  /// Design restricted to the given rows, in the given order.
  DesignSet select(const std::vector<int>& rows) const;
  DesignSet intraday() const;
};

DesignSet build_design(const SeriesData& series, int p, const MatrixXd& beta);

struct OlsStats {
  MatrixXd b_hat;  // k x n
  MatrixXd s_hat;  // n x n residual cross-product
  double condition = 0;
};

/// Least squares of y on w. Throws NumericError with the condition number when
/// w is rank deficient (condition number above 1e12).
OlsStats ols(const MatrixXd& w, const MatrixXd& y);
inline OlsStats ols_stats(const DesignSet& d) { return ols(d.w, d.y); }

/// Log of the matrix-normal likelihood of Y given (B, Sigma) with rows iid N(0, Sigma).
double regression_loglik(const DesignSet& d, const MatrixXd& b, const MatrixXd& sigma);

struct SimulationOptions {
  /// Optional leading rows copied verbatim; simulation continues from them.
  MatrixXd initial;
  /// Level preceding the first row when `initial` is empty (default zero).
  std::optional<VectorXd> x0;
};

/// Gaussian innovations are drawn for every row first, then boundary rows are
/// overwritten with per-asset stable draws, so two calls with the same seed and
/// different stable laws share their intra-day noise.
SeriesData simulate_cvar(const CvarParams& params, const std::vector<StableParams>& stable,
                         const std::vector<int>& tau_idx, int T, Rng& rng, const SimulationOptions& opts = {});
SeriesData simulate_cvar(const CvarParams& params, const std::vector<StableParams>& stable, const TauSchedule& tau,
                         int T, Rng& rng, const SimulationOptions& opts = {});

/// Largest |eigenvalue| of the companion matrix of the levels VAR.
double companion_spectral_radius(const CvarParams& params);

struct JohansenResult {
  CvarParams params;
  VectorXd eigenvalues;  // descending, all n of them
  bool degenerate = false;  // exact linear dependence among lagged levels
};

/// Reduced-rank regression with an unrestricted constant.
JohansenResult johansen_estimate(const SeriesData& series, int p, int r);

}  // namespace cvarstable
