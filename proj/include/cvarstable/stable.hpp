#pragma once

// Univariate alpha-stable laws in Nolan's S0 parameterisation.
//
// Conventions used throughout the library:
//  * S_a(b, gamma, delta) has characteristic function
//      a != 1: exp(-gamma^a |t|^a [1 + i b tan(pi a/2) sgn(t) (|gamma t|^{1-a} - 1)] + i delta t)
//      a == 1: exp(-gamma |t| [1 + i b (2/pi) sgn(t) log(gamma |t|)] + i delta t)
//    so a = 2 is N(delta, 2 gamma^2) and (a, b) = (1, 0) is Cauchy(delta, gamma).
//  * The scale-mixture variable lambda returned by sample_positive_stable is
//    normalised so that sqrt(lambda) * gamma * Z + delta ~ S_a(0, gamma, delta)
//    for Z ~ N(0, 1). The conditional variance of a mixture draw is therefore
//    lambda * gamma^2 (gamma enters squared).

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cvarstable/rng.hpp"

namespace cvarstable {

struct StableParams {
  double a = 2.0;      // tail index, 0 < a <= 2
  double b = 0.0;      // skew, -1 <= b <= 1
  double gamma = 1.0;  // scale > 0
  double delta = 0.0;  // location

  /// Throws DomainError when any field is outside its range.
  void validate() const;
  bool is_gaussian() const noexcept { return a == 2.0; }
  bool is_symmetric() const noexcept { return b == 0.0 || a == 2.0; }
};

/// Chambers-Mallows-Stuck draw from S_a(b, gamma, delta).
double sample_stable(const StableParams& params, Rng& rng);
std::vector<double> sample_stable(const StableParams& params, std::size_t n, Rng& rng);

std::complex<double> stable_cf(const StableParams& params, double t);

/// Totally skewed positive (a/2)-stable mixing variable; see the header note
/// for its scaling. Requires 0 < a < 2.
double sample_positive_stable(double a, Rng& rng);

/// Quantile statistics underlying McCulloch's estimator.
struct QuantileStats {
  double q05 = 0, q25 = 0, q50 = 0, q75 = 0, q95 = 0;
  double nu_alpha = 0;  // (q95 - q05) / (q75 - q25)
  double nu_beta = 0;   // (q95 + q05 - 2 q50) / (q95 - q05)
};

/// Linear-interpolation sample quantile (the "type 7" definition).
double sample_quantile(std::span<const double> sorted, double prob);
QuantileStats quantile_stats(std::span<const double> samples);

struct StableFit {
  StableParams params;
  QuantileStats stats;
  bool clamped = false;       // a statistic fell outside the tabulated region
  bool near_gaussian = false; // nu_alpha below the a = 2 boundary
  std::vector<std::string> notes;
};

/// McCulloch (1986) quantile estimator, reported in S0.
/// Throws NumericError when fewer than `min_samples` values are supplied or
/// the interquartile range is degenerate.
StableFit fit_mcculloch(std::span<const double> samples, std::size_t min_samples = 100);

}  // namespace cvarstable
