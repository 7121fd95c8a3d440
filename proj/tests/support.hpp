#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "cvarstable/cvar.hpp"
#include "cvarstable/rng.hpp"

namespace testsupport {

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

/// Asymptotic two-sample critical value at the 1% level.
inline double ks_critical_1pct(std::size_t n, std::size_t m) {
  return 1.628 * std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * static_cast<double>(m)));
}

struct EmpiricalCf {
  std::complex<double> value;
  double se_re = 0, se_im = 0;
};

inline EmpiricalCf empirical_cf(const std::vector<double>& x, double t) {
  double sc = 0, ss = 0, sc2 = 0, ss2 = 0;
  for (double v : x) {
    const double c = std::cos(t * v), s = std::sin(t * v);
    sc += c;
    ss += s;
    sc2 += c * c;
    ss2 += s * s;
  }
  const double n = static_cast<double>(x.size());
  const double mc = sc / n, ms = ss / n;
  return {{mc, ms}, std::sqrt(std::max(sc2 / n - mc * mc, 0.0) / n), std::sqrt(std::max(ss2 / n - ms * ms, 0.0) / n)};
}

inline double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline Eigen::MatrixXd random_spd(int n, cvarstable::Rng& rng, double ridge = 0.5) {
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = cvarstable::std_normal(rng);
  return a * a.transpose() + ridge * Eigen::MatrixXd::Identity(n, n);
}

inline Eigen::MatrixXd random_matrix(int r, int c, cvarstable::Rng& rng) {
  Eigen::MatrixXd a(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) a(i, j) = cvarstable::std_normal(rng);
  return a;
}

/// Deterministic pseudo-noise shared with tests/oracles/johansen_ols_oracle.py.
inline double hash_noise(int t, int j) {
  const double v = std::sin((t + 1) * 12.9898 + (j + 1) * 78.233) * 43758.5453;
  return v - std::floor(v) - 0.5;
}

inline cvarstable::SeriesData oracle_series(int T = 400) {
  cvarstable::SeriesData s;
  s.prices.resize(T, 2);
  Eigen::Vector2d prev = Eigen::Vector2d::Zero();
  for (int t = 0; t < T; ++t) {
    const Eigen::Vector2d e(hash_noise(t, 0), hash_noise(t, 1));
    const double ec = prev(0) - 0.5 * prev(1);
    const Eigen::Vector2d dx = Eigen::Vector2d(0.01, -0.02) + Eigen::Vector2d(-0.2, 0.1) * ec + e;
    prev += dx;
    s.prices.row(t) = prev.transpose();
  }
  s.meta.assets = {"x1", "x2"};
  return s;
}

inline cvarstable::CvarParams pair_params() {
  cvarstable::CvarParams p;
  p.beta_coint = Eigen::MatrixXd(2, 1);
  p.beta_coint << 1.0, 0.5;
  p.alpha_adj = Eigen::MatrixXd(2, 1);
  p.alpha_adj << 0.1, -0.3;
  p.mu = Eigen::VectorXd::Zero(2);
  p.sigma = Eigen::MatrixXd::Identity(2, 2);
  p.r = 1;
  p.p = 1;
  return p;
}

}  // namespace testsupport
