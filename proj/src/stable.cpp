#include "cvarstable/stable.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cvarstable/error.hpp"

namespace cvarstable {
namespace {

constexpr double kPi = std::numbers::pi;

bool is_one(double a) { return std::abs(a - 1.0) < 1e-12; }

// Standard S1(a, b, 1, 0) draw (Weron's corrected form of CMS).
double cms_standard_s1(double a, double b, Rng& rng) {
  double v = 0.0;
  do {
    v = kPi * (open_uniform(rng) - 0.5);
  } while (std::abs(v) >= kPi / 2);
  const double w = -std::log(open_uniform(rng));

  if (is_one(a)) {
    const double h = kPi / 2 + b * v;
    return (2.0 / kPi) * (h * std::tan(v) - b * std::log((kPi / 2) * w * std::cos(v) / h));
  }
  const double zeta = b * std::tan(kPi * a / 2);
  const double shift = std::atan(zeta) / a;
  const double scale = std::pow(1.0 + zeta * zeta, 1.0 / (2.0 * a));
  const double av = a * (v + shift);
  return scale * std::sin(av) / std::pow(std::cos(v), 1.0 / a) *
         std::pow(std::cos(v - av) / w, (1.0 - a) / a);
}

// McCulloch (1986), tables III-V and VII.
constexpr std::array<double, 15> kNuAlphaGrid = {2.439, 2.5, 2.6, 2.7, 2.8, 3.0, 3.2, 3.5,
                                                 4.0,   5.0, 6.0, 8.0, 10.0, 15.0, 25.0};
constexpr std::array<double, 7> kNuBetaGrid = {0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0};

// alpha = psi1(nu_alpha, nu_beta); rows follow kNuAlphaGrid, columns kNuBetaGrid.
constexpr double kPsi1[15][7] = {
    {2.000, 2.000, 2.000, 2.000, 2.000, 2.000, 2.000}, {1.916, 1.924, 1.924, 1.924, 1.924, 1.924, 1.924},
    {1.808, 1.813, 1.829, 1.829, 1.829, 1.829, 1.829}, {1.729, 1.730, 1.737, 1.745, 1.745, 1.745, 1.745},
    {1.664, 1.663, 1.663, 1.668, 1.676, 1.676, 1.676}, {1.563, 1.560, 1.553, 1.548, 1.547, 1.547, 1.547},
    {1.484, 1.480, 1.471, 1.460, 1.448, 1.438, 1.438}, {1.391, 1.386, 1.378, 1.364, 1.337, 1.318, 1.318},
    {1.279, 1.273, 1.266, 1.250, 1.210, 1.184, 1.150}, {1.128, 1.121, 1.114, 1.101, 1.067, 1.027, 0.973},
    {1.029, 1.021, 1.014, 1.004, 0.974, 0.935, 0.874}, {0.896, 0.892, 0.884, 0.883, 0.855, 0.823, 0.769},
    {0.818, 0.812, 0.806, 0.801, 0.780, 0.756, 0.691}, {0.698, 0.695, 0.692, 0.689, 0.676, 0.656, 0.597},
    {0.593, 0.590, 0.588, 0.586, 0.579, 0.563, 0.513}};

// beta = psi2(nu_alpha, nu_beta), same layout.
constexpr double kPsi2[15][7] = {
    {0, 2.160, 1.000, 1.000, 1.000, 1.000, 1.000}, {0, 1.592, 3.390, 1.000, 1.000, 1.000, 1.000},
    {0, 0.759, 1.800, 1.000, 1.000, 1.000, 1.000}, {0, 0.482, 1.048, 1.694, 1.000, 1.000, 1.000},
    {0, 0.360, 0.760, 1.232, 2.229, 1.000, 1.000}, {0, 0.253, 0.518, 0.823, 1.575, 1.000, 1.000},
    {0, 0.203, 0.410, 0.632, 1.244, 1.906, 1.000}, {0, 0.165, 0.332, 0.499, 0.943, 1.560, 1.000},
    {0, 0.136, 0.271, 0.404, 0.689, 1.230, 2.195}, {0, 0.109, 0.216, 0.323, 0.539, 0.827, 1.917},
    {0, 0.096, 0.190, 0.284, 0.472, 0.693, 1.759}, {0, 0.082, 0.163, 0.243, 0.412, 0.601, 1.596},
    {0, 0.074, 0.147, 0.220, 0.377, 0.546, 1.482}, {0, 0.064, 0.128, 0.191, 0.330, 0.478, 1.362},
    {0, 0.056, 0.112, 0.167, 0.285, 0.428, 1.274}};

// Increasing alpha grid for phi3/phi5 (McCulloch tabulates it decreasing).
constexpr std::array<double, 16> kAlphaGrid = {0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2,
                                               1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0};
constexpr std::array<double, 5> kBetaGrid = {0.0, 0.25, 0.5, 0.75, 1.0};

// nu_c = phi3(alpha, beta); rows follow kAlphaGrid.
constexpr double kPhi3[16][5] = {
    {2.588, 3.073, 4.534, 6.636, 9.144}, {2.337, 2.634, 3.542, 4.808, 6.247},
    {2.189, 2.392, 3.004, 3.844, 4.775}, {2.098, 2.244, 2.676, 3.265, 3.912},
    {2.040, 2.149, 2.461, 2.886, 3.356}, {2.000, 2.085, 2.311, 2.624, 2.973},
    {1.980, 2.040, 2.205, 2.435, 2.696}, {1.965, 2.007, 2.125, 2.294, 2.491},
    {1.955, 1.984, 2.067, 2.188, 2.333}, {1.946, 1.967, 2.022, 2.106, 2.211},
    {1.939, 1.952, 1.988, 2.045, 2.116}, {1.933, 1.940, 1.962, 1.997, 2.043},
    {1.927, 1.930, 1.943, 1.961, 1.987}, {1.921, 1.922, 1.927, 1.936, 1.947},
    {1.914, 1.915, 1.916, 1.918, 1.921}, {1.908, 1.908, 1.908, 1.908, 1.908}};

// nu_zeta = phi5(alpha, beta), same layout.
constexpr double kPhi5[16][5] = {
    {0, -0.061, -0.279, -0.659, -1.198}, {0, -0.078, -0.272, -0.581, -0.997},
    {0, -0.089, -0.262, -0.520, -0.853}, {0, -0.096, -0.250, -0.469, -0.742},
    {0, -0.099, -0.237, -0.424, -0.652}, {0, -0.098, -0.223, -0.380, -0.576},
    {0, -0.095, -0.208, -0.346, -0.508}, {0, -0.090, -0.192, -0.310, -0.447},
    {0, -0.084, -0.173, -0.276, -0.390}, {0, -0.075, -0.154, -0.241, -0.335},
    {0, -0.066, -0.134, -0.206, -0.283}, {0, -0.056, -0.111, -0.170, -0.232},
    {0, -0.043, -0.088, -0.132, -0.179}, {0, -0.030, -0.061, -0.092, -0.123},
    {0, -0.017, -0.032, -0.049, -0.064}, {0, 0.000, 0.000, 0.000, 0.000}};

struct Bracket {
  std::size_t lo;
  double frac;
};

template <std::size_t N>
Bracket bracket(const std::array<double, N>& grid, double x) {
  if (x <= grid.front()) return {0, 0.0};
  if (x >= grid.back()) return {N - 2, 1.0};
  const auto it = std::upper_bound(grid.begin(), grid.end(), x);
  const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
  const std::size_t lo = hi - 1;
  return {lo, (x - grid[lo]) / (grid[hi] - grid[lo])};
}

template <std::size_t R, std::size_t C>
double bilinear(const double (&table)[R][C], Bracket row, Bracket col) {
  const double top = table[row.lo][col.lo] * (1 - col.frac) + table[row.lo][col.lo + 1] * col.frac;
  const double bottom = table[row.lo + 1][col.lo] * (1 - col.frac) + table[row.lo + 1][col.lo + 1] * col.frac;
  return top * (1 - row.frac) + bottom * row.frac;
}

}  // namespace

void StableParams::validate() const {
  std::ostringstream msg;
  if (!(a > 0.0 && a <= 2.0)) msg << "tail index a=" << a << " outside (0,2]; ";
  if (!(b >= -1.0 && b <= 1.0)) msg << "skew b=" << b << " outside [-1,1]; ";
  if (!(gamma > 0.0) || !std::isfinite(gamma)) msg << "scale gamma=" << gamma << " must be positive; ";
  if (!std::isfinite(delta)) msg << "location delta must be finite; ";
  if (!msg.str().empty()) throw DomainError("invalid stable parameters: " + msg.str());
}

double sample_stable(const StableParams& params, Rng& rng) {
  const double z1 = cms_standard_s1(params.a, params.b, rng);
  // S1 -> S0 for the standardised variable; for a = 1 the two coincide at unit scale.
  const double z0 = is_one(params.a) ? z1 : z1 - params.b * std::tan(kPi * params.a / 2);
  return params.gamma * z0 + params.delta;
}

std::vector<double> sample_stable(const StableParams& params, std::size_t n, Rng& rng) {
  params.validate();
  if (n == 0) throw DomainError("sample_stable: n must be at least 1");
  std::vector<double> out(n);
  for (auto& x : out) x = sample_stable(params, rng);
  return out;
}

std::complex<double> stable_cf(const StableParams& params, double t) {
  params.validate();
  if (t == 0.0) return {1.0, 0.0};
  const double at = std::abs(t);
  const double sgn = t > 0 ? 1.0 : -1.0;
  const double gt = params.gamma * at;
  double re = 0.0;
  double im = 0.0;
  if (is_one(params.a)) {
    re = -gt;
    im = -gt * params.b * (2.0 / kPi) * sgn * std::log(gt);
  } else {
    const double ga = std::pow(gt, params.a);
    re = -ga;
    im = -ga * params.b * std::tan(kPi * params.a / 2) * sgn * (std::pow(gt, 1.0 - params.a) - 1.0);
  }
  im += params.delta * t;
  return std::exp(std::complex<double>(re, im));
}

double sample_positive_stable(double a, Rng& rng) {
  if (!(a > 0.0 && a < 2.0)) throw DomainError("sample_positive_stable requires 0 < a < 2 (got " + std::to_string(a) + ")");
  const double half = a / 2.0;
  const double scale = std::pow(std::cos(kPi * a / 4.0), 2.0 / a);
  double x = 0.0;
  do {
    x = scale * cms_standard_s1(half, 1.0, rng);
  } while (!(x > 0.0) || !std::isfinite(x));
  return 2.0 * x;
}

double sample_quantile(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw ShapeError("sample_quantile: empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

QuantileStats quantile_stats(std::span<const double> samples) {
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  QuantileStats q;
  q.q05 = sample_quantile(s, 0.05);
  q.q25 = sample_quantile(s, 0.25);
  q.q50 = sample_quantile(s, 0.50);
  q.q75 = sample_quantile(s, 0.75);
  q.q95 = sample_quantile(s, 0.95);
  const double iqr = q.q75 - q.q25;
  const double spread = q.q95 - q.q05;
  q.nu_alpha = iqr > 0 ? spread / iqr : 0.0;
  q.nu_beta = spread > 0 ? (q.q95 + q.q05 - 2.0 * q.q50) / spread : 0.0;
  return q;
}

StableFit fit_mcculloch(std::span<const double> samples, std::size_t min_samples) {
  if (samples.size() < min_samples) {
    throw NumericError("fit_mcculloch: " + std::to_string(samples.size()) + " samples, need at least " +
                       std::to_string(min_samples));
  }
  for (double x : samples) {
    if (!std::isfinite(x)) throw NumericError("fit_mcculloch: non-finite sample");
  }
  StableFit fit;
  fit.stats = quantile_stats(samples);
  const QuantileStats& q = fit.stats;
  if (!(q.q75 - q.q25 > 0.0)) throw NumericError("fit_mcculloch: zero interquartile range");

  double alpha = 2.0;
  double beta = 0.0;
  if (q.nu_alpha < kNuAlphaGrid.front()) {
    fit.near_gaussian = true;
    fit.notes.push_back("near-Gaussian: nu_alpha below the a=2 boundary, skew set to 0");
  } else {
    if (q.nu_alpha > kNuAlphaGrid.back()) {
      fit.clamped = true;
      fit.notes.push_back("nu_alpha above table range, clamped");
    }
    const double abs_nb = std::abs(q.nu_beta);
    if (abs_nb > kNuBetaGrid.back()) {
      fit.clamped = true;
      fit.notes.push_back("nu_beta outside table range, clamped");
    }
    const Bracket ra = bracket(kNuAlphaGrid, q.nu_alpha);
    const Bracket cb = bracket(kNuBetaGrid, abs_nb);
    alpha = bilinear(kPsi1, ra, cb);
    beta = std::copysign(bilinear(kPsi2, ra, cb), q.nu_beta);
    if (q.nu_beta == 0.0) beta = 0.0;
    if (std::abs(beta) > 1.0) {
      fit.clamped = true;
      fit.notes.push_back("skew estimate outside [-1,1], clamped");
      beta = std::clamp(beta, -1.0, 1.0);
    }
    if (alpha < kAlphaGrid.front()) {
      fit.clamped = true;
      fit.notes.push_back("tail index below 0.5, scale/location tables clamped");
    }
    alpha = std::clamp(alpha, 1e-3, 2.0);
  }

  const Bracket ra = bracket(kAlphaGrid, alpha);
  const Bracket cb = bracket(kBetaGrid, std::abs(beta));
  const double nu_c = bilinear(kPhi3, ra, cb);
  const double nu_zeta = (beta < 0.0 ? -1.0 : 1.0) * bilinear(kPhi5, ra, cb);
  const double c = (q.q75 - q.q25) / nu_c;
  // McCulloch's zeta is the S0 location.
  const double zeta = q.q50 + c * (beta == 0.0 ? 0.0 : nu_zeta);

  fit.params = StableParams{alpha, beta, c, zeta};
  return fit;
}

}  // namespace cvarstable
