#pragma once

// Successive-conditional (Geweke) checks: alternate simulating data given the
// parameters with one conditional update of the parameters given the data.
// The parameter marginal must stay at the prior.

#include <cmath>
#include <string>
#include <vector>

#include "cvarstable/gibbs.hpp"
#include "support.hpp"

namespace testsupport {

struct MarginalCheck {
  std::string name;
  double chain_mean = 0, chain_se = 0;  // batch-means standard error
  double prior_mean = 0, prior_se = 0;  // independent prior draws
  double z() const { return std::abs(chain_mean - prior_mean) / std::hypot(chain_se, prior_se); }
  bool ok(double k = 3.0) const { return z() <= k; }
};

inline MarginalCheck compare(const std::string& name, const std::vector<double>& chain, const std::vector<double>& prior,
                             int batches = 50) {
  MarginalCheck c;
  c.name = name;
  c.chain_mean = mean(chain);
  const std::size_t bs = chain.size() / static_cast<std::size_t>(batches);
  std::vector<double> bm;
  for (int b = 0; b < batches; ++b) {
    double s = 0;
    for (std::size_t i = 0; i < bs; ++i) s += chain[static_cast<std::size_t>(b) * bs + i];
    bm.push_back(s / static_cast<double>(bs));
  }
  c.chain_se = std::sqrt(variance(bm) / batches);
  c.prior_mean = mean(prior);
  c.prior_se = std::sqrt(variance(prior) / static_cast<double>(prior.size()));
  return c;
}

/// Fixed design with an intercept and one random regressor.
inline cvarstable::DesignSet geweke_design(int T, cvarstable::Rng& rng) {
  cvarstable::DesignSet d;
  d.w = Eigen::MatrixXd::Ones(T, 2);
  for (int t = 0; t < T; ++t) d.w(t, 1) = cvarstable::std_normal(rng);
  d.k = 2;
  d.y = Eigen::MatrixXd::Zero(T, 2);
  return d;
}

inline cvarstable::PriorSpec geweke_prior() {
  cvarstable::PriorSpec p = cvarstable::PriorSpec::vague(2, 2, 1);
  p.s_mat << 1.0, 0.3, 0.3, 2.0;
  p.h_dof = 7;
  p.a_mat << 2.0, 0.5, 0.5, 1.0;
  p.p_mat << 0.5, -0.2, 0.1, 0.3;
  return p;
}

inline Eigen::MatrixXd simulate_response(const cvarstable::DesignSet& d, const Eigen::MatrixXd& b,
                                         const Eigen::MatrixXd& sigma, cvarstable::Rng& rng) {
  const Eigen::MatrixXd l = sigma.llt().matrixL();
  Eigen::MatrixXd y = d.w * b;
  for (int t = 0; t < y.rows(); ++t) {
    Eigen::VectorXd z(sigma.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = cvarstable::std_normal(rng);
    y.row(t) += (l * z).transpose();
  }
  return y;
}

/// Sigma | Y with B integrated out. Checks trace(Sigma).
inline std::vector<MarginalCheck> geweke_sigma(int cycles, int T, std::uint64_t seed) {
  using namespace cvarstable;
  Rng rng(seed);
  const PriorSpec pr = geweke_prior();
  DesignSet d = geweke_design(T, rng);
  const MatrixXd a_inv = pr.a_mat.inverse();
  MatrixXd sigma = sample_inverse_wishart(pr.s_mat, pr.h_dof, rng);
  std::vector<double> chain, chain00, prior, prior00;
  for (int c = 0; c < cycles; ++c) {
    const MatrixXd b = sample_matrix_normal({pr.p_mat, a_inv, sigma}, rng);
    d.y = simulate_response(d, b, sigma, rng);
    sigma = cond_sigma_draw(d, pr, rng);
    chain.push_back(sigma.trace());
    chain00.push_back(std::log(sigma(0, 0)));
    const MatrixXd s = sample_inverse_wishart(pr.s_mat, pr.h_dof, rng);
    prior.push_back(s.trace());
    prior00.push_back(std::log(s(0, 0)));
  }
  return {compare("trace(Sigma)", chain, prior), compare("log Sigma[1,1]", chain00, prior00)};
}

/// B_tilde | Sigma, Z. Sigma is redrawn from its prior each cycle.
inline std::vector<MarginalCheck> geweke_b_tilde(int cycles, int T, std::uint64_t seed) {
  using namespace cvarstable;
  Rng rng(seed);
  const PriorSpec pr = geweke_prior();
  DesignSet d = geweke_design(T, rng);
  const MatrixXd a_inv = pr.a_mat.inverse();
  MatrixXd sigma = sample_inverse_wishart(pr.s_mat, pr.h_dof, rng);
  MatrixXd b = sample_matrix_normal({pr.p_mat, a_inv, sigma}, rng);
  std::vector<std::vector<double>> chain(4), prior(4);
  for (int c = 0; c < cycles; ++c) {
    const MatrixXd z = simulate_response(d, b, sigma, rng);
    b = cond_b_tilde_draw(z, d, sigma, pr, rng);
    // Sigma | B from its own full conditional keeps (Sigma, B) at the prior.
    const MatrixXd dev = b - pr.p_mat;
    sigma = sample_inverse_wishart(pr.s_mat + dev.transpose() * pr.a_mat * dev, pr.h_dof + b.rows(), rng);
    const MatrixXd s = sample_inverse_wishart(pr.s_mat, pr.h_dof, rng);
    const MatrixXd bp = sample_matrix_normal({pr.p_mat, a_inv, s}, rng);
    for (int i = 0; i < 4; ++i) {
      chain[i].push_back(b(i % 2, i / 2));
      prior[i].push_back(bp(i % 2, i / 2));
    }
  }
  std::vector<MarginalCheck> out;
  for (int i = 0; i < 4; ++i)
    out.push_back(compare("B[" + std::to_string(i % 2 + 1) + "," + std::to_string(i / 2 + 1) + "]", chain[i], prior[i]));
  return out;
}

/// lambda | boundary residuals, every 10th of T rows a boundary.
inline std::vector<MarginalCheck> geweke_lambda(int cycles, int T, std::uint64_t seed) {
  using namespace cvarstable;
  Rng rng(seed);
  const std::vector<StableParams> st = {{1.3, 0, 1.5, 0}, {1.7, 0, 0.5, 0}};
  const int m = std::max(1, T / 10);
  VectorXd lam = sample_lambda_prior(st, rng);
  std::vector<std::vector<double>> chain(2), prior(2);
  for (int c = 0; c < cycles; ++c) {
    MatrixXd e(m, 2);
    for (int i = 0; i < 2; ++i)
      for (int t = 0; t < m; ++t) e(t, i) = std::sqrt(lam(i)) * st[i].gamma * std_normal(rng);
    lam = cond_lambda_draw(e, st, lam, rng).lambda;
    const VectorXd lp = sample_lambda_prior(st, rng);
    for (int i = 0; i < 2; ++i) {
      chain[i].push_back(std::log(lam(i)));
      prior[i].push_back(std::log(lp(i)));
    }
  }
  return {compare("log lambda[1]", chain[0], prior[0]), compare("log lambda[2]", chain[1], prior[1])};
}

}  // namespace testsupport
