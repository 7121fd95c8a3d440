#pragma once

// Matrix-variate kernels: matrix-normal and inverse-Wishart sampling and
// densities, Vec/Kronecker helpers, and the inter-day whitening transform.

#include <Eigen/Dense>
#include <string_view>
#include <vector>

#include "cvarstable/rng.hpp"

namespace cvarstable {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// X (k x n) with Cov(Vec(X)) = col_scale (x) row_scale, Vec stacking columns.
/// Equivalently every column j of X - mean has covariance col_scale(j,j) * row_scale.
struct MatrixNormalSpec {
  MatrixXd mean;
  MatrixXd row_scale;  // k x k
  MatrixXd col_scale;  // n x n
};

/// Relative eigenvalue floor used by every SPD check.
inline constexpr double kSpdFloor = 1e-10;

bool is_spd(const MatrixXd& m, double rel_floor = kSpdFloor);
/// Throws NumericError naming `what` if `m` is not symmetric positive definite.
void require_spd(const MatrixXd& m, std::string_view what);
/// Lower Cholesky factor; regularises (and reports via `regularised`) a
/// borderline matrix by adding 1e-8 * trace / n to the diagonal.
MatrixXd spd_cholesky(const MatrixXd& m, std::string_view what, bool* regularised = nullptr);
double log_det_spd(const MatrixXd& m);

MatrixXd sample_matrix_normal(const MatrixNormalSpec& spec, Rng& rng);
double matrix_normal_logpdf(const MatrixXd& x, const MatrixNormalSpec& spec);

/// IW(scale, dof): density proportional to |X|^{-(dof+n+1)/2} exp(-tr(scale X^{-1})/2).
MatrixXd sample_inverse_wishart(const MatrixXd& scale, double dof, Rng& rng);
double inverse_wishart_logpdf(const MatrixXd& x, const MatrixXd& scale, double dof);

MatrixXd kron(const MatrixXd& a, const MatrixXd& b);
VectorXd vec(const MatrixXd& m);
/// A X B, i.e. the un-vectorised (B^T (x) A) Vec(X).
MatrixXd kron_vec_apply(const MatrixXd& a, const MatrixXd& x, const MatrixXd& b);

/// Inter-day whitening block and the column schedule it applies to.
///
/// q_block is S^{1/2} U^T with Sigma = U F U^T (eigenvalues descending) and
/// S_ii = F_ii / d_lambda_ii, so that q_block^T D_lambda q_block = Sigma.
/// An observation stored as a row y (1 x n) is whitened as y * q_block; in the
/// column (n x T) layout used by apply_transform that is q_block^T * column.
struct TransformSet {
  MatrixXd q_block;
  int tilde_t = 0;            // intra-day columns
  int total_t = 0;            // all columns
  std::vector<int> tau_idx;   // sorted 0-based inter-day columns

  /// The n x n block that multiplies an inter-day column from the left.
  MatrixXd applied_block() const { return q_block.transpose(); }
};

TransformSet build_transform(const MatrixXd& sigma, const VectorXd& d_lambda, int tilde_t, int total_t,
                             std::vector<int> tau_idx);

/// y_star is n x T; inter-day columns are whitened, the rest copied.
MatrixXd apply_transform(const MatrixXd& y_star, const TransformSet& ts);

/// Aggregate block M = tilde_t I + sum over tau of the applied block.
MatrixXd aggregate_block(const TransformSet& ts);
/// B_tilde^T = M B^T.
MatrixXd forward_B(const MatrixXd& b, const TransformSet& ts);
/// Solves B_tilde^T = M B^T for B. Throws NumericError if M is singular.
MatrixXd recover_B(const MatrixXd& b_tilde, const TransformSet& ts);

}  // namespace cvarstable
