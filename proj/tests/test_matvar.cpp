#include <doctest.h>

#include <cmath>

#include "cvarstable/error.hpp"
#include "cvarstable/matvar.hpp"
#include "support.hpp"

using namespace cvarstable;
using testsupport::random_matrix;
using testsupport::random_spd;

namespace {

double rel_frob(const MatrixXd& a, const MatrixXd& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("matvar: spd checks") {
  CHECK(is_spd(MatrixXd::Identity(3, 3)));
  MatrixXd m(2, 2);
  m << 1, 2, 2, 1;
  CHECK_FALSE(is_spd(m));
  CHECK_THROWS_AS(require_spd(m, "sigma"), NumericError);
  try {
    require_spd(m, "row_scale");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("row_scale") != std::string::npos);
  }
  CHECK(log_det_spd(4.0 * MatrixXd::Identity(2, 2)) == doctest::Approx(2 * std::log(4.0)));
}

TEST_CASE("matvar: matrix normal moments") {
  Rng rng(21);
  SUBCASE("standard entries") {
    MatrixNormalSpec spec{MatrixXd::Zero(2, 2), MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2)};
    const int n = 10000;
    MatrixXd sum = MatrixXd::Zero(2, 2), sq = MatrixXd::Zero(2, 2);
    for (int i = 0; i < n; ++i) {
      const MatrixXd x = sample_matrix_normal(spec, rng);
      sum += x;
      sq += x.cwiseProduct(x);
    }
    const MatrixXd var = sq / n - (sum / n).cwiseProduct(sum / n);
    // SE of a unit-variance sample variance is sqrt(2/n).
    CHECK((var.array() - 1.0).abs().maxCoeff() < 3 * std::sqrt(2.0 / n));
  }
  SUBCASE("row scale sets first-row variance") {
    MatrixXd rs = MatrixXd::Identity(2, 2);
    rs(0, 0) = 4;
    MatrixNormalSpec spec{MatrixXd::Zero(2, 2), rs, MatrixXd::Identity(2, 2)};
    double s = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) s += std::pow(sample_matrix_normal(spec, rng)(0, 1), 2);
    CHECK(std::abs(s / n - 4.0) < 3 * 4.0 * std::sqrt(2.0 / n));
  }
  SUBCASE("empirical covariance of Vec(X) is the Kronecker product") {
    MatrixNormalSpec spec{random_matrix(3, 2, rng), random_spd(3, rng), random_spd(2, rng)};
    const MatrixXd target = kron(spec.col_scale, spec.row_scale);
    const int n = 40000;
    MatrixXd acc = MatrixXd::Zero(6, 6);
    for (int i = 0; i < n; ++i) {
      const VectorXd v = vec(sample_matrix_normal(spec, rng) - spec.mean);
      acc += v * v.transpose();
    }
    acc /= n;
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        const double se = std::sqrt((target(i, i) * target(j, j) + target(i, j) * target(i, j)) / n);
        CHECK(std::abs(acc(i, j) - target(i, j)) < 4 * se);
      }
  }
}

TEST_CASE("matvar: matrix normal logpdf matches the vectorised Gaussian") {
  Rng rng(22);
  MatrixNormalSpec spec{random_matrix(3, 2, rng), random_spd(3, rng), random_spd(2, rng)};
  const MatrixXd x = random_matrix(3, 2, rng);
  const MatrixXd cov = kron(spec.col_scale, spec.row_scale);
  const VectorXd d = vec(x - spec.mean);
  const double ref = -0.5 * (6 * std::log(2 * M_PI) + std::log(cov.determinant()) + d.dot(cov.ldlt().solve(d)));
  CHECK(matrix_normal_logpdf(x, spec) == doctest::Approx(ref).epsilon(1e-10));
}

TEST_CASE("matvar: inverse Wishart") {
  Rng rng(23);
  CHECK_THROWS_AS(sample_inverse_wishart(MatrixXd::Identity(2, 2), 0.5, rng), DomainError);
  auto check_mean = [&](const MatrixXd& scale, double dof, int n) {
    const int d = static_cast<int>(scale.rows());
    const MatrixXd mean = scale / (dof - d - 1);
    MatrixXd sum = MatrixXd::Zero(d, d), sq = MatrixXd::Zero(d, d);
    for (int i = 0; i < n; ++i) {
      const MatrixXd x = sample_inverse_wishart(scale, dof, rng);
      REQUIRE(is_spd(x));
      sum += x;
      sq += x.cwiseProduct(x);
    }
    const MatrixXd m = sum / n;
    const MatrixXd se = ((sq / n - m.cwiseProduct(m)) / n).cwiseSqrt();
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) CHECK(std::abs(m(i, j) - mean(i, j)) < 3 * se(i, j) + 1e-12);
  };
  check_mean(MatrixXd::Identity(2, 2), 10, 10000);
  MatrixXd s = MatrixXd::Zero(2, 2);
  s.diagonal() << 2, 1;
  check_mean(s, 8, 20000);
}

TEST_CASE("matvar: inverse Wishart logpdf in one dimension is an inverse gamma") {
  // IW(s, h) on 1x1 is InvGamma(h/2, s/2).
  const double s = 3.0, h = 7.0, x = 0.8;
  const double a = h / 2, b = s / 2;
  const double ref = a * std::log(b) - std::lgamma(a) - (a + 1) * std::log(x) - b / x;
  CHECK(inverse_wishart_logpdf(MatrixXd::Constant(1, 1, x), MatrixXd::Constant(1, 1, s), h) ==
        doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("matvar: Kronecker and Vec identity") {
  Rng rng(24);
  const MatrixXd x = random_matrix(2, 2, rng);
  CHECK(kron_vec_apply(MatrixXd::Identity(2, 2), x, MatrixXd::Identity(2, 2)) == x);
  for (int trial = 0; trial < 100; ++trial) {
    const MatrixXd a = random_matrix(3, 2, rng), xx = random_matrix(2, 2, rng), b = random_matrix(2, 4, rng);
    const VectorXd lhs = kron(b.transpose(), a) * vec(xx);
    CHECK((lhs - vec(kron_vec_apply(a, xx, b))).cwiseAbs().maxCoeff() < 1e-12);
  }
  // Unit matrix e_i e_j' moves column i of A X into column j.
  const MatrixXd a = random_matrix(3, 2, rng);
  MatrixXd e = MatrixXd::Zero(2, 4);
  e(1, 3) = 1.0;
  const MatrixXd out = kron_vec_apply(a, x, e);
  CHECK((out.col(3) - (a * x).col(1)).norm() < 1e-14);
  CHECK(out.leftCols(3).norm() == 0.0);
  CHECK_THROWS_AS(kron_vec_apply(a, random_matrix(3, 3, rng), e), ShapeError);
}

TEST_CASE("matvar: transform construction") {
  Rng rng(25);
  SUBCASE("matched scales") {
    const MatrixXd s = random_spd(2, rng);
    VectorXd d(2);
    d << s(0, 0), s(1, 1);
    MatrixXd sd = MatrixXd::Zero(2, 2);
    sd.diagonal() = d;
    const auto ts = build_transform(sd, d, 3, 5, {1, 4});
    CHECK(rel_frob(ts.q_block.transpose() * sd * ts.q_block, sd) < 1e-14);
  }
  SUBCASE("diagonal sigma with unit d_lambda") {
    MatrixXd s = MatrixXd::Zero(3, 3);
    s.diagonal() << 9, 4, 1;
    const auto ts = build_transform(s, VectorXd::Ones(3), 2, 2, {});
    MatrixXd expect = MatrixXd::Zero(3, 3);
    expect.diagonal() << 3, 2, 1;
    CHECK((ts.q_block - expect).norm() < 1e-14);
  }
  SUBCASE("random reconstruction") {
    for (int n : {2, 3, 5}) {
      for (int i = 0; i < 50; ++i) {
        const MatrixXd s = random_spd(n, rng);
        const VectorXd d = random_matrix(n, 1, rng).col(0).cwiseAbs().array() + 0.1;
        const auto ts = build_transform(s, d, 5, 7, {2, 6});
        CHECK(rel_frob(ts.q_block.transpose() * d.asDiagonal() * ts.q_block, s) < 1e-10);
      }
    }
  }
  SUBCASE("input checks") {
    const MatrixXd s = MatrixXd::Identity(2, 2);
    CHECK_THROWS_AS(build_transform(s, VectorXd::Ones(2), 3, 5, {1}), ShapeError);
    CHECK_THROWS_AS(build_transform(s, VectorXd::Ones(2), 3, 5, {1, 1}), ShapeError);
    CHECK(build_transform(s, VectorXd::Ones(2), 3, 5, {4, 1}).tau_idx == std::vector<int>{1, 4});
    CHECK_THROWS_AS(build_transform(s, VectorXd::Ones(2), 3, 5, {1, 5}), ShapeError);
    CHECK_THROWS(build_transform(s, -VectorXd::Ones(2), 3, 5, {1, 4}));
    MatrixXd near = MatrixXd::Identity(2, 2);
    near(1, 1) = 1e-14;
    CHECK_THROWS_AS(build_transform(near, VectorXd::Ones(2), 3, 5, {1, 4}), NumericError);
  }
}

TEST_CASE("matvar: transform application") {
  Rng rng(26);
  const MatrixXd s = random_spd(2, rng);
  VectorXd d(2);
  d << 2.0, 0.5;
  const MatrixXd y = random_matrix(2, 6, rng);
  CHECK(apply_transform(y, build_transform(s, d, 6, 6, {})) == y);
  {
    TransformSet id{MatrixXd::Identity(2, 2), 5, 6, {3}};
    CHECK(apply_transform(y, id) == y);
  }
  // Materialised block-diagonal operator acting on Vec(Y).
  const auto ts = build_transform(s, d, 5, 6, {3});
  MatrixXd big = MatrixXd::Identity(12, 12);
  big.block(6, 6, 2, 2) = ts.applied_block();
  const VectorXd ref = big * vec(y);
  CHECK((vec(apply_transform(y, ts)) - ref).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(apply_transform(random_matrix(2, 5, rng), ts), ShapeError);
}

TEST_CASE("matvar: whitened boundary columns have covariance sigma") {
  Rng rng(27);
  const MatrixXd s = random_spd(2, rng);
  VectorXd d(2);
  d << 3.0, 0.7;
  const int T = 40000;
  std::vector<int> tau(T);
  for (int t = 0; t < T; ++t) tau[t] = t;
  const auto ts = build_transform(s, d, 0, T, tau);
  MatrixXd y(2, T);
  for (int t = 0; t < T; ++t) y.col(t) << std::sqrt(d(0)) * std_normal(rng), std::sqrt(d(1)) * std_normal(rng);
  const MatrixXd z = apply_transform(y, ts);
  const MatrixXd cov = z * z.transpose() / T;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(std::abs(cov(i, j) - s(i, j)) < 4 * std::sqrt((s(i, i) * s(j, j) + s(i, j) * s(i, j)) / T));
}

TEST_CASE("matvar: B recovery") {
  Rng rng(28);
  SUBCASE("identity blocks divide by T") {
    const TransformSet ts{MatrixXd::Identity(2, 2), 7, 10, {2, 5, 9}};
    const MatrixXd bt = random_matrix(3, 2, rng);
    CHECK((recover_B(bt, ts) - bt / 10.0).norm() < 1e-14);
  }
  SUBCASE("empty schedule") {
    const auto ts = build_transform(random_spd(2, rng), VectorXd::Ones(2), 8, 8, {});
    const MatrixXd bt = random_matrix(3, 2, rng);
    CHECK((recover_B(bt, ts) - bt / 8.0).norm() < 1e-14);
  }
  SUBCASE("round trip") {
    for (int i = 0; i < 200; ++i) {
      const int n = 2 + i % 3;
      const auto ts = build_transform(random_spd(n, rng), VectorXd::Ones(n) * 2.0, 10, 12, {4, 11});
      const MatrixXd b = random_matrix(1 + n, n, rng);
      CHECK((recover_B(forward_B(b, ts), ts) - b).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
  SUBCASE("singular aggregate block") {
    TransformSet ts;
    ts.q_block = -MatrixXd::Identity(2, 2);
    ts.tilde_t = 1;
    ts.total_t = 2;
    ts.tau_idx = {1};
    try {
      recover_B(MatrixXd::Ones(3, 2), ts);
      FAIL("expected a singular-block error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("condition number") != std::string::npos);
    }
  }
}
