#include <doctest.h>

#include "helpers.hpp"

using namespace covsel;
using testing_support::gaussian;

TEST_SUITE("gradblock") {

TEST_CASE("gradients orthogonal to the coordinates are untouched") {
  RowMatrix z = RowMatrix::Zero(6, 2);
  z(0, 0) = 1;
  z(1, 1) = 1;
  RowMatrix g = RowMatrix::Zero(6, 3);
  g.bottomRows(4) = gaussian(4, 3, 1);
  const RowMatrix out = residualize(g, z, 1e-3);
  CHECK((out - g).norm() <= 1e-10);
}

TEST_CASE("gradients in the column space vanish as the ridge shrinks") {
  const RowMatrix z = gaussian(200, 5, 2);
  const RowMatrix g = z * gaussian(5, 7, 3);
  const RowMatrix out = residualize(g, z, 1e-8);
  CHECK(out.norm() <= 1e-4 * g.norm());
}

TEST_CASE("refitting the residual finds almost nothing") {
  const RowMatrix z = gaussian(300, 6, 4);
  const RowMatrix g = z * gaussian(6, 9, 5) + gaussian(300, 9, 6);
  const double rho_g = 1e-3;
  const RowMatrix perp = residualize(g, z, rho_g);
  const SymMatrix gram = z.transpose() * z;
  const Matrix before = ridge_solve(gram, Matrix(z.transpose() * g), rho_g);
  const Matrix after = ridge_solve(gram, Matrix(z.transpose() * perp), rho_g);
  // Z'perp = rho (Z'Z + rho I)^{-1} Z'g, so the refit shrinks by at least rho / lambda_min.
  const double lmin = Eigen::SelfAdjointEigenSolver<SymMatrix>(gram).eigenvalues().minCoeff();
  CHECK(after.norm() <= (rho_g / (lmin + rho_g)) * before.norm() * (1.0 + 1e-9));
  CHECK(after.norm() <= 1e-4 * before.norm());
  CHECK(perp.norm() <= g.norm() + 1e-8);
}

TEST_CASE("inverse-norm weights") {
  CHECK(inverse_norm_weight(3.0, 2.0, 1e-3, 0.0) == 1.0);
  CHECK(inverse_norm_weight(2.0, 2.0, 1e-3, 1.7) == doctest::Approx(1.0));
  CHECK(inverse_norm_weight(1e-9, 2.0, 1e-3, 1.0) == doctest::Approx(1e3));
  CHECK(inverse_norm_weight(0.0, 2.0, 1e-2, 2.0) == doctest::Approx(1e4));
}

TEST_CASE("conditioning whitens and trace-matches") {
  const RowMatrix g = gaussian(500, 12, 7);
  const auto b = condition_gradients(g, 3.0, 1e-3, 1.0);
  CHECK(b.g_tilde.rows() == 500);
  CHECK(mean_squared_row_norm(b.g_tilde) == doctest::Approx(3.0).epsilon(1e-10));
  // Whitened block: covariance proportional to the identity on kept dims.
  const auto keep = b.g_tilde.cols();
  RowMatrix centered = b.g_tilde.rowwise() - b.g_tilde.colwise().mean();
  const SymMatrix cov = centered.transpose() * centered / 500.0;
  const SymMatrix scaled = cov / (b.whiten_scale * b.whiten_scale);
  CHECK((scaled - SymMatrix::Identity(keep, keep)).norm() <= 1e-8);
}

TEST_CASE("rank-deficient gradients drop null directions") {
  const RowMatrix g = gaussian(300, 3, 8) * gaussian(3, 10, 9);
  const auto b = condition_gradients(g, 1.0, 1e-3, 1.0);
  CHECK(b.dropped_dims >= 7);
  CHECK(b.g_tilde.cols() == 10 - b.dropped_dims);
}

TEST_CASE("all-zero gradients are rejected") {
  CHECK_THROWS_AS(condition_gradients(RowMatrix::Zero(10, 4), 1.0, 1e-3, 1.0), InputError);
}

TEST_CASE("stacking") {
  DesignMatrix v;
  v.rows = gaussian(40, 4, 10);
  v.sae_cols = 4;
  const auto block = condition_gradients(gaussian(40, 6, 11), mean_squared_row_norm(v.rows), 1e-3, 0.0);
  const auto same = stack_design(v, &block, 0.0);
  CHECK(same.rows == v.rows);
  CHECK(stack_design(v, nullptr, 0.0).rows == v.rows);
  CHECK_THROWS_AS(stack_design(v, nullptr, 1.0), ConfigError);

  const auto phi = stack_design(v, &block, 1.0);
  CHECK(phi.sae_cols == 4);
  CHECK(phi.grad_cols == block.g_tilde.cols());
  CHECK((phi.rows.rightCols(phi.grad_cols) - block.g_tilde).norm() < 1e-12);
  // alpha = 0, omega = 1: the two blocks carry the same total mass.
  const double sae = phi.rows.leftCols(4).squaredNorm();
  const double grad = phi.rows.rightCols(phi.grad_cols).squaredNorm();
  CHECK(std::abs(sae - grad) <= 1e-8 * sae);
}

TEST_CASE("conditioning is deterministic") {
  const RowMatrix g = gaussian(200, 8, 12);
  const auto a = condition_gradients(g, 2.0, 1e-3, 1.0);
  const auto b = condition_gradients(g, 2.0, 1e-3, 1.0);
  CHECK(a.g_tilde == b.g_tilde);
  CHECK(a.q_tilde == b.q_tilde);
}

TEST_CASE("random projection") {
  const RowMatrix raw = gaussian(30, 20, 13);
  const std::vector<std::size_t> blocks = {12, 8};
  const RowMatrix a = jl_project(raw, blocks, 5, 16);
  CHECK(a.rows() == 30);
  CHECK(a.cols() == 32);
  CHECK(a == jl_project(raw, blocks, 5, 16));
  CHECK(a != jl_project(raw, blocks, 6, 16));
  const std::vector<std::size_t> bad = {12, 7};
  CHECK_THROWS_AS(jl_project(raw, bad, 5, 16), InputError);
  // Norms are preserved in expectation.
  const RowMatrix big = gaussian(200, 400, 14);
  const std::vector<std::size_t> one = {400};
  const RowMatrix p = jl_project(big, one, 1, 256);
  CHECK(p.squaredNorm() / big.squaredNorm() == doctest::Approx(1.0).epsilon(0.05));
}

}
