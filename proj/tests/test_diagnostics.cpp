#include <doctest.h>

#include <fstream>

#include "helpers.hpp"

using namespace covsel;

TEST_SUITE("diagnostics") {

TEST_CASE("subspace overlap") {
  const Matrix u = sym_eig(testing_support::random_spd(8, 1)).vectors;
  CHECK(subspace_overlap(u, u, 3) == doctest::Approx(1.0));
  Matrix v = Matrix::Identity(8, 8);
  Matrix w = Matrix::Zero(8, 8);
  w.col(0) = Vector::Unit(8, 5);
  CHECK(subspace_overlap(v, w, 1) == doctest::Approx(0.0));
}

TEST_CASE("constant success counts make the shuffle a no-op") {
  auto pool = testing_support::random_pool(200, 6, 8, 2);
  std::fill(pool.success_counts.begin(), pool.success_counts.end(), 3);
  PipelineConfig cfg;
  cfg.subspace_k = 3;
  const auto r = shuffle_falsification(pool, cfg, std::uint64_t{5});
  CHECK(r.top_eig_true == doctest::Approx(r.top_eig_shuffled));
  CHECK(r.subspace_overlap == doctest::Approx(1.0));
}

TEST_CASE("identity permutation reproduces the true metric") {
  const auto pool = testing_support::random_pool(200, 6, 8, 3);
  std::vector<std::size_t> id(200);
  std::iota(id.begin(), id.end(), std::size_t{0});
  PipelineConfig cfg;
  cfg.subspace_k = 4;
  const auto r = shuffle_falsification(pool, cfg, id);
  CHECK(r.top_eig_true == r.top_eig_shuffled);
  CHECK(r.subspace_overlap == doctest::Approx(1.0));
  std::vector<std::size_t> bad(200, 0);
  CHECK_THROWS_AS(shuffle_falsification(pool, cfg, bad), InputError);
}

TEST_CASE("planted difficulty collapses under shuffling") {
  SynthSpec spec;
  spec.n = 2000;
  spec.f = 32;
  spec.seed = 4;
  const auto pool = generate(spec);
  const auto r = shuffle_falsification(pool, PipelineConfig{}, std::uint64_t{9});
  CHECK(r.top_eig_true > r.top_eig_shuffled);
  CHECK(r.subspace_overlap < 0.3);
}

TEST_CASE("surface regression under the null") {
  auto pool = testing_support::random_pool(5000, 4, 8, 5);
  pool.surface_features = testing_support::gaussian(5000, 6, 6);
  const auto sel = detail::random_subset(5000, 1000, 7);
  const auto r = surface_regression(sel, pool);
  CHECK(r.r2 < 0.02);
  CHECK(r.rho.size() == 6);
  CHECK(r.dropped.empty());
}

TEST_CASE("selection driven by one feature is explained by it") {
  auto pool = testing_support::random_pool(2000, 4, 8, 8);
  pool.surface_features = testing_support::gaussian(2000, 6, 9);
  pool.surface_feature_names = {"a", "b", "c", "d", "e", "f"};
  std::vector<double> col0(2000);
  for (Eigen::Index i = 0; i < 2000; ++i) col0[static_cast<std::size_t>(i)] = (*pool.surface_features)(i, 0);
  const auto sel = detail::top_k_by(col0, 1000);
  const auto r = surface_regression(sel, pool);
  CHECK(r.r2 > 0.5);
  std::size_t arg = 0;
  for (std::size_t j = 1; j < 6; ++j)
    if (std::abs(r.rho[j].second) > std::abs(r.rho[arg].second)) arg = j;
  CHECK(arg == 0);
  CHECK(r.rho[0].first == "a");
  CHECK(r.delta[0].second > 0);
}

TEST_CASE("constant and duplicate features are dropped") {
  auto pool = testing_support::random_pool(300, 4, 8, 10);
  RowMatrix sf = testing_support::gaussian(300, 4, 11);
  sf.col(1).setConstant(2.0);
  sf.col(3) = (3.0 * sf.col(0)).array() + 1.0;
  pool.surface_features = sf;
  pool.surface_feature_names = {"len", "const", "x", "dup"};
  const auto r = surface_regression(detail::random_subset(300, 50, 1), pool);
  CHECK(r.dropped == std::vector<std::string>{"const", "dup"});
  pool.surface_features.reset();
  CHECK_THROWS_AS(surface_regression(std::vector<std::size_t>{0}, pool), InputError);
}

TEST_CASE("allocation statistics") {
  RowMatrix m = RowMatrix::Zero(4, 4);
  m(0, 0) = m(1, 1) = m(2, 2) = m(3, 3) = 1.0;
  std::vector<std::size_t> all = {0, 1, 2, 3};
  const auto u = allocation_stats(all, m);
  CHECK(u.n_eff == doctest::Approx(4.0));
  CHECK(u.sym_kl == doctest::Approx(0.0));
  const auto one = allocation_stats(std::vector<std::size_t>{2}, m);
  CHECK(one.n_eff == doctest::Approx(1.0));
  CHECK(one.sym_kl > 0);
  CHECK(symmetric_kl(one.q, one.q_bar) == doctest::Approx(symmetric_kl(one.q_bar, one.q)));
  const std::vector<double> q = {0.1, 0.2, 0.3, 0.4};
  const std::vector<double> qp = {0.3, 0.1, 0.4, 0.2};
  CHECK(effective_count(q) == doctest::Approx(effective_count(qp)));
  CHECK_THROWS_AS(allocation_stats(std::vector<std::size_t>{}, m), InputError);
  RowMatrix z = RowMatrix::Zero(3, 2);
  z(2, 0) = 1;
  CHECK_THROWS_AS(allocation_stats(std::vector<std::size_t>{0, 1}, z), InputError);
}

TEST_CASE("difficulty localization") {
  // Rows with s = 0 carry all the mass on one cluster; the rest are flat.
  const std::size_t n = 400;
  RowMatrix m = RowMatrix::Constant(static_cast<Eigen::Index>(n), 6, 0.2);
  std::vector<int> s(n);
  CounterRng rng(12);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = i < 30 ? 0 : 1 + static_cast<int>(rng.below(8));
    if (i < 30) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i % 3)) = 3.0;
    for (Eigen::Index j = 0; j < 6; ++j) m(static_cast<Eigen::Index>(i), j) += 0.01 * rng.uniform();
  }
  const PipelineConfig cfg;
  const auto st = build_metric_stage(m, s, 8, cfg, WeightVariant::full, false);
  const auto r = difficulty_localization(st.metric, st.coords, s, 25);
  CHECK(r.median_success_top_proj == 0.0);
  CHECK(r.median_success_corpus > 0.0);
  const auto all = difficulty_localization(st.metric, st.coords, s, n);
  CHECK(all.median_success_top_proj == all.median_success_corpus);
}

TEST_CASE("report writing") {
  const auto dir = testing_support::scratch_dir("report");
  AuditReport r;
  r.surface_r2 = 0.01;
  r.per_feature_rho = {{"length", 0.1}};
  r.n_eff_selected = 3.0;
  write_report(r, dir / "a.jsonl");
  write_report(r, dir / "a.txt");
  const auto lines = detail::read_lines(dir / "a.jsonl");
  CHECK(lines.size() == 12);
  const auto first = nlohmann::json::parse(lines.front());
  CHECK(first["field"] == "top_eigenvalue_true");
  const auto text = detail::read_lines(dir / "a.txt");
  CHECK(std::find(text.begin(), text.end(), "per_feature_rho.length = 0.10000000000000001") != text.end());
}

}
