#include <doctest.h>

#include "helpers.hpp"

using namespace covsel;

TEST_SUITE("synth") {

TEST_CASE("binomial inverse CDF") {
  CHECK(binomial_inverse_cdf(0.0, 8, 0.5) == 0);
  CHECK(binomial_inverse_cdf(0.999999999, 8, 0.5) == 8);
  CounterRng rng(1);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) sum += binomial_inverse_cdf(rng.uniform(), 8, 0.3);
  CHECK(sum / 20000 == doctest::Approx(2.4).epsilon(0.02));
}

TEST_CASE("generation is deterministic") {
  SynthSpec spec;
  spec.n = 500;
  spec.f = 16;
  spec.grad_dim = 12;
  spec.grad_shared_rank = 3;
  spec.seed = 7;
  const auto a = generate(spec);
  const auto b = generate(spec);
  CHECK(a.cluster_mass == b.cluster_mass);
  CHECK(a.success_counts == b.success_counts);
  CHECK(*a.gradients == *b.gradients);
  CHECK(*a.surface_features == *b.surface_features);
  spec.seed = 8;
  CHECK(generate(spec).success_counts != a.success_counts);
  CHECK_NOTHROW(validate_pool(a));
}

TEST_CASE("planted structure") {
  SynthSpec spec;
  spec.n = 4000;
  spec.f = 32;
  spec.seed = 3;
  const auto t = generate_with_truth(spec);
  CHECK(t.hard_clusters.size() == 4);
  double hard_hard = 0, n_hard_hard = 0, easy = 0, n_easy = 0;
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto s = t.pool.success_counts[i];
    if (t.hard[i] && !t.mid_regime[i]) {
      hard_hard += s;
      ++n_hard_hard;
    } else if (!t.hard[i]) {
      easy += s;
      ++n_easy;
    }
  }
  CHECK(hard_hard / n_hard_hard < 1.0);
  CHECK(easy / n_easy > 5.0);
}

TEST_CASE("hard prototypes are drawn at the requested relative frequency") {
  SynthSpec spec;
  spec.n = 40000;
  spec.f = 20;
  spec.n_hard_clusters = 5;
  spec.hard_frequency = 0.25;
  spec.surface = false;
  const auto t = generate_with_truth(spec);
  double hard = 0;
  for (std::size_t i = 0; i < spec.n; ++i) hard += t.hard[i];
  // 5 * 0.25 / (5 * 0.25 + 15)
  const double expected = 1.25 / 16.25;
  const double sd = std::sqrt(expected * (1 - expected) / 40000.0);
  CHECK(std::abs(hard / 40000.0 - expected) < 5 * sd);
}

TEST_CASE("per-cluster easy rates stay inside the spread") {
  SynthSpec spec;
  spec.n = 20000;
  spec.f = 4;
  spec.n_hard_clusters = 0;
  spec.easy_success_rate = 0.6;
  spec.easy_spread = 0.3;
  spec.surface = false;
  const auto t = generate_with_truth(spec);
  std::vector<double> sum(4, 0.0), cnt(4, 0.0);
  for (std::size_t i = 0; i < spec.n; ++i) {
    sum[static_cast<std::size_t>(t.dominant[i])] += t.pool.success_counts[i];
    cnt[static_cast<std::size_t>(t.dominant[i])] += 1;
  }
  double lo = 1, hi = 0;
  for (int c = 0; c < 4; ++c) {
    const double rate = sum[c] / (8.0 * cnt[c]);
    lo = std::min(lo, rate);
    hi = std::max(hi, rate);
    CHECK(rate > 0.3 - 0.03);
    CHECK(rate < 0.9 + 0.03);
  }
  CHECK(hi - lo > 0.05);
  spec.easy_spread = 0.5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("rank-zero gradients are pure noise") {
  SynthSpec spec;
  spec.n = 300;
  spec.f = 8;
  spec.grad_dim = 5;
  spec.grad_shared_rank = 0;
  spec.noise_scale = 0.0;
  const auto pool = generate(spec);
  CHECK(pool.gradients->isZero());
}

TEST_CASE("invalid specs") {
  SynthSpec spec;
  spec.hard_success_rate = 0.0;
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec = SynthSpec{};
  spec.n_hard_clusters = 100;
  CHECK_THROWS_AS(generate(spec), ConfigError);
  spec = SynthSpec{};
  CHECK_THROWS_AS(set_synth_value(spec, "bogus", "1"), ConfigError);
}

TEST_CASE("SAE-only pipeline on a pool without gradients") {
  SynthSpec spec;
  spec.n = 300;
  spec.f = 12;
  const auto pool = generate(spec);
  PipelineConfig cfg;
  cfg.omega = 0.0;
  const auto out = run_pipeline(pool, cfg);
  CHECK(out.design.dim() == 12);
  CHECK(out.selection.indices.size() == 60);
  cfg.omega = 1.0;
  CHECK_THROWS_AS(run_pipeline(pool, cfg), ConfigError);
}

TEST_CASE("budgets nest and a full budget scores the whole pool") {
  SynthSpec spec;
  spec.n = 200;
  spec.f = 10;
  spec.seed = 2;
  const auto pool = generate(spec);
  PipelineConfig cfg;
  cfg.omega = 0.0;
  cfg.budget_frac = 0.1;
  const auto a = run_pipeline(pool, cfg);
  cfg.budget_frac = 0.2;
  const auto b = run_pipeline(pool, cfg);
  REQUIRE(a.selection.mode == SelectionMode::exact_greedy);
  CHECK(std::equal(a.selection.indices.begin(), a.selection.indices.end(), b.selection.indices.begin()));
  cfg.budget_frac = 1.0;
  const auto c = run_pipeline(pool, cfg);
  std::vector<std::size_t> all(200);
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(c.selection.objective == doctest::Approx(score_subset(c.design, all, 1.0)).epsilon(1e-10));
}

TEST_CASE("pipeline with a gradient block") {
  SynthSpec spec;
  spec.n = 600;
  spec.f = 16;
  spec.grad_dim = 24;
  spec.grad_shared_rank = 4;
  const auto pool = generate(spec);
  PipelineConfig cfg;
  cfg.queue_q = 64;
  cfg.refresh_r = 16;
  const auto out = run_pipeline(pool, cfg);
  CHECK(out.design.sae_cols == 16);
  CHECK(out.design.grad_cols > 0);
  CHECK(out.selection.mode == SelectionMode::screened_greedy);
  REQUIRE(out.gradient_block.has_value());
  CHECK(out.audit.n_eff_selected >= 1.0);
  CHECK(out.audit.n_eff_selected <= 16.0);
  CHECK(out.audit.surface_r2.has_value());
}

TEST_CASE("IRDS favours planted hard clusters") {
  SynthSpec spec;
  spec.n = 3000;
  spec.f = 32;
  spec.seed = 5;
  const auto t = generate_with_truth(spec);
  PipelineConfig cfg;
  cfg.omega = 0.0;
  const auto out = run_pipeline(t.pool, cfg);
  std::vector<std::size_t> all(spec.n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(cluster_mass_share(out.selection.indices, t.pool.cluster_mass, t.hard_clusters) >
        cluster_mass_share(all, t.pool.cluster_mass, t.hard_clusters));
}

TEST_CASE("sweep rows") {
  SynthSpec spec;
  spec.n = 300;
  spec.f = 12;
  const auto pool = generate(spec);
  PipelineConfig cfg;
  cfg.omega = 0.0;
  const std::vector<double> budgets = {0.1, 0.2};
  const std::vector<BaselineName> methods = {BaselineName::random, BaselineName::top_d};
  const auto rows = sweep(pool, cfg, budgets, methods);
  CHECK(rows.size() == 6);
  CHECK(rows[0].method == "irds");
  CHECK(rows[0].k == 30);
  CHECK(rows[3].k == 60);
  CHECK(rows[3].objective > rows[0].objective);
  CHECK(rows[0].objective >= rows[1].objective);
}

}
