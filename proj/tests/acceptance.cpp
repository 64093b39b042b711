// Acceptance runner: one PASS/FAIL line per criterion.
//   acceptance                 run all criteria
//   acceptance --criterion N   run criterion N only

#include <CLI11.hpp>
#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <limits>
#include <thread>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace covsel;
using testing_support::gaussian;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome weights_vs_oracle() {
  const int g = 8;
  std::vector<int> s(g + 1);
  std::iota(s.begin(), s.end(), 0);
  const auto w = compute_weights(s, g);
  double worst = 0.0;
  for (int k = 0; k <= g; ++k) {
    const auto d = static_cast<double>(oracle::difficulty(k, g).value());
    const auto r = static_cast<double>(oracle::trainability(k, g).value());
    worst = std::max({worst, std::abs(w.d[k] - d), std::abs(w.r[k] - r)});
  }
  return {worst <= 1e-10, "max abs error " + fmt(worst) + " (tol 1e-10)"};
}

Outcome whitened_identity() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pool = testing_support::random_pool(400, 12, 8, 100 + seed);
    const auto coords = stabilize(pool);
    const auto w = compute_weights(pool.success_counts, pool.rollouts);
    const auto m = build_metric_from_weights(coords.z_bar, w.d_tilde, w.d_tilde, 0.1, 0.5, 2.0);
    worst = std::max(worst, (m.m_raw - SymMatrix::Identity(12, 12)).norm());
  }
  return {worst <= 1e-8, "max ||M - I||_F " + fmt(worst) + " (tol 1e-8)"};
}

std::vector<InstancePool> small_pools() {
  std::vector<InstancePool> pools;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SynthSpec spec;
    spec.n = 500;
    spec.f = 16;
    spec.n_hard_clusters = 2;
    spec.seed = 300 + seed;
    pools.push_back(generate(spec));
  }
  return pools;
}

Outcome rayleigh_lemma() {
  double worst = 0.0;
  for (const auto& pool : small_pools()) {
    const auto st = build_metric_stage(pool, PipelineConfig{}, WeightVariant::full, false);
    // Every eigenpair, not only the leading one.
    for (Eigen::Index k = 0; k < st.metric.dim(); ++k) {
      const auto rep = rayleigh_residual(st.metric, st.metric.eig.vectors.col(k),
                                         st.metric.eig.values(k));
      worst = std::max(worst, rep.residual);
    }
  }
  return {worst <= 1e-6, "max relative residual " + fmt(worst) + " over 50 pools (tol 1e-6)"};
}

Outcome norm_identity() {
  double worst = 0.0;
  for (const auto& pool : small_pools()) {
    const auto st = build_metric_stage(pool, PipelineConfig{});
    const auto& m = st.metric;
    const Vector lam = m.trace_scale * m.reg_spectrum;
    const RowMatrix proj = st.coords.z_bar * m.eig.vectors;
    for (Eigen::Index i = 0; i < st.sae.n(); ++i) {
      const double lhs = st.sae.rows.row(i).squaredNorm();
      const double rhs =
          st.weights.r_tilde[static_cast<std::size_t>(i)] *
          (proj.row(i).array().square() * lam.transpose().array()).sum();
      if (rhs > 0) worst = std::max(worst, std::abs(lhs - rhs) / rhs);
    }
  }
  return {worst <= 1e-8, "max relative error " + fmt(worst) + " (tol 1e-8)"};
}

Outcome greedy_bound() {
  CounterRng rng(5);
  int violations = 0;
  double min_ratio = std::numeric_limits<double>::infinity();
  for (int t = 0; t < 200; ++t) {
    const auto n = static_cast<Eigen::Index>(5 + rng.below(10));   // 5..14
    const auto p = static_cast<Eigen::Index>(2 + rng.below(6));    // 2..7
    const std::size_t k = 1 + rng.below(4);                         // 1..4
    const double lambda = 0.2 + 2.0 * rng.uniform();
    const auto design = testing_support::design_of(gaussian(n, p, 7000 + t));
    const double base = p * std::log(lambda);
    const double g = greedy_exact(design, k, lambda).objective - base;
    const double opt = exhaustive_opt(design, k, lambda).objective - base;
    const double ratio = g / opt;
    min_ratio = std::min(min_ratio, ratio);
    if (g < (1.0 - std::exp(-1.0)) * opt - 1e-12) ++violations;
  }
  return {violations == 0, std::to_string(violations) + " violations in 200, min greedy/opt " +
                               fmt(min_ratio) + " (bound 0.632)"};
}

Outcome screened_fidelity() {
  double worst = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthSpec spec;
    spec.n = 5000;
    spec.f = 64;
    spec.seed = 600 + seed;
    const auto pool = generate(spec);
    const auto st = build_metric_stage(pool, PipelineConfig{});
    const double exact = greedy_exact(st.sae, 1000, 1.0).objective;
    const double screened = greedy_screened(st.sae, 1000, 1.0, 256, 64).objective;
    worst = std::min(worst, screened / exact);
  }
  return {worst >= 0.999, "min screened/exact " + fmt(worst) + " over 10 seeds (tol 0.999)"};
}

Outcome sherman_morrison() {
  SynthSpec spec;
  spec.n = 5000;
  spec.f = 64;
  spec.grad_dim = 64;
  spec.grad_shared_rank = 8;
  spec.seed = 700;
  const auto pool = generate(spec);
  PipelineConfig cfg;
  MetricStage st = build_metric_stage(pool, cfg);
  const DesignMatrix design = build_design(pool, cfg, st, nullptr);
  // Greedy order from the production path, replayed with rank-one updates only.
  const auto sel = greedy_exact(design, 2000, cfg.lambda);
  LogDetState state(design.rows, cfg.lambda);
  double worst_mid = 0.0;
  for (std::size_t j = 0; j < sel.indices.size(); ++j) {
    state.add(sel.indices[j]);
    if ((j + 1) % 500 == 0 && j + 1 < sel.indices.size()) {
      worst_mid = std::max(worst_mid, state.inverse_residual());
    }
  }
  const double final_res = state.inverse_residual();
  return {final_res <= 1e-6 && worst_mid <= 1e-6,
          "||A^-1 A - I||_F = " + fmt(final_res) + " after 2000 updates, p = " +
              std::to_string(design.dim()) + " (tol 1e-6)"};
}

Outcome submodularity() {
  CounterRng rng(8);
  int violations = 0;
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto n = static_cast<Eigen::Index>(6 + rng.below(25));
    const auto p = static_cast<Eigen::Index>(2 + rng.below(8));
    const double lambda = 0.1 + 2.0 * rng.uniform();
    const RowMatrix phi = gaussian(n, p, 9000 + t) * (0.2 + 2.0 * rng.uniform());
    auto perm = rng.permutation(static_cast<std::size_t>(n));
    const std::size_t i = perm.back();
    const std::size_t t_size = rng.below(static_cast<std::uint64_t>(n));  // 0..n-1
    const std::size_t s_size = rng.below(t_size + 1);
    LogDetState s_state(phi, lambda), t_state(phi, lambda);
    for (std::size_t j = 0; j < t_size; ++j) {
      if (j < s_size) s_state.add(perm[j]);
      t_state.add(perm[j]);
    }
    const double ds = s_state.gain(i), dt = t_state.gain(i);
    worst = std::max(worst, dt - ds);
    if (ds < dt - 1e-9) ++violations;
  }
  return {violations == 0, std::to_string(violations) +
                               " violations in 1000 triples, max D(T)-D(S) " + fmt(worst)};
}

Outcome shuffle_falsification_check() {
  int passed = 0;
  double min_ratio = 1e300, max_overlap = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SynthSpec spec;
    spec.n = 4000;
    spec.f = 64;
    spec.n_hard_clusters = 4;
    spec.seed = seed;
    const auto pool = generate(spec);
    const auto r = shuffle_falsification(pool, PipelineConfig{}, std::uint64_t{77 + seed});
    const double ratio = r.top_eig_true / r.top_eig_shuffled;
    min_ratio = std::min(min_ratio, ratio);
    max_overlap = std::max(max_overlap, r.subspace_overlap);
    if (ratio >= 2.0 && r.subspace_overlap <= 0.3) ++passed;
  }
  return {passed >= 18, std::to_string(passed) + "/20 seeds pass (need 18), min ratio " +
                            fmt(min_ratio) + ", max overlap " + fmt(max_overlap)};
}

Outcome surface_null() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto pool = testing_support::random_pool(5000, 8, 8, 1100 + seed);
    pool.surface_features = gaussian(5000, 6, 1200 + seed);
    auto perm = CounterRng(1300 + seed).permutation(5000);
    perm.resize(1000);
    worst = std::max(worst, surface_regression(perm, pool).r2);
  }
  return {worst < 0.02, "max R^2 " + fmt(worst) + " over 20 seeds (tol < 0.02)"};
}

Outcome baseline_dominance() {
  int violations = 0;
  double min_margin = 1e300;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthSpec spec;
    spec.n = 400;
    spec.f = 16;
    spec.grad_dim = 12;
    spec.grad_shared_rank = 3;
    spec.seed = 1400 + seed;
    const auto pool = generate(spec);
    PipelineConfig cfg;
    cfg.seed = seed;
    MetricStage st = build_metric_stage(pool, cfg);
    const DesignMatrix design = build_design(pool, cfg, st, nullptr);
    const std::size_t k = cfg.resolve_budget(pool.size());
    const double irds = score_subset(design, greedy_exact(design, k, cfg.lambda).indices, cfg.lambda);
    const BaselineInputs in{st.weights, design, st.metric, st.coords, cfg.lambda};
    for (auto name : kAllBaselines) {
      BaselineSpec spec_b;
      spec_b.name = name;
      spec_b.seed = seed;
      const auto r = run_baseline(spec_b, in, k);
      const double b = score_subset(design, r.indices, cfg.lambda);
      min_margin = std::min(min_margin, irds - b);
      if (irds < b) ++violations;
    }
  }
  return {violations == 0, std::to_string(violations) + " violations over 20 pools x 8 baselines, "
                               "min margin " + fmt(min_margin)};
}

Outcome ablation_contrast() {
  int passed = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SynthSpec spec;
    spec.n = 4000;
    spec.f = 64;
    spec.n_hard_clusters = 4;
    spec.seed = seed;
    const auto t = generate_with_truth(spec);
    PipelineConfig cfg;
    cfg.omega = 0.0;
    PipelineOptions opts;
    opts.run_audit = false;
    const auto full = run_pipeline(t.pool, cfg, opts);
    opts.variant = WeightVariant::d_only;
    const auto donly = run_pipeline(t.pool, cfg, opts);
    auto all_fail = [&](const SelectionResult& r) {
      double c = 0;
      for (auto i : r.indices) c += t.pool.success_counts[i] == 0;
      return c / static_cast<double>(r.indices.size());
    };
    const auto perm = detail::random_subset(spec.n, full.selection.size(), 5 + seed);
    const double hard_full =
        cluster_mass_share(full.selection.indices, t.pool.cluster_mass, t.hard_clusters);
    const double hard_random = cluster_mass_share(perm, t.pool.cluster_mass, t.hard_clusters);
    if (all_fail(donly.selection) >= 2.0 * all_fail(full.selection) && hard_full > hard_random) {
      ++passed;
    }
  }
  return {passed >= 18, std::to_string(passed) + "/20 seeds pass (need 18)"};
}

RowMatrix brute_topk(const RowMatrix& x, long k) {
  std::vector<std::pair<double, Eigen::Index>> all;
  for (Eigen::Index f = 0; f < x.size(); ++f) {
    if (x.data()[f] > 0) all.emplace_back(-x.data()[f], f);
  }
  std::sort(all.begin(), all.end());
  RowMatrix out = RowMatrix::Zero(x.rows(), x.cols());
  const auto keep = std::min<std::size_t>(all.size(), static_cast<std::size_t>(k * x.rows()));
  for (std::size_t j = 0; j < keep; ++j) out.data()[all[j].second] = -all[j].first;
  return out;
}

Outcome batch_topk() {
  CounterRng rng(13);
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const auto b = static_cast<Eigen::Index>(1 + rng.below(6));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(12));
    const long k = 1 + static_cast<long>(rng.below(static_cast<std::uint64_t>(d)));
    const bool ties = t % 3 == 0;
    RowMatrix x(b, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double u = rng.uniform();
      const double v = ties ? std::floor(4.0 * rng.uniform()) : rng.uniform();
      x.data()[i] = u < 0.3 ? 0.0 : v;
    }
    if (batch_topk_mask(x, k) != brute_topk(x, k)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 1000 batches"};
}

Outcome nesting_determinism() {
  int failures = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthSpec spec;
    spec.n = 600;
    spec.f = 16;
    spec.grad_dim = 10;
    spec.grad_shared_rank = 2;
    spec.seed = 2100 + seed;
    const auto pool = generate(spec);
    PipelineConfig cfg;
    cfg.queue_q = 100000;
    std::vector<SelectionResult> runs;
    for (double b : {0.1, 0.2, 0.3}) {
      cfg.budget_frac = b;
      runs.push_back(run_pipeline(pool, cfg, {WeightVariant::full, false}).selection);
    }
    for (std::size_t a = 0; a + 1 < runs.size(); ++a) {
      const auto& small = runs[a].indices;
      const auto& big = runs[a + 1].indices;
      if (!std::equal(small.begin(), small.end(), big.begin())) ++failures;
    }
    // Screened path at the default queue, rerun from a fresh pool.
    PipelineConfig scfg;
    scfg.queue_q = 64;
    scfg.refresh_r = 16;
    const auto a = run_pipeline(pool, scfg);
    const auto b = run_pipeline(generate(spec), scfg);
    if (!(a.selection == b.selection) || a.design.rows != b.design.rows ||
        to_json(a.audit).dump() != to_json(b.audit).dump()) {
      ++failures;
    }
  }
  return {failures == 0, std::to_string(failures) + " failures over 20 seeds"};
}

Outcome wall_clock() {
  using clk = std::chrono::steady_clock;
  SynthSpec spec;
  spec.n = 40309;
  spec.f = 256;
  spec.grad_dim = 2048;
  spec.grad_shared_rank = 32;
  spec.seed = 2200;
  const auto t0 = clk::now();
  const auto pool = generate(spec);
  const auto t1 = clk::now();
  PipelineConfig cfg;
  cfg.budget_k = 8062;
  cfg.queue_q = 1024;
  cfg.refresh_r = 256;
  const auto out = run_pipeline(pool, cfg);
  const auto t2 = clk::now();
  const double gen = std::chrono::duration<double>(t1 - t0).count();
  const double pipe = std::chrono::duration<double>(t2 - t1).count();
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  const double rss_gb = static_cast<double>(ru.ru_maxrss) / (1024.0 * 1024.0);
  const bool ok = out.selection.size() == 8062 && gen + pipe < 600.0;
  std::ostringstream os;
  os << "pipeline " << fmt(pipe) << " s + generation " << fmt(gen) << " s (limit 600 s), "
     << "peak RSS " << fmt(rss_gb) << " GB, "
     << std::thread::hardware_concurrency() << " hardware threads";
  return {ok, os.str()};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-15)")->check(CLI::Range(1, 15));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all = {
      {1, "weight formulas vs exact oracle", weights_vs_oracle},
      {2, "equal weights whiten to identity", whitened_identity},
      {3, "generalized Rayleigh eigenpairs", rayleigh_lemma},
      {4, "design-vector norm identity", norm_identity},
      {5, "greedy (1-1/e) bound", greedy_bound},
      {6, "screened vs exact greedy", screened_fidelity},
      {7, "rank-one inverse fidelity", sherman_morrison},
      {8, "diminishing returns", submodularity},
      {9, "label-shuffle falsification", shuffle_falsification_check},
      {10, "surface-regression null", surface_null},
      {11, "log-det dominance over baselines", baseline_dominance},
      {12, "ablation allocation contrast", ablation_contrast},
      {13, "BatchTopK vs brute force", batch_topk},
      {14, "greedy nesting and determinism", nesting_determinism},
      {15, "end-to-end wall clock", wall_clock},
  };

  bool all_pass = true;
  for (const auto& c : all) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s  c%02d  %-34s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
