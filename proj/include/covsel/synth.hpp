#pragma once

// Seeded synthetic pools with planted hard clusters, the end-to-end pipeline
// and budget sweeps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "covsel/baselines.hpp"
#include "covsel/config.hpp"
#include "covsel/diagnostics.hpp"
#include "covsel/errors.hpp"
#include "covsel/gradblock.hpp"
#include "covsel/pool_io.hpp"
#include "covsel/rng.hpp"
#include "covsel/select.hpp"
#include "covsel/stages.hpp"

namespace covsel {

struct SynthSpec {
  std::size_t n = 2000;
  std::size_t f = 64;
  int g = 8;
  std::size_t n_hard_clusters = 4;
  double hard_success_rate = 0.05;
  double easy_success_rate = 0.7;
  // Share of hard-cluster instances drawn at mid_success_rate instead.
  double mid_fraction = 0.5;
  double mid_success_rate = 0.5;
  std::size_t secondary = 3;       // minor clusters mixed into each row
  double secondary_scale = 0.25;
  double length_sigma = 0.3;       // log-normal row scale
  double mass_scale = 10.0;
  double hard_frequency = 0.4;    // prototype frequency of a hard cluster relative to an easy one
  double easy_spread = 0.0;       // per-cluster easy rates uniform in easy +- spread
  std::size_t grad_dim = 0;
  std::size_t grad_shared_rank = 0;
  double noise_scale = 0.1;
  bool surface = true;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("synth spec: " + m); };
    auto rate = [&](double p, const char* name) {
      if (!(p > 0 && p < 1)) fail(std::string(name) + " must be in (0, 1)");
    };
    if (n < 2) fail("n must be >= 2");
    if (f < 1) fail("f must be >= 1");
    if (g < 1) fail("g must be >= 1");
    if (n_hard_clusters > f) fail("n_hard_clusters must be <= f");
    rate(hard_success_rate, "hard_success_rate");
    rate(easy_success_rate, "easy_success_rate");
    rate(mid_success_rate, "mid_success_rate");
    if (!(mid_fraction >= 0 && mid_fraction <= 1)) fail("mid_fraction must be in [0, 1]");
    if (!(secondary_scale >= 0)) fail("secondary_scale must be >= 0");
    if (!(length_sigma >= 0)) fail("length_sigma must be >= 0");
    if (!(mass_scale > 0)) fail("mass_scale must be > 0");
    if (!(hard_frequency > 0)) fail("hard_frequency must be > 0");
    if (!(easy_spread >= 0) || easy_success_rate - easy_spread <= 0 ||
        easy_success_rate + easy_spread >= 1) {
      fail("easy_success_rate +- easy_spread must stay in (0, 1)");
    }
    if (!(noise_scale >= 0)) fail("noise_scale must be >= 0");
    if (grad_shared_rank > 0 && grad_dim == 0) fail("grad_shared_rank needs grad_dim > 0");
  }
};

inline void set_synth_value(SynthSpec& s, const std::string& key, const std::string& value) {
  auto num = [&] { return detail::parse_double(value, key); };
  auto count = [&] {
    const long long v = detail::parse_int(value, key);
    if (v < 0) throw ConfigError("synth spec: " + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  if (key == "n") s.n = count();
  else if (key == "f") s.f = count();
  else if (key == "g") s.g = static_cast<int>(count());
  else if (key == "n_hard_clusters") s.n_hard_clusters = count();
  else if (key == "hard_success_rate") s.hard_success_rate = num();
  else if (key == "easy_success_rate") s.easy_success_rate = num();
  else if (key == "mid_fraction") s.mid_fraction = num();
  else if (key == "mid_success_rate") s.mid_success_rate = num();
  else if (key == "secondary") s.secondary = count();
  else if (key == "secondary_scale") s.secondary_scale = num();
  else if (key == "length_sigma") s.length_sigma = num();
  else if (key == "mass_scale") s.mass_scale = num();
  else if (key == "hard_frequency") s.hard_frequency = num();
  else if (key == "easy_spread") s.easy_spread = num();
  else if (key == "grad_dim") s.grad_dim = count();
  else if (key == "grad_shared_rank") s.grad_shared_rank = count();
  else if (key == "noise_scale") s.noise_scale = num();
  else if (key == "surface") s.surface = count() != 0;
  else if (key == "seed") s.seed = std::stoull(value);
  else throw ConfigError("synth spec: unknown key '" + key + "'");
}

inline SynthSpec load_synth_spec(const std::filesystem::path& path) {
  SynthSpec s;
  for (const auto& [k, v] : detail::read_key_values(path, '=')) set_synth_value(s, k, v);
  s.validate();
  return s;
}

// The pool plus the planted ground truth.
struct SyntheticPool {
  InstancePool pool;
  std::vector<std::size_t> hard_clusters;  // ascending
  std::vector<int> dominant;               // dominant prototype per row
  std::vector<char> mid_regime;            // row drawn at mid_success_rate
  std::vector<char> hard;                  // row dominated by a hard cluster
};

inline const std::vector<std::string>& synth_surface_names() {
  static const std::vector<std::string> names = {
      "length", "bracket_count", "digit_density", "mc_stem", "notation_density_a",
      "notation_density_b"};
  return names;
}

// Smallest s with P(X <= s) > u for X ~ Binomial(g, p).
inline int binomial_inverse_cdf(double u, int g, double p) {
  double pmf = std::pow(1.0 - p, g);
  double cdf = pmf;
  int s = 0;
  while (u >= cdf && s < g) {
    pmf *= (static_cast<double>(g - s) / static_cast<double>(s + 1)) * (p / (1.0 - p));
    cdf += pmf;
    ++s;
  }
  return s;
}

namespace detail {

template <typename Fn>
void parallel_rows(std::size_t n, Fn&& fn) {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min<std::size_t>(hw, (n + 255) / 256);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

inline SyntheticPool generate_with_truth(const SynthSpec& spec) {
  spec.validate();
  const CounterRng root(spec.seed);
  enum : std::uint64_t { kGlobal = 0, kShared = 1, kRows = 2 };
  const CounterRng rows_root = root.split(kRows);

  SyntheticPool out;
  {
    CounterRng g = root.split(kGlobal);
    const auto perm = g.permutation(spec.f);
    out.hard_clusters.assign(perm.begin(),
                             perm.begin() + static_cast<std::ptrdiff_t>(spec.n_hard_clusters));
    std::sort(out.hard_clusters.begin(), out.hard_clusters.end());
  }
  std::vector<char> is_hard(spec.f, 0);
  for (auto c : out.hard_clusters) is_hard[c] = 1;
  std::vector<double> easy_rate(spec.f, spec.easy_success_rate);
  {
    CounterRng g = root.split(kGlobal).split(1);
    for (std::size_t c = 0; c < spec.f; ++c) {
      easy_rate[c] += spec.easy_spread * (2.0 * g.uniform() - 1.0);
    }
  }
  std::vector<double> prototype_cdf(spec.f);
  {
    double acc = 0.0;
    for (std::size_t c = 0; c < spec.f; ++c) {
      acc += is_hard[c] ? spec.hard_frequency : 1.0;
      prototype_cdf[c] = acc;
    }
    for (auto& v : prototype_cdf) v /= acc;
  }

  const auto n = static_cast<Eigen::Index>(spec.n);
  const auto f = static_cast<Eigen::Index>(spec.f);
  InstancePool& pool = out.pool;
  pool.rollouts = spec.g;
  pool.cluster_mass = RowMatrix::Zero(n, f);
  pool.success_counts.assign(spec.n, 0);
  pool.instance_ids.resize(spec.n);
  out.dominant.assign(spec.n, 0);
  out.mid_regime.assign(spec.n, 0);
  out.hard.assign(spec.n, 0);

  // Rank-r shared map W = A B, F x p_g.
  Matrix w_shared;
  const auto pg = static_cast<Eigen::Index>(spec.grad_dim);
  const auto rank = static_cast<Eigen::Index>(spec.grad_shared_rank);
  if (pg > 0) {
    const CounterRng sh = root.split(kShared);
    Matrix a(f, rank), b(rank, pg);
    for (Eigen::Index i = 0; i < f; ++i) {
      for (Eigen::Index j = 0; j < rank; ++j) a(i, j) = sh.normal_at(static_cast<std::uint64_t>(i * rank + j));
    }
    const std::uint64_t off = static_cast<std::uint64_t>(f * rank);
    const double bscale = rank > 0 ? 1.0 / std::sqrt(static_cast<double>(rank)) : 0.0;
    for (Eigen::Index i = 0; i < rank; ++i) {
      for (Eigen::Index j = 0; j < pg; ++j) {
        b(i, j) = bscale * sh.normal_at(off + static_cast<std::uint64_t>(i * pg + j));
      }
    }
    w_shared = rank > 0 ? Matrix(a * b) : Matrix::Zero(f, pg);
    pool.gradients = RowMatrix(n, pg);
  }
  if (spec.surface) {
    pool.surface_features = RowMatrix(n, 6);
    pool.surface_feature_names = synth_surface_names();
  }

  detail::parallel_rows(spec.n, [&](std::size_t i) {
    CounterRng rng = rows_root.split(i);
    const auto r = static_cast<Eigen::Index>(i);
    const double u = rng.uniform();
    const auto dom = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(prototype_cdf.begin(), prototype_cdf.end(), u) -
                                 prototype_cdf.begin()),
        spec.f - 1);
    auto row = pool.cluster_mass.row(r);
    row(static_cast<Eigen::Index>(dom)) = 1.0 + 0.5 * rng.uniform();
    for (std::size_t j = 0; j < spec.secondary; ++j) {
      const auto c = static_cast<Eigen::Index>(rng.below(spec.f));
      row(c) += spec.secondary_scale * rng.uniform();
    }
    row *= spec.mass_scale * std::exp(spec.length_sigma * rng.normal());

    double p = easy_rate[dom];
    if (is_hard[dom]) {
      out.hard[i] = 1;
      if (rng.uniform() < spec.mid_fraction) {
        out.mid_regime[i] = 1;
        p = spec.mid_success_rate;
      } else {
        p = spec.hard_success_rate;
      }
    }
    out.dominant[i] = static_cast<int>(dom);
    pool.success_counts[i] = binomial_inverse_cdf(rng.uniform(), spec.g, p);

    char id[32];
    std::snprintf(id, sizeof(id), "inst_%06zu", i);
    pool.instance_ids[i] = id;

    if (pool.surface_features) {
      auto sf = pool.surface_features->row(r);
      const double total = row.sum();
      double entropy = 0.0;
      for (Eigen::Index c = 0; c < f; ++c) {
        const double q = row(c) / total;
        if (q > 0) entropy -= q * std::log(q);
      }
      sf(0) = std::log(total) + 0.1 * rng.normal();
      sf(1) = static_cast<double>((row.array() > 0).count()) + rng.normal();
      sf(2) = row.maxCoeff() / total + 0.05 * rng.normal();
      sf(3) = rng.uniform() < 0.15 ? 1.0 : 0.0;
      sf(4) = row.norm() + 0.2 * rng.normal();
      sf(5) = entropy + 0.2 * rng.normal();
    }
    if (pool.gradients) {
      const CounterRng noise = rng.split(1);
      auto gr = pool.gradients->row(r);
      gr.noalias() = row * w_shared;
      for (Eigen::Index j = 0; j < pg; ++j) {
        gr(j) += spec.noise_scale * noise.normal_at(static_cast<std::uint64_t>(j));
      }
    }
  });
  return out;
}

inline InstancePool generate(const SynthSpec& spec) { return generate_with_truth(spec).pool; }

// Share of the selection's raw cluster mass on the given clusters.
inline double cluster_mass_share(std::span<const std::size_t> selected, const RowMatrix& mass,
                                 std::span<const std::size_t> clusters) {
  double on = 0.0, total = 0.0;
  for (std::size_t i : selected) {
    const auto row = mass.row(static_cast<Eigen::Index>(i));
    total += row.sum();
    for (std::size_t c : clusters) on += row(static_cast<Eigen::Index>(c));
  }
  return total > 0 ? on / total : 0.0;
}

struct PipelineOutput {
  MetricStage stage;
  std::optional<GradientBlock> gradient_block;
  DesignMatrix design;
  SelectionResult selection;
  AuditReport audit;
};

// Design vectors for one pool: SAE block, then the gradient block when the
// pool carries gradients and omega > 0.
inline DesignMatrix build_design(const InstancePool& pool, const PipelineConfig& cfg,
                                 MetricStage& stage, std::optional<GradientBlock>* block_out) {
  DesignMatrix design = std::move(stage.sae);
  stage.sae = DesignMatrix();
  if (cfg.omega == 0.0) return design;
  if (!pool.gradients) {
    throw ConfigError("pipeline: omega > 0 but the pool has no gradients; set omega=0");
  }
  const double target = mean_squared_row_norm(design.rows);
  GradientBlock block = condition_gradients(
      residualize(*pool.gradients, stage.coords.z_bar, cfg.rho_g), target, cfg.epsilon, cfg.alpha);
  design = stack_design(std::move(design), &block, cfg.omega);
  if (block_out) {
    block.g_tilde = RowMatrix();  // already folded into the design
    *block_out = std::move(block);
  }
  return design;
}

inline GreedyOptions greedy_options(const PipelineConfig& cfg, std::size_t k) {
  GreedyOptions opt;
  opt.k = k;
  opt.lambda = cfg.lambda;
  opt.queue_q = cfg.queue_q;
  opt.refresh_r = cfg.refresh_r;
  opt.reinvert_every = cfg.reinvert_every;
  return opt;
}

inline SelectionResult select_greedy(const DesignMatrix& design, const PipelineConfig& cfg,
                                     std::size_t k) {
  const auto mode = cfg.queue_q >= static_cast<std::size_t>(design.n())
                        ? SelectionMode::exact_greedy
                        : SelectionMode::screened_greedy;
  return run_greedy(design, greedy_options(cfg, k), mode);
}

struct PipelineOptions {
  WeightVariant variant = WeightVariant::full;
  bool run_audit = true;
};

inline PipelineOutput run_pipeline(const InstancePool& pool, const PipelineConfig& cfg,
                                   const PipelineOptions& opts = {}) {
  validate_pool(pool);
  cfg.validate(pool.size());
  PipelineOutput out;
  out.stage = build_metric_stage(pool, cfg, opts.variant, true);
  out.design = build_design(pool, cfg, out.stage, &out.gradient_block);
  out.selection = select_greedy(out.design, cfg, cfg.resolve_budget(pool.size()));
  if (opts.run_audit) out.audit = audit(pool, out.selection, cfg, out.stage);
  return out;
}

struct SweepRow {
  double budget_frac = 0.0;
  std::size_t k = 0;
  std::string method;
  double objective = 0.0;
};

// Target objective per budget per method. Greedy selections are nested, so
// IRDS runs once at the largest budget and is scored on prefixes.
inline std::vector<SweepRow> sweep(const InstancePool& pool, const PipelineConfig& cfg,
                                   std::span<const double> budgets,
                                   std::span<const BaselineName> baselines) {
  if (budgets.empty()) throw InputError("sweep: no budgets given");
  validate_pool(pool);
  std::vector<std::size_t> ks;
  for (double b : budgets) {
    if (!(b > 0 && b <= 1)) throw InputError("sweep: budgets must be in (0, 1]");
    PipelineConfig c = cfg;
    c.budget_k = 0;
    c.budget_frac = b;
    ks.push_back(c.resolve_budget(pool.size()));
  }
  PipelineConfig c = cfg;
  c.budget_k = *std::max_element(ks.begin(), ks.end());
  c.validate(pool.size());
  MetricStage stage = build_metric_stage(pool, c, WeightVariant::full, true);
  const DesignMatrix design = build_design(pool, c, stage, nullptr);
  const SelectionResult full = select_greedy(design, c, c.budget_k);

  std::vector<SweepRow> rows;
  const BaselineInputs in{stage.weights, design, stage.metric, stage.coords, c.lambda};
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    double obj = empty_objective(design.dim(), c.lambda);
    for (std::size_t j = 0; j < ks[b]; ++j) obj += full.gains[j];
    rows.push_back({budgets[b], ks[b], "irds", obj});
    for (BaselineName name : baselines) {
      BaselineSpec spec;
      spec.name = name;
      spec.seed = c.seed;
      const auto r = run_baseline(spec, in, ks[b]);
      rows.push_back({budgets[b], ks[b], to_string(name), r.objective});
    }
  }
  return rows;
}

}  // namespace covsel
