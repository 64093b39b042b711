#include <CLI11.hpp>

#include <covsel/covsel.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using namespace covsel;

namespace {

struct Common {
  std::string pool;
  std::string config;
  std::optional<double> budget_frac;
  std::optional<std::size_t> budget_k;
  std::string dump_coords;
  std::string dump_metric;
};

void add_pool_options(CLI::App* cmd, Common& c, bool with_budget = true) {
  cmd->add_option("--pool", c.pool, "pool manifest")->required()->check(CLI::ExistingFile);
  cmd->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  if (with_budget) {
    auto* frac = cmd->add_option("--budget-frac", c.budget_frac, "budget as a pool fraction")
                     ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--budget-k", c.budget_k, "budget as an instance count")->excludes(frac);
  }
}

PipelineConfig load_cfg(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_config(c.config);
  if (c.budget_frac) {
    cfg.budget_k = 0;
    cfg.budget_frac = *c.budget_frac;
  }
  if (c.budget_k) cfg.budget_k = *c.budget_k;
  return cfg;
}

void write_metric_text(const CoverageMetric& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(17);
  out << "# eigenvalues of M (descending)\n";
  for (Eigen::Index k = 0; k < m.eig.values.size(); ++k) out << m.eig.values(k) << '\n';
  const auto top = std::min<Eigen::Index>(10, m.eig.vectors.cols());
  out << "# top " << top << " eigenvectors, one per line\n";
  for (Eigen::Index k = 0; k < top; ++k) {
    for (Eigen::Index j = 0; j < m.eig.vectors.rows(); ++j) {
      if (j) out << ' ';
      out << m.eig.vectors(j, k);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void dump_stage(const Common& c, const MetricStage& st) {
  if (!c.dump_coords.empty()) write_matrix(c.dump_coords, st.coords.z_bar);
  if (!c.dump_metric.empty()) write_metric_text(st.metric, c.dump_metric);
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& tok : detail::split(text, ',')) {
    const auto t = detail::trim(tok);
    if (!t.empty()) out.push_back(detail::parse_double(t, "list entry"));
  }
  return out;
}

std::vector<BaselineName> all_baselines() {
  return {BaselineName::random,     BaselineName::top_d,        BaselineName::top_r,
          BaselineName::pointwise_dr, BaselineName::kmeans_phi, BaselineName::facility_phi,
          BaselineName::leverage_phi, BaselineName::less_proxy};
}

std::vector<BaselineName> parse_methods(const std::string& text) {
  if (text.empty() || text == "all") return all_baselines();
  std::vector<BaselineName> out;
  for (const auto& tok : detail::split(text, ',')) {
    const auto t = detail::trim(tok);
    if (!t.empty()) out.push_back(baseline_from_string(t));
  }
  return out;
}

std::ostream& open_or_stdout(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  return file;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Verifier-coupled coverage selection over cluster coordinates"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--dump-coords", common.dump_coords,
                 "write the stabilized coordinates to this matrix file");
  app.add_option("--dump-metric", common.dump_metric,
                 "write eigenvalues and top-10 eigenvectors of M as text");

  // select
  auto* sel = app.add_subcommand("select", "greedy log-det selection");
  std::string sel_mode = "screened", sel_out, sel_variant = "full";
  add_pool_options(sel, common);
  sel->add_option("--mode", sel_mode, "exact | screened | exhaustive")
      ->check(CLI::IsMember({"exact", "screened", "exhaustive"}));
  sel->add_option("--variant", sel_variant, "full | d_only | r_only | identity_metric");
  sel->add_option("--out", sel_out, "selection file")->required();

  // baseline
  auto* base = app.add_subcommand("baseline", "run one reference selector");
  std::string base_name, base_out;
  std::optional<std::uint64_t> base_seed;
  add_pool_options(base, common);
  base->add_option("--name", base_name, "baseline name")->required();
  base->add_option("--seed", base_seed, "baseline seed (default: config seed)");
  base->add_option("--out", base_out, "selection file")->required();

  // compare
  auto* cmp = app.add_subcommand("compare", "log-det and Jaccard of every baseline against IRDS");
  std::string cmp_methods = "all", cmp_out;
  add_pool_options(cmp, common);
  cmp->add_option("--methods", cmp_methods, "comma-separated baseline names or 'all'");
  cmp->add_option("--out", cmp_out, "table file (default stdout)");

  // cluster
  auto* clu = app.add_subcommand("cluster", "build cluster labels from sparse latent activations");
  std::string clu_acts, clu_out, clu_mass;
  ClusterRecipe recipe;
  clu->add_option("--acts", clu_acts, "sparse activation file")->required()->check(CLI::ExistingFile);
  clu->add_option("--out", clu_out, "cluster model file")->required();
  clu->add_option("--mass-out", clu_mass, "optional per-instance cluster mass matrix file");
  clu->add_option("--clusters", recipe.kmeans.clusters, "number of clusters");
  clu->add_option("--iters", recipe.kmeans.iters, "k-means iterations");
  clu->add_option("--batch", recipe.kmeans.batch, "k-means mini-batch size");
  clu->add_option("--seed", recipe.kmeans.seed, "k-means seed");
  clu->add_option("--neighbors", recipe.embedding.n_neighbors, "co-activation neighbors");
  clu->add_option("--half-dim", recipe.embedding.half_dim, "dimension of each embedding half");
  clu->add_option("--min-freq", recipe.min_freq, "lower activation-rate bound");
  clu->add_option("--max-freq", recipe.max_freq, "upper activation-rate bound");

  // synth
  auto* syn = app.add_subcommand("synth", "generate a planted synthetic pool");
  std::string syn_spec, syn_out;
  std::optional<std::uint64_t> syn_seed;
  syn->add_option("--spec", syn_spec, "key=value spec file")->check(CLI::ExistingFile);
  syn->add_option("--seed", syn_seed, "override the spec seed");
  syn->add_option("--out", syn_out, "pool manifest")->required();

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "weights, metric, selection and audit in one run");
  std::string pipe_sel, pipe_report, pipe_variant = "full";
  add_pool_options(pipe, common);
  pipe->add_option("--variant", pipe_variant, "full | d_only | r_only | identity_metric");
  pipe->add_option("--out-selection", pipe_sel, "selection file")->required();
  pipe->add_option("--out-report", pipe_report, "audit report (.jsonl or text)")->required();

  // sweep
  auto* swp = app.add_subcommand("sweep", "objective per budget per method");
  std::string swp_budgets = "0.1,0.2,0.3", swp_methods = "all", swp_out;
  add_pool_options(swp, common, false);
  swp->add_option("--budgets", swp_budgets, "comma-separated budget fractions");
  swp->add_option("--methods", swp_methods, "comma-separated baseline names or 'all'");
  swp->add_option("--out", swp_out, "csv file (default stdout)");

  // audit
  auto* aud = app.add_subcommand("audit", "diagnostics for an existing selection");
  std::string aud_sel, aud_report;
  add_pool_options(aud, common, false);
  aud->add_option("--selection", aud_sel, "selection file")->required()->check(CLI::ExistingFile);
  aud->add_option("--report", aud_report, "report file (.jsonl or text)")->required();

  // jl_project
  auto* jl = app.add_subcommand("jl_project", "seeded Gaussian projection of raw vectors per block");
  std::string jl_in, jl_out, jl_blocks;
  std::uint64_t jl_seed = 0;
  std::size_t jl_dim = 64;
  jl->add_option("--in", jl_in, "raw matrix file")->required()->check(CLI::ExistingFile);
  jl->add_option("--blocks", jl_blocks, "comma-separated block widths (default: one block)");
  jl->add_option("--seed", jl_seed, "projection seed")->required();
  jl->add_option("--dim", jl_dim, "output width per block");
  jl->add_option("--out", jl_out, "projected matrix file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sel) {
      const InstancePool pool = load_pool(common.pool);
      const PipelineConfig cfg = load_cfg(common);
      cfg.validate(pool.size());
      MetricStage st = build_metric_stage(pool, cfg, weight_variant_from_string(sel_variant));
      dump_stage(common, st);
      const DesignMatrix design = build_design(pool, cfg, st, nullptr);
      const std::size_t k = cfg.resolve_budget(pool.size());
      SelectionResult r;
      if (sel_mode == "exact") {
        r = greedy_exact(design, k, cfg.lambda, cfg.reinvert_every);
      } else if (sel_mode == "screened") {
        r = greedy_screened(design, k, cfg.lambda, cfg.queue_q, cfg.refresh_r, cfg.reinvert_every);
      } else {
        r = exhaustive_opt(design, k, cfg.lambda);
      }
      save_selection(r, pool.instance_ids, sel_out);
      std::cout << "selected " << r.size() << " of " << pool.size()
                << " objective=" << detail::format_double(r.objective) << '\n';
    } else if (*base) {
      const InstancePool pool = load_pool(common.pool);
      const PipelineConfig cfg = load_cfg(common);
      cfg.validate(pool.size());
      MetricStage st = build_metric_stage(pool, cfg);
      dump_stage(common, st);
      const DesignMatrix design = build_design(pool, cfg, st, nullptr);
      BaselineSpec spec;
      spec.name = baseline_from_string(base_name);
      spec.seed = base_seed.value_or(cfg.seed);
      const BaselineInputs in{st.weights, design, st.metric, st.coords, cfg.lambda};
      const auto r = run_baseline(spec, in, cfg.resolve_budget(pool.size()));
      save_selection(r, pool.instance_ids, base_out);
      std::cout << base_name << ": selected " << r.size()
                << " objective=" << detail::format_double(r.objective) << '\n';
    } else if (*cmp) {
      const InstancePool pool = load_pool(common.pool);
      const PipelineConfig cfg = load_cfg(common);
      cfg.validate(pool.size());
      MetricStage st = build_metric_stage(pool, cfg);
      dump_stage(common, st);
      const DesignMatrix design = build_design(pool, cfg, st, nullptr);
      const std::size_t k = cfg.resolve_budget(pool.size());
      const SelectionResult irds = select_greedy(design, cfg, k);
      const BaselineInputs in{st.weights, design, st.metric, st.coords, cfg.lambda};
      std::ofstream file;
      std::ostream& out = open_or_stdout(cmp_out, file);
      out << "method,k,logdet,jaccard_with_irds\n";
      out << "irds," << k << ',' << detail::format_double(irds.objective) << ",1\n";
      for (BaselineName name : parse_methods(cmp_methods)) {
        BaselineSpec spec;
        spec.name = name;
        spec.seed = cfg.seed;
        const auto r = run_baseline(spec, in, k);
        out << to_string(name) << ',' << k << ',' << detail::format_double(r.objective) << ','
            << detail::format_double(jaccard(r, irds)) << '\n';
      }
    } else if (*clu) {
      const auto acts = read_activations(clu_acts);
      const auto model = build_cluster_model(acts, recipe);
      save_cluster_model(model, clu_out);
      if (!clu_mass.empty()) write_matrix(clu_mass, cluster_mass(acts, model));
      std::size_t kept = 0;
      for (int l : model.labels) kept += l >= 0;
      std::cout << "clustered " << kept << " of " << model.labels.size() << " latents into "
                << model.n_clusters << " clusters\n";
    } else if (*syn) {
      SynthSpec spec = syn_spec.empty() ? SynthSpec{} : load_synth_spec(syn_spec);
      if (syn_seed) spec.seed = *syn_seed;
      const auto pool = generate(spec);
      save_pool(pool, syn_out);
      std::cout << "wrote " << pool.size() << " instances, " << pool.n_clusters()
                << " clusters to " << syn_out << '\n';
    } else if (*pipe) {
      const InstancePool pool = load_pool(common.pool);
      const PipelineConfig cfg = load_cfg(common);
      PipelineOptions opts;
      opts.variant = weight_variant_from_string(pipe_variant);
      const auto out = run_pipeline(pool, cfg, opts);
      dump_stage(common, out.stage);
      save_selection(out.selection, pool.instance_ids, pipe_sel);
      write_report(out.audit, pipe_report);
      std::cout << "selected " << out.selection.size() << " of " << pool.size()
                << " objective=" << detail::format_double(out.selection.objective) << '\n';
    } else if (*swp) {
      const InstancePool pool = load_pool(common.pool);
      const PipelineConfig cfg = load_cfg(common);
      const auto budgets = parse_list(swp_budgets);
      const auto rows = sweep(pool, cfg, budgets, parse_methods(swp_methods));
      std::ofstream file;
      std::ostream& out = open_or_stdout(swp_out, file);
      out << "budget_frac,k,method,objective\n";
      for (const auto& r : rows) {
        out << detail::format_double(r.budget_frac) << ',' << r.k << ',' << r.method << ','
            << detail::format_double(r.objective) << '\n';
      }
    } else if (*aud) {
      const InstancePool pool = load_pool(common.pool);
      const PipelineConfig cfg = load_cfg(common);
      const auto selection = load_selection(aud_sel, pool.instance_ids);
      const MetricStage st = build_metric_stage(pool, cfg, WeightVariant::full, false);
      dump_stage(common, st);
      write_report(audit(pool, selection, cfg, st), aud_report);
    } else if (*jl) {
      const RowMatrix raw = read_matrix(jl_in);
      std::vector<std::size_t> blocks;
      if (jl_blocks.empty()) {
        blocks.push_back(static_cast<std::size_t>(raw.cols()));
      } else {
        for (double b : parse_list(jl_blocks)) {
          if (!(b > 0) || b != std::floor(b)) {
            throw InputError("jl_project: block widths must be positive integers");
          }
          blocks.push_back(static_cast<std::size_t>(b));
        }
      }
      write_matrix(jl_out, jl_project(raw, blocks, jl_seed, jl_dim));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
