#pragma once

// Audit suite: label-shuffle falsification, surface-artifact regression,
// cluster-allocation statistics and difficulty localization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "covsel/config.hpp"
#include "covsel/errors.hpp"
#include "covsel/pool_io.hpp"
#include "covsel/result.hpp"
#include "covsel/rng.hpp"
#include "covsel/select.hpp"
#include "covsel/stages.hpp"
#include "covsel/stats.hpp"

namespace covsel {

struct ShuffleReport {
  double top_eig_true = 0.0;
  double top_eig_shuffled = 0.0;
  double subspace_overlap = 0.0;
};

struct SurfaceReport {
  double r2 = 0.0;
  std::vector<std::pair<std::string, double>> rho;
  std::vector<std::pair<std::string, double>> delta;
  std::vector<std::string> dropped;
};

struct AllocationStats {
  double n_eff = 0.0;
  double sym_kl = 0.0;
  std::vector<double> q;      // selected cluster-mass distribution
  std::vector<double> q_bar;  // pool distribution
};

struct LocalizationReport {
  double median_success_top_proj = 0.0;
  double median_success_corpus = 0.0;
};

struct AuditReport {
  double top_eigenvalue_true = 0.0;
  double top_eigenvalue_shuffled = 0.0;
  double subspace_overlap = 0.0;
  std::optional<double> surface_r2;
  std::vector<std::pair<std::string, double>> per_feature_rho;
  std::vector<std::pair<std::string, double>> per_feature_delta;
  std::vector<std::string> dropped_features;
  double n_eff_selected = 0.0;
  double sym_kl = 0.0;
  double median_success_top_proj = 0.0;
  double median_success_corpus = 0.0;
  double marginal_gain_variance = 0.0;
};

// ||U_k^T U'_k||_F^2 / k for the leading-k columns of two eigenvector sets.
inline double subspace_overlap(const Matrix& u, const Matrix& v, std::size_t k) {
  const auto kk = static_cast<Eigen::Index>(std::min<std::size_t>(
      k, static_cast<std::size_t>(std::min(u.cols(), v.cols()))));
  if (kk == 0) throw InputError("subspace_overlap: k must be >= 1");
  const Matrix cross = u.leftCols(kk).transpose() * v.leftCols(kk);
  return std::clamp(cross.squaredNorm() / static_cast<double>(kk), 0.0, 1.0);
}

// Rebuilds the metric under s permuted by `perm` (s'_i = s_perm[i]).
inline ShuffleReport shuffle_falsification(const InstancePool& pool, const PipelineConfig& cfg,
                                           std::span<const std::size_t> perm) {
  const auto n = pool.success_counts.size();
  if (perm.size() != n) throw InputError("shuffle_falsification: permutation length mismatch");
  std::vector<int> shuffled(n);
  std::vector<char> seen(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (perm[i] >= n || seen[perm[i]]) throw InputError("shuffle_falsification: not a permutation");
    seen[perm[i]] = 1;
    shuffled[i] = pool.success_counts[perm[i]];
  }
  const MetricStage truth = build_metric_stage(pool, cfg, WeightVariant::full, false);
  const MetricStage shuf = build_metric_stage(pool.cluster_mass, shuffled, pool.rollouts, cfg,
                                              WeightVariant::full, false);
  ShuffleReport rep;
  rep.top_eig_true = truth.metric.eig.values(0);
  rep.top_eig_shuffled = shuf.metric.eig.values(0);
  rep.subspace_overlap =
      subspace_overlap(truth.metric.eig.vectors, shuf.metric.eig.vectors, cfg.subspace_k);
  return rep;
}

inline ShuffleReport shuffle_falsification(const InstancePool& pool, const PipelineConfig& cfg,
                                           std::uint64_t seed) {
  const auto perm = CounterRng(seed).permutation(pool.success_counts.size());
  return shuffle_falsification(pool, cfg, perm);
}

// OLS of the 0/1 selection indicator on standardized surface columns plus
// intercept. Constant or linearly dependent columns are dropped and named.
inline SurfaceReport surface_regression(std::span<const std::size_t> selected,
                                        const InstancePool& pool) {
  if (!pool.surface_features) throw InputError("surface_regression: pool has no surface features");
  const RowMatrix& x = *pool.surface_features;
  const auto n = x.rows();
  const auto p = x.cols();
  auto name_of = [&](Eigen::Index j) {
    const auto u = static_cast<std::size_t>(j);
    return u < pool.surface_feature_names.size() ? pool.surface_feature_names[u]
                                                 : "feature_" + std::to_string(j);
  };
  std::vector<double> y(static_cast<std::size_t>(n), 0.0);
  for (std::size_t i : selected) {
    if (i >= y.size()) throw InputError("surface_regression: selected index out of range");
    y[i] = 1.0;
  }

  SurfaceReport rep;
  std::vector<double> col(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> kept;
  Matrix basis(n, 1);  // orthonormal basis of intercept + kept columns
  basis.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(n)));
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = x(i, j);
    rep.rho.emplace_back(name_of(j), pearson(col, y));
    const double all_mean = mean(col);
    double sel_mean = 0.0;
    for (std::size_t i : selected) sel_mean += col[i];
    sel_mean = selected.empty() ? all_mean : sel_mean / static_cast<double>(selected.size());
    rep.delta.emplace_back(name_of(j), sel_mean - all_mean);

    Vector c = x.col(j);
    const double mu = c.mean();
    const double sd = std::sqrt((c.array() - mu).square().mean());
    if (!(sd > 0)) {
      rep.dropped.push_back(name_of(j));
      continue;
    }
    c = (c.array() - mu) / sd;
    const double before = c.norm();
    for (int pass = 0; pass < 2; ++pass) c -= basis * (basis.transpose() * c);
    if (c.norm() <= 1e-8 * before) {
      rep.dropped.push_back(name_of(j));
      continue;
    }
    kept.push_back(j);
    basis.conservativeResize(n, basis.cols() + 1);
    basis.col(basis.cols() - 1) = c / c.norm();
  }

  const Eigen::Map<const Vector> yv(y.data(), n);
  const double ybar = yv.mean();
  const double sst = (yv.array() - ybar).square().sum();
  if (sst > 0) {
    const Vector fit = basis * (basis.transpose() * yv);
    const double ssr = (yv - fit).squaredNorm();
    rep.r2 = std::clamp(1.0 - ssr / sst, 0.0, 1.0);
  }
  return rep;
}

namespace detail {

inline std::vector<double> mass_distribution(const RowMatrix& mass,
                                             const std::vector<std::size_t>* rows) {
  Vector total = Vector::Zero(mass.cols());
  if (rows) {
    for (std::size_t i : *rows) total += mass.row(static_cast<Eigen::Index>(i)).transpose();
  } else {
    total = mass.colwise().sum().transpose();
  }
  const double s = total.sum();
  if (!(s > 0)) throw InputError("allocation_stats: selected cluster mass is all zero");
  std::vector<double> q(static_cast<std::size_t>(total.size()));
  for (std::size_t f = 0; f < q.size(); ++f) q[f] = total(static_cast<Eigen::Index>(f)) / s;
  return q;
}

inline std::vector<double> floored(const std::vector<double>& q) {
  std::vector<double> out(q.size());
  double s = 0.0;
  for (std::size_t f = 0; f < q.size(); ++f) s += (out[f] = q[f] + 1e-12);
  for (double& v : out) v /= s;
  return out;
}

}  // namespace detail

inline double effective_count(std::span<const double> q) {
  double h = 0.0;
  for (double v : q) {
    if (v > 0) h -= v * std::log(v);
  }
  return std::exp(h);
}

inline double symmetric_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("symmetric_kl: length mismatch");
  const auto a = detail::floored({p.begin(), p.end()});
  const auto b = detail::floored({q.begin(), q.end()});
  double kl = 0.0;
  for (std::size_t f = 0; f < a.size(); ++f) kl += (a[f] - b[f]) * std::log(a[f] / b[f]);
  return std::max(kl, 0.0);
}

inline AllocationStats allocation_stats(std::span<const std::size_t> selected,
                                        const RowMatrix& cluster_mass) {
  if (selected.empty()) throw InputError("allocation_stats: empty selection");
  const std::vector<std::size_t> rows(selected.begin(), selected.end());
  for (std::size_t i : rows) {
    if (i >= static_cast<std::size_t>(cluster_mass.rows())) {
      throw InputError("allocation_stats: selected index out of range");
    }
  }
  AllocationStats st;
  st.q = detail::mass_distribution(cluster_mass, &rows);
  st.q_bar = detail::mass_distribution(cluster_mass, nullptr);
  st.n_eff = effective_count(st.q);
  st.sym_kl = symmetric_kl(st.q, st.q_bar);
  return st;
}

// Median success count of the top_m rows by |z_bar_i . u_1| against the
// corpus median.
inline LocalizationReport difficulty_localization(const CoverageMetric& metric,
                                                  const StabilizedCoords& coords,
                                                  std::span<const int> success_counts,
                                                  std::size_t top_m = 25) {
  const auto n = static_cast<std::size_t>(coords.z_bar.rows());
  if (success_counts.size() != n) throw InputError("difficulty_localization: length mismatch");
  const Vector proj = (coords.z_bar * metric.eig.vectors.col(0)).cwiseAbs();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return proj(static_cast<Eigen::Index>(a)) > proj(static_cast<Eigen::Index>(b));
  });
  const std::size_t m = std::min(top_m, n);
  std::vector<double> top(m), all(n);
  for (std::size_t j = 0; j < m; ++j) top[j] = success_counts[idx[j]];
  for (std::size_t i = 0; i < n; ++i) all[i] = success_counts[i];
  LocalizationReport rep;
  rep.median_success_top_proj = median(top);
  rep.median_success_corpus = median(all);
  return rep;
}

inline AuditReport audit(const InstancePool& pool, const SelectionResult& selection,
                         const PipelineConfig& cfg, const MetricStage& stage) {
  AuditReport rep;
  const auto shuf = shuffle_falsification(pool, cfg, cfg.seed);
  rep.top_eigenvalue_true = shuf.top_eig_true;
  rep.top_eigenvalue_shuffled = shuf.top_eig_shuffled;
  rep.subspace_overlap = shuf.subspace_overlap;
  if (pool.surface_features) {
    auto sr = surface_regression(selection.indices, pool);
    rep.surface_r2 = sr.r2;
    rep.per_feature_rho = std::move(sr.rho);
    rep.per_feature_delta = std::move(sr.delta);
    rep.dropped_features = std::move(sr.dropped);
  }
  const auto alloc = allocation_stats(selection.indices, pool.cluster_mass);
  rep.n_eff_selected = alloc.n_eff;
  rep.sym_kl = alloc.sym_kl;
  const auto loc = difficulty_localization(stage.metric, stage.coords, pool.success_counts, cfg.top_m);
  rep.median_success_top_proj = loc.median_success_top_proj;
  rep.median_success_corpus = loc.median_success_corpus;
  rep.marginal_gain_variance = gain_variance(selection);
  return rep;
}

inline AuditReport audit(const InstancePool& pool, const SelectionResult& selection,
                         const PipelineConfig& cfg) {
  return audit(pool, selection, cfg, build_metric_stage(pool, cfg, WeightVariant::full, false));
}

inline nlohmann::ordered_json to_json(const AuditReport& r) {
  nlohmann::ordered_json j;
  j["top_eigenvalue_true"] = r.top_eigenvalue_true;
  j["top_eigenvalue_shuffled"] = r.top_eigenvalue_shuffled;
  j["subspace_overlap"] = r.subspace_overlap;
  j["surface_r2"] = r.surface_r2 ? nlohmann::ordered_json(*r.surface_r2) : nlohmann::ordered_json();
  j["per_feature_rho"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.per_feature_rho) j["per_feature_rho"][k] = v;
  j["per_feature_delta"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.per_feature_delta) j["per_feature_delta"][k] = v;
  j["dropped_features"] = r.dropped_features;
  j["n_eff_selected"] = r.n_eff_selected;
  j["sym_kl"] = r.sym_kl;
  j["median_success_top_proj"] = r.median_success_top_proj;
  j["median_success_corpus"] = r.median_success_corpus;
  j["marginal_gain_variance"] = r.marginal_gain_variance;
  return j;
}

// ".jsonl"/".json" paths get one {"field": ..., "value": ...} object per
// line; anything else gets "field = value" text lines.
inline void write_report(const AuditReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const auto j = to_json(r);
  const auto ext = path.extension().string();
  const bool as_json = ext == ".jsonl" || ext == ".json";
  for (const auto& [key, value] : j.items()) {
    if (as_json) {
      out << nlohmann::ordered_json{{"field", key}, {"value", value}}.dump() << '\n';
    } else if (value.is_object()) {
      for (const auto& [name, v] : value.items()) {
        out << key << '.' << name << " = " << detail::format_double(v.get<double>()) << '\n';
      }
    } else if (value.is_array()) {
      out << key << " =";
      for (const auto& v : value) out << ' ' << v.get<std::string>();
      out << '\n';
    } else if (value.is_null()) {
      out << key << " = NA\n";
    } else {
      out << key << " = " << detail::format_double(value.get<double>()) << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace covsel
