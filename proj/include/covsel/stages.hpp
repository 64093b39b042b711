#pragma once

// weights -> stabilized coordinates -> metric -> SAE design, as one stage,
// with the weight-role ablations used by the audit workflows.

#include <span>
#include <string>
#include <vector>

#include "covsel/config.hpp"
#include "covsel/coords.hpp"
#include "covsel/metric.hpp"
#include "covsel/weights.hpp"

namespace covsel {

// Which weights fill the difficulty slot (Sigma_d), the trainability slot
// (Sigma_r) and the per-instance design weight.
//   full            d~ | r~ | r~
//   d_only          d~ | 1  | d~   (trainability removed)
//   r_only          1  | r~ | r~   (difficulty removed)
//   identity_metric M = I, design weight r~
enum class WeightVariant { full, d_only, r_only, identity_metric };

inline std::string to_string(WeightVariant v) {
  switch (v) {
    case WeightVariant::full: return "full";
    case WeightVariant::d_only: return "d_only";
    case WeightVariant::r_only: return "r_only";
    case WeightVariant::identity_metric: return "identity_metric";
  }
  return "?";
}

inline WeightVariant weight_variant_from_string(const std::string& s) {
  for (auto v : {WeightVariant::full, WeightVariant::d_only, WeightVariant::r_only,
                 WeightVariant::identity_metric}) {
    if (to_string(v) == s) return v;
  }
  throw InputError("unknown weight variant '" + s + "'");
}

struct MetricStage {
  VerifierWeights weights;
  StabilizedCoords coords;
  CoverageMetric metric;
  DesignMatrix sae;  // empty when the design was not requested
};

inline MetricStage build_metric_stage(const RowMatrix& cluster_mass,
                                      std::span<const int> success_counts, int rollouts,
                                      const PipelineConfig& cfg,
                                      WeightVariant variant = WeightVariant::full,
                                      bool with_design = true) {
  MetricStage st;
  st.weights = compute_weights(success_counts, rollouts);
  st.coords = stabilize(cluster_mass, success_counts, rollouts, cfg.stabilize_order);
  const std::vector<double> ones(success_counts.size(), 1.0);
  const auto& w = st.weights;
  std::span<const double> dslot = w.d_tilde;
  std::span<const double> rslot = w.r_tilde;
  std::span<const double> design_weight = w.r_tilde;
  switch (variant) {
    case WeightVariant::full:
    case WeightVariant::identity_metric:
      break;
    case WeightVariant::d_only:
      rslot = ones;
      design_weight = w.d_tilde;
      break;
    case WeightVariant::r_only:
      dslot = ones;
      break;
  }
  st.metric = build_metric_from_weights(st.coords.z_bar, dslot, rslot, cfg.rho, cfg.eta, cfg.c);
  if (with_design) {
    if (variant == WeightVariant::identity_metric) {
      CoverageMetric flat = st.metric;
      flat.m_reg = SymMatrix::Identity(st.metric.dim(), st.metric.dim());
      st.sae = sae_design(st.coords.z_bar, design_weight, flat);
    } else {
      st.sae = sae_design(st.coords.z_bar, design_weight, st.metric);
    }
  }
  return st;
}

inline MetricStage build_metric_stage(const InstancePool& pool, const PipelineConfig& cfg,
                                      WeightVariant variant = WeightVariant::full,
                                      bool with_design = true) {
  return build_metric_stage(pool.cluster_mass, pool.success_counts, pool.rollouts, cfg, variant,
                            with_design);
}

}  // namespace covsel
