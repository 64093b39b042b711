#pragma once

// Optional gradient block of the design vector: ridge residualization of
// gradient signatures against the stabilized coordinate, conditioning
// (clip, unit-normalize, PCA-whiten, trace-match) and stacking.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

#include "covsel/errors.hpp"
#include "covsel/linalg.hpp"
#include "covsel/metric.hpp"
#include "covsel/rng.hpp"
#include "covsel/stats.hpp"

namespace covsel {

inline constexpr double kWhitenRidge = 1e-4;

struct GradientBlock {
  RowMatrix g_tilde;              // N x p_g', conditioned
  std::vector<double> q_tilde;    // inverse-norm row weights
  std::vector<double> perp_norms; // pre-clip ||g_i^perp||
  double mean_perp_norm = 0.0;    // g-bar
  double clip_threshold = 0.0;
  Eigen::Index dropped_dims = 0;  // ridge-floor directions removed
  double whiten_scale = 1.0;      // g_tilde = whiten_scale * (unit-variance whitened rows)
  double epsilon = 1e-3;
  double alpha = 1.0;
};

// G^perp = G - Z (Z^T Z + rho_g I)^{-1} Z^T G, computed in place.
inline RowMatrix residualize(RowMatrix gradients, const RowMatrix& z_bar, double rho_g) {
  if (gradients.rows() != z_bar.rows()) {
    std::ostringstream os;
    os << "residualize: gradients have " << gradients.rows()
       << " rows, coordinates have " << z_bar.rows();
    throw InputError(os.str());
  }
  if (!(rho_g > 0)) throw ConfigError("residualize: rho_g must be > 0");
  const SymMatrix gram = z_bar.transpose() * z_bar;
  const Matrix rhs = z_bar.transpose() * gradients;
  const Matrix coef = ridge_solve(gram, rhs, rho_g);
  gradients.noalias() -= z_bar * coef;
  return gradients;
}

// q~_i = (g-bar / max(||g_i||, eps * g-bar))^alpha
inline double inverse_norm_weight(double norm, double mean_norm, double epsilon,
                                  double alpha) {
  return std::pow(mean_norm / std::max(norm, epsilon * mean_norm), alpha);
}

// target_mean_sq is (1/N) sum ||v_i||^2 of the SAE block the result is
// trace-matched to. Takes g_perp by value so large inputs can be moved in.
inline GradientBlock condition_gradients(RowMatrix g_perp, double target_mean_sq,
                                         double epsilon, double alpha) {
  if (!(epsilon > 0)) throw ConfigError("condition_gradients: epsilon must be > 0");
  if (!(alpha >= 0)) throw ConfigError("condition_gradients: alpha must be >= 0");
  const auto n = g_perp.rows();
  const auto p = g_perp.cols();
  if (n == 0 || p == 0) throw InputError("condition_gradients: empty gradient matrix");

  GradientBlock out;
  out.epsilon = epsilon;
  out.alpha = alpha;
  out.perp_norms.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out.perp_norms[static_cast<std::size_t>(i)] = g_perp.row(i).norm();
  out.mean_perp_norm = mean(out.perp_norms);
  if (!(out.mean_perp_norm > 0)) {
    throw InputError("condition_gradients: gradient matrix is all zero; nothing to whiten");
  }
  out.q_tilde.resize(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < out.q_tilde.size(); ++i) {
    out.q_tilde[i] = inverse_norm_weight(out.perp_norms[i], out.mean_perp_norm, epsilon, alpha);
  }

  // Clip at the q99 norm, then unit-normalize.
  out.clip_threshold = percentile(out.perp_norms, 0.99);
  for (Eigen::Index i = 0; i < n; ++i) {
    double nrm = out.perp_norms[static_cast<std::size_t>(i)];
    if (nrm > out.clip_threshold) {
      g_perp.row(i) *= out.clip_threshold / nrm;
      nrm = out.clip_threshold;
    }
    if (nrm > 0) g_perp.row(i) /= nrm;
  }

  // PCA whitening. Directions whose ridged eigenvalue sits at the ridge
  // floor carry no data variance and are dropped.
  const Eigen::RowVectorXd mu = g_perp.colwise().mean();
  g_perp.rowwise() -= mu;
  SymMatrix cov = SymMatrix::Zero(p, p);
  cov.selfadjointView<Eigen::Lower>().rankUpdate(g_perp.transpose(), 1.0 / static_cast<double>(n));
  cov = cov.selfadjointView<Eigen::Lower>();
  cov.diagonal().array() += kWhitenRidge;
  const EigenDecomp eig = sym_eig(cov);
  const double floor = kWhitenRidge * (1.0 + 1e-6);
  Eigen::Index keep = 0;
  while (keep < p && eig.values(keep) > floor) ++keep;
  if (keep == 0) throw InputError("condition_gradients: no direction above the ridge floor");
  out.dropped_dims = p - keep;
  Matrix proj = eig.vectors.leftCols(keep);
  for (Eigen::Index k = 0; k < keep; ++k) {
    proj.col(k) /= std::sqrt(eig.values(k) - kWhitenRidge);
  }
  out.g_tilde.noalias() = g_perp * proj;
  g_perp = RowMatrix();

  const double current = out.g_tilde.squaredNorm() / static_cast<double>(n);
  out.whiten_scale = std::sqrt(target_mean_sq / current);
  out.g_tilde *= out.whiten_scale;
  return out;
}

inline double mean_squared_row_norm(const RowMatrix& m) {
  return m.squaredNorm() / static_cast<double>(m.rows());
}

// phi_i = [v_i ; sqrt(q~_i omega) g~_i]; omega = 0 returns v unchanged.
inline DesignMatrix stack_design(DesignMatrix v, const GradientBlock* block, double omega) {
  if (!(omega >= 0)) throw ConfigError("stack_design: omega must be >= 0");
  if (omega == 0.0) return v;
  if (block == nullptr) {
    throw ConfigError("stack_design: omega > 0 but the pool has no gradient block");
  }
  if (block->g_tilde.rows() != v.n()) {
    throw InputError("stack_design: gradient block rows do not match design rows");
  }
  const auto pg = block->g_tilde.cols();
  DesignMatrix out;
  out.sae_cols = v.dim();
  out.grad_cols = pg;
  out.rows.resize(v.n(), v.dim() + pg);
  out.rows.leftCols(v.dim()) = v.rows;
  v.rows = RowMatrix();
  for (Eigen::Index i = 0; i < out.rows.rows(); ++i) {
    out.rows.row(i).tail(pg) =
        std::sqrt(block->q_tilde[static_cast<std::size_t>(i)] * omega) * block->g_tilde.row(i);
  }
  return out;
}

// Per-block Gaussian random projection of raw gradient vectors. Block b of
// the input (block_sizes[b] consecutive columns) is multiplied by a
// block_sizes[b] x out_dim matrix of N(0,1)/sqrt(out_dim) entries drawn from
// the generator stream split off the seed at index b; outputs are
// concatenated.
inline RowMatrix jl_project(const RowMatrix& raw, std::span<const std::size_t> block_sizes,
                            std::uint64_t seed, std::size_t out_dim = 64) {
  std::size_t total = 0;
  for (auto b : block_sizes) total += b;
  if (total != static_cast<std::size_t>(raw.cols())) {
    throw InputError("jl_project: block sizes do not sum to the input width");
  }
  if (out_dim == 0) throw InputError("jl_project: output dimension must be positive");
  const CounterRng root(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(out_dim));
  const auto od = static_cast<Eigen::Index>(out_dim);
  RowMatrix out(raw.rows(), static_cast<Eigen::Index>(block_sizes.size()) * od);
  Eigen::Index offset = 0;
  for (std::size_t b = 0; b < block_sizes.size(); ++b) {
    const CounterRng stream = root.split(b);
    const auto width = static_cast<Eigen::Index>(block_sizes[b]);
    Matrix proj(width, od);
    for (Eigen::Index j = 0; j < width; ++j) {
      for (Eigen::Index k = 0; k < od; ++k) {
        proj(j, k) = scale * stream.normal_at(static_cast<std::uint64_t>(j * od + k));
      }
    }
    out.middleCols(static_cast<Eigen::Index>(b) * od, od).noalias() =
        raw.middleCols(offset, width) * proj;
    offset += width;
  }
  return out;
}

}  // namespace covsel
