#pragma once

// Verifier-coupled coverage metric and the SAE-block design vectors.
//
//   Sigma_d = (1/N) sum_i d~_i z_i z_i^T,  Sigma_r likewise with r~_i
//   M       = (Sigma_r + rho I)^{-1/2} (Sigma_d + rho I) (Sigma_r + rho I)^{-1/2}
//   M_reg   = U clip(Lambda^eta, 1/c, c) U^T, rescaled to trace F
//   v_i     = sqrt(r~_i) M_reg^{1/2} z_i

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <vector>

#include "covsel/coords.hpp"
#include "covsel/linalg.hpp"
#include "covsel/weights.hpp"

namespace covsel {

struct CoverageMetric {
  SymMatrix sigma_d;
  SymMatrix sigma_r;
  SymMatrix m_raw;
  SymMatrix m_reg;
  EigenDecomp eig;       // of m_raw
  Vector reg_spectrum;   // clipped Lambda^eta before trace normalization
  double trace_scale = 1.0;  // m_reg = trace_scale * U diag(reg_spectrum) U^T
  double rho = 0.1;
  double eta = 0.5;
  double c = 2.0;

  Eigen::Index dim() const { return m_raw.rows(); }
};

// Rows of the design matrix are per-instance vectors; the first sae_cols
// columns come from the metric block, the remaining grad_cols from the
// gradient block.
struct DesignMatrix {
  RowMatrix rows;
  Eigen::Index sae_cols = 0;
  Eigen::Index grad_cols = 0;

  Eigen::Index n() const { return rows.rows(); }
  Eigen::Index dim() const { return rows.cols(); }
};

// (1/N) sum_i w_i x_i x_i^T
inline SymMatrix weighted_covariance(const RowMatrix& x, std::span<const double> w) {
  if (static_cast<std::size_t>(x.rows()) != w.size()) {
    throw InputError("weighted_covariance: weight count does not match rows");
  }
  const Eigen::Map<const Vector> wv(w.data(), static_cast<Eigen::Index>(w.size()));
  RowMatrix scaled = wv.asDiagonal() * x;
  SymMatrix out = x.transpose() * scaled;
  out /= static_cast<double>(x.rows());
  return 0.5 * (out + out.transpose());
}

// Whitened ratio of two covariances with a shared ridge.
inline SymMatrix whitened_ratio(const SymMatrix& sigma_d, const SymMatrix& sigma_r,
                                double rho) {
  const auto f = sigma_d.rows();
  const SymMatrix id = SymMatrix::Identity(f, f);
  const SymMatrix r_inv_half = mat_power(sigma_r + rho * id, -0.5);
  SymMatrix m = r_inv_half * (sigma_d + rho * id) * r_inv_half;
  return 0.5 * (m + m.transpose());
}

inline CoverageMetric build_metric_from_weights(const RowMatrix& z_bar,
                                                std::span<const double> d_tilde,
                                                std::span<const double> r_tilde,
                                                double rho, double eta, double c) {
  if (!(rho > 0)) throw ConfigError("build_metric: rho must be > 0");
  if (!(c >= 1)) throw ConfigError("build_metric: c must be >= 1");
  CoverageMetric out;
  out.rho = rho;
  out.eta = eta;
  out.c = c;
  out.sigma_d = weighted_covariance(z_bar, d_tilde);
  out.sigma_r = weighted_covariance(z_bar, r_tilde);
  out.m_raw = whitened_ratio(out.sigma_d, out.sigma_r, rho);
  out.eig = sym_eig(out.m_raw);

  const auto f = out.m_raw.rows();
  out.reg_spectrum.resize(f);
  for (Eigen::Index k = 0; k < f; ++k) {
    out.reg_spectrum(k) = std::clamp(std::pow(out.eig.values(k), eta), 1.0 / c, c);
  }
  out.trace_scale = static_cast<double>(f) / out.reg_spectrum.sum();
  out.m_reg = out.trace_scale *
              (out.eig.vectors * out.reg_spectrum.asDiagonal() * out.eig.vectors.transpose());
  out.m_reg = 0.5 * (out.m_reg + out.m_reg.transpose());
  return out;
}

inline CoverageMetric build_metric(const StabilizedCoords& coords, const VerifierWeights& w,
                                   double rho, double eta, double c) {
  return build_metric_from_weights(coords.z_bar, w.d_tilde, w.r_tilde, rho, eta, c);
}

// v_i = sqrt(r~_i) M_reg^{1/2} z_i, stacked as rows.
inline DesignMatrix sae_design(const RowMatrix& z_bar, std::span<const double> r_tilde,
                               const CoverageMetric& metric) {
  if (z_bar.cols() != metric.dim()) {
    std::ostringstream os;
    os << "sae_design: coordinates have " << z_bar.cols()
       << " columns, metric is " << metric.dim() << "-dimensional";
    throw InputError(os.str());
  }
  if (static_cast<std::size_t>(z_bar.rows()) != r_tilde.size()) {
    throw InputError("sae_design: weight count does not match rows");
  }
  const SymMatrix root = mat_power(metric.m_reg, 0.5);
  DesignMatrix out;
  // M^{1/2} is symmetric, so row form is z_i^T M^{1/2}.
  out.rows.noalias() = z_bar * root;
  for (Eigen::Index i = 0; i < out.rows.rows(); ++i) {
    out.rows.row(i) *= std::sqrt(r_tilde[static_cast<std::size_t>(i)]);
  }
  out.sae_cols = z_bar.cols();
  out.grad_cols = 0;
  return out;
}

inline DesignMatrix sae_design(const StabilizedCoords& coords, const VerifierWeights& w,
                               const CoverageMetric& metric) {
  return sae_design(coords.z_bar, w.r_tilde, metric);
}

struct RayleighReport {
  double lambda1 = 0.0;
  double residual = 0.0;        // ||S_d w - l S_r w|| / ||S_d w||
  double quotient = 0.0;        // w^T S_d w / w^T S_r w
  double quotient_error = 0.0;  // |quotient - lambda1| / lambda1
  bool passed = false;
};

inline constexpr double kRayleighResidualTol = 1e-6;
inline constexpr double kRayleighQuotientTol = 1e-8;

// Checks that w = (Sigma_r + rho I)^{-1/2} u solves the generalized problem
// (Sigma_d + rho I) w = lambda (Sigma_r + rho I) w for a candidate
// eigenpair (lambda, u) of m_raw.
inline RayleighReport rayleigh_residual(const CoverageMetric& metric, const Vector& u,
                                        double lambda) {
  const auto f = metric.dim();
  const SymMatrix id = SymMatrix::Identity(f, f);
  const SymMatrix sd = metric.sigma_d + metric.rho * id;
  const SymMatrix sr = metric.sigma_r + metric.rho * id;
  const Vector w = mat_power(sr, -0.5) * u;
  const Vector sdw = sd * w;
  const Vector srw = sr * w;
  RayleighReport rep;
  rep.lambda1 = lambda;
  rep.residual = (sdw - lambda * srw).norm() / sdw.norm();
  rep.quotient = w.dot(sdw) / w.dot(srw);
  rep.quotient_error = std::abs(rep.quotient - lambda) / std::abs(lambda);
  rep.passed = rep.residual <= kRayleighResidualTol &&
               rep.quotient_error <= kRayleighQuotientTol;
  return rep;
}

inline RayleighReport rayleigh_check(const CoverageMetric& metric) {
  return rayleigh_residual(metric, metric.eig.vectors.col(0), metric.eig.values(0));
}

}  // namespace covsel
