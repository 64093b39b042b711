#pragma once

// Turns raw nonnegative cluster masses into the stabilized coordinate used by
// the metric: success-axis removal, 99th-percentile row-norm clip and
// per-success-bucket mean subtraction (order configurable).

#include <optional>
#include <span>
#include <vector>

#include "covsel/config.hpp"
#include "covsel/linalg.hpp"
#include "covsel/pool_io.hpp"
#include "covsel/stats.hpp"

namespace covsel {

struct StabilizedCoords {
  RowMatrix z_bar;                     // N x F
  double clip_threshold = 0.0;         // q99 row norm at the clip step
  RowMatrix bucket_means;              // (G+1) x F, zero rows for empty buckets
  std::optional<Vector> success_axis;  // unit F-vector, absent if degenerate
};

inline constexpr double kClipQuantile = 0.99;

// Projects each centered row off the unit regression direction of the
// columns on centered s. Returns the direction, or nullopt when s is constant
// or no column covaries with it (rows are left untouched then).
inline std::optional<Vector> remove_success_axis(RowMatrix& m,
                                                 std::span<const int> s) {
  const auto n = m.rows();
  Vector sc(n);
  double s_mean = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) s_mean += s[static_cast<std::size_t>(i)];
  s_mean /= static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) sc(i) = s[static_cast<std::size_t>(i)] - s_mean;
  const double sxx = sc.squaredNorm();
  if (sxx <= 0.0) return std::nullopt;

  const Eigen::RowVectorXd col_mean = m.colwise().mean();
  m.rowwise() -= col_mean;
  Vector beta = (m.transpose() * sc) / sxx;
  const double norm = beta.norm();
  if (!(norm > 0.0)) {
    m.rowwise() += col_mean;
    return std::nullopt;
  }
  const Vector axis = beta / norm;
  const Vector proj = m * axis;
  m.noalias() -= proj * axis.transpose();
  return axis;
}

// Rescales rows whose Euclidean norm exceeds the q-quantile of row norms.
inline double clip_row_norms(RowMatrix& m, double q = kClipQuantile) {
  std::vector<double> norms(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) norms[static_cast<std::size_t>(i)] = m.row(i).norm();
  const double threshold = percentile(norms, q);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double nrm = norms[static_cast<std::size_t>(i)];
    if (nrm > threshold) m.row(i) *= threshold / nrm;
  }
  return threshold;
}

// Subtracts from every row the mean of its success bucket. Returns the
// (G+1) x F matrix of bucket means (zero for empty buckets).
inline RowMatrix center_buckets(RowMatrix& m, std::span<const int> s, int rollouts) {
  RowMatrix means = RowMatrix::Zero(rollouts + 1, m.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(rollouts) + 1, 0);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const int b = s[static_cast<std::size_t>(i)];
    means.row(b) += m.row(i);
    ++counts[static_cast<std::size_t>(b)];
  }
  for (int b = 0; b <= rollouts; ++b) {
    if (counts[static_cast<std::size_t>(b)] > 0) {
      means.row(b) /= static_cast<double>(counts[static_cast<std::size_t>(b)]);
    }
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    m.row(i) -= means.row(s[static_cast<std::size_t>(i)]);
  }
  return means;
}

inline StabilizedCoords stabilize(const RowMatrix& cluster_mass,
                                  std::span<const int> success_counts, int rollouts,
                                  const StabilizeOrder& order = kDefaultStabilizeOrder) {
  if (static_cast<std::size_t>(cluster_mass.rows()) != success_counts.size()) {
    throw InputError("stabilize: success counts do not match cluster mass rows");
  }
  StabilizedCoords out;
  out.z_bar = cluster_mass;
  for (StabilizeStep step : order) {
    switch (step) {
      case StabilizeStep::remove_success_axis:
        out.success_axis = remove_success_axis(out.z_bar, success_counts);
        break;
      case StabilizeStep::clip_rows:
        out.clip_threshold = clip_row_norms(out.z_bar);
        break;
      case StabilizeStep::center_buckets:
        out.bucket_means = center_buckets(out.z_bar, success_counts, rollouts);
        break;
    }
  }
  return out;
}

inline StabilizedCoords stabilize(const InstancePool& pool,
                                  const StabilizeOrder& order = kDefaultStabilizeOrder) {
  return stabilize(pool.cluster_mass, pool.success_counts, pool.rollouts, order);
}

}  // namespace covsel
