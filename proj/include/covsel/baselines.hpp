#pragma once

// Reference selection strategies on the same design space. Every baseline
// returns exactly k distinct indices; gains/objective report the log-det
// trace of the returned order so all methods are scored on one objective.

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "covsel/clustering.hpp"
#include "covsel/coords.hpp"
#include "covsel/errors.hpp"
#include "covsel/metric.hpp"
#include "covsel/rng.hpp"
#include "covsel/select.hpp"
#include "covsel/weights.hpp"

namespace covsel {

enum class BaselineName {
  random,
  top_d,
  top_r,
  pointwise_dr,
  kmeans_phi,
  facility_phi,
  leverage_phi,
  less_proxy,
};

inline constexpr BaselineName kAllBaselines[] = {
    BaselineName::random,       BaselineName::top_d,        BaselineName::top_r,
    BaselineName::pointwise_dr, BaselineName::kmeans_phi,   BaselineName::facility_phi,
    BaselineName::leverage_phi, BaselineName::less_proxy,
};

inline std::string to_string(BaselineName b) {
  switch (b) {
    case BaselineName::random: return "random";
    case BaselineName::top_d: return "top_d";
    case BaselineName::top_r: return "top_r";
    case BaselineName::pointwise_dr: return "pointwise_dr";
    case BaselineName::kmeans_phi: return "kmeans_phi";
    case BaselineName::facility_phi: return "facility_phi";
    case BaselineName::leverage_phi: return "leverage_phi";
    case BaselineName::less_proxy: return "less_proxy";
  }
  return "?";
}

inline BaselineName baseline_from_string(const std::string& s) {
  for (BaselineName b : kAllBaselines) {
    if (to_string(b) == s) return b;
  }
  throw InputError("unknown baseline '" + s + "'");
}

struct BaselineSpec {
  BaselineName name = BaselineName::random;
  std::uint64_t seed = 0;
  std::map<std::string, double> params;  // kmeans_phi: "iters"

  double param(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }
};

// Everything a baseline may look at, all built from one pool.
struct BaselineInputs {
  const VerifierWeights& weights;
  const DesignMatrix& design;
  const CoverageMetric& metric;
  const StabilizedCoords& coords;
  double lambda = 1.0;
};

namespace detail {

// Indices of the k largest scores, ties by lowest index, in ranked order.
inline std::vector<std::size_t> top_k_by(const std::vector<double>& score, std::size_t k) {
  std::vector<std::size_t> idx(score.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  idx.resize(k);
  return idx;
}

inline RowMatrix unit_rows_copy(const RowMatrix& x, std::vector<char>* zero = nullptr) {
  RowMatrix out = x;
  if (zero) zero->assign(static_cast<std::size_t>(x.rows()), 0);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double nrm = out.row(i).norm();
    if (nrm > 0.0) {
      out.row(i) /= nrm;
    } else if (zero) {
      (*zero)[static_cast<std::size_t>(i)] = 1;
    }
  }
  return out;
}

inline std::vector<std::size_t> random_subset(std::size_t n, std::size_t k, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

inline std::vector<std::size_t> kmeans_pick(const RowMatrix& phi, std::size_t k,
                                            std::uint64_t seed, std::size_t iters) {
  const RowMatrix x = unit_rows_copy(phi);
  KMeansOptions opt;
  opt.clusters = k;
  opt.iters = iters;
  opt.batch = static_cast<std::size_t>(x.rows());
  opt.seed = seed;
  const KMeansResult km = spherical_kmeans(x, opt);
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> picks;
  picks.reserve(k);
  std::vector<double> sim(n);
  for (Eigen::Index c = 0; c < km.centers.rows(); ++c) {
    for (std::size_t i = 0; i < n; ++i) sim[i] = km.centers.row(c).dot(x.row(static_cast<Eigen::Index>(i)));
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && (best == n || sim[i] > sim[best])) best = i;
    }
    taken[best] = 1;
    picks.push_back(best);
  }
  return picks;
}

// Lazy greedy on F(S) = sum_j max(0, max_{i in S} cos(phi_i, phi_j)).
inline std::vector<std::size_t> facility_pick(const RowMatrix& phi, std::size_t k,
                                              double* objective = nullptr) {
  std::vector<char> zero;
  const RowMatrix x = unit_rows_copy(phi, &zero);
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<double> cover(n, 0.0);
  Vector sims(static_cast<Eigen::Index>(n));
  auto gain_of = [&](std::size_t i) {
    if (zero[i]) return 0.0;
    sims.noalias() = x * x.row(static_cast<Eigen::Index>(i)).transpose();
    double g = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      g += std::max(0.0, sims(static_cast<Eigen::Index>(j)) - cover[j]);
    }
    return g;
  };
  // Max-heap on (bound, -index) so equal bounds pop lowest index first.
  using Entry = std::pair<double, long long>;
  std::priority_queue<Entry> heap;
  for (std::size_t i = 0; i < n; ++i) {
    // Initial bound: zero rows are never picked before a nonzero row.
    heap.emplace(zero[i] ? -1.0 : static_cast<double>(n) + 1.0, -static_cast<long long>(i));
  }
  std::vector<std::size_t> picks;
  std::vector<std::size_t> stamp(n, static_cast<std::size_t>(-1));
  picks.reserve(k);
  double total = 0.0;
  while (picks.size() < k) {
    auto [bound, neg] = heap.top();
    heap.pop();
    const auto i = static_cast<std::size_t>(-neg);
    if (stamp[i] == picks.size()) {
      picks.push_back(i);
      total += std::max(bound, 0.0);
      if (!zero[i]) {
        sims.noalias() = x * x.row(static_cast<Eigen::Index>(i)).transpose();
        for (std::size_t j = 0; j < n; ++j) {
          cover[j] = std::max(cover[j], sims(static_cast<Eigen::Index>(j)));
        }
      }
      continue;
    }
    stamp[i] = picks.size();
    heap.emplace(zero[i] ? -1.0 : gain_of(i), neg);
  }
  if (objective) *objective = std::accumulate(cover.begin(), cover.end(), 0.0);
  return picks;
}

// Diagonal of the hat matrix Phi (Phi^T Phi)^+ Phi^T via a column-pivoted
// thin QR.
inline std::vector<double> row_leverage(const RowMatrix& phi) {
  const Matrix a = phi;
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  const auto rank = qr.rank();
  Matrix q = Matrix::Identity(a.rows(), rank);
  q = qr.householderQ() * q;
  std::vector<double> h(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) h[static_cast<std::size_t>(i)] = q.row(i).squaredNorm();
  return h;
}

}  // namespace detail

inline double facility_objective(const RowMatrix& phi, std::span<const std::size_t> picks) {
  const RowMatrix x = detail::unit_rows_copy(phi);
  std::vector<double> cover(static_cast<std::size_t>(x.rows()), 0.0);
  for (std::size_t i : picks) {
    const Vector s = x * x.row(static_cast<Eigen::Index>(i)).transpose();
    for (std::size_t j = 0; j < cover.size(); ++j) {
      cover[j] = std::max(cover[j], s(static_cast<Eigen::Index>(j)));
    }
  }
  return std::accumulate(cover.begin(), cover.end(), 0.0);
}

inline SelectionResult run_baseline(const BaselineSpec& spec, const BaselineInputs& in,
                                    std::size_t k) {
  const auto n = static_cast<std::size_t>(in.design.n());
  if (k == 0 || k > n) throw InputError("run_baseline: k must be in [1, N]");
  const auto& w = in.weights;
  std::vector<std::size_t> picks;
  switch (spec.name) {
    case BaselineName::random:
      picks = detail::random_subset(n, k, spec.seed);
      break;
    case BaselineName::top_d:
      picks = detail::top_k_by(w.d_tilde, k);
      break;
    case BaselineName::top_r:
      picks = detail::top_k_by(w.r_tilde, k);
      break;
    case BaselineName::pointwise_dr: {
      std::vector<double> dr(n);
      for (std::size_t i = 0; i < n; ++i) dr[i] = w.d_tilde[i] * w.r_tilde[i];
      picks = detail::top_k_by(dr, k);
      break;
    }
    case BaselineName::kmeans_phi:
      picks = detail::kmeans_pick(in.design.rows, k, spec.seed,
                                  static_cast<std::size_t>(spec.param("iters", 20)));
      break;
    case BaselineName::facility_phi:
      picks = detail::facility_pick(in.design.rows, k);
      break;
    case BaselineName::leverage_phi:
      picks = detail::top_k_by(detail::row_leverage(in.design.rows), k);
      break;
    case BaselineName::less_proxy: {
      // Eigenvector sign is arbitrary, so alignment is scored by |cos|.
      const Vector u1 = in.metric.eig.vectors.col(0);
      std::vector<double> cosv(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto z = in.coords.z_bar.row(static_cast<Eigen::Index>(i));
        const double nrm = z.norm();
        if (nrm > 0.0) cosv[i] = std::abs(z.dot(u1)) / nrm;
      }
      picks = detail::top_k_by(cosv, k);
      break;
    }
  }
  SelectionResult r;
  r.mode = SelectionMode::baseline;
  r.indices = std::move(picks);
  r.gains = sequential_gains(in.design, r.indices, in.lambda);
  r.objective = empty_objective(in.design.dim(), in.lambda) +
                std::accumulate(r.gains.begin(), r.gains.end(), 0.0);
  return r;
}

inline double jaccard(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::set<std::size_t> sa(a.begin(), a.end());
  std::set<std::size_t> sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (auto x : sa) inter += sb.count(x);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

inline double jaccard(const SelectionResult& a, const SelectionResult& b) {
  return jaccard(a.indices, b.indices);
}

}  // namespace covsel
