#pragma once

// Greedy D-optimal subset selection on design rows:
//
//   J(S) = log det(lambda I + sum_{i in S} phi_i phi_i^T)
//   Delta_i(S) = log(1 + phi_i^T A_S^{-1} phi_i)
//
// The solver keeps A^{-1} under Sherman-Morrison updates and a per-candidate
// score phi_i^T A^{-1} phi_i that is decremented by (phi_i^T w)^2 after each
// pick, w = A^{-1} phi_j / sqrt(1 + phi_j^T A^{-1} phi_j). The screened variant
// restricts the argmax to a queue of the top-Q candidates, rebuilt every R
// picks; out-of-queue scores are brought up to date in one batched product at
// the rebuild.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

#include "covsel/errors.hpp"
#include "covsel/linalg.hpp"
#include "covsel/metric.hpp"
#include "covsel/result.hpp"

namespace covsel {

inline constexpr double kDenominatorGuard = 1e-12;
inline constexpr std::size_t kDefaultReinvertEvery = 512;
inline constexpr double kExhaustiveBudget = 2e6;

struct GreedyOptions {
  std::size_t k = 1;
  double lambda = 1.0;
  std::size_t queue_q = std::numeric_limits<std::size_t>::max();
  std::size_t refresh_r = std::numeric_limits<std::size_t>::max();
  std::size_t reinvert_every = kDefaultReinvertEvery;
};

// Owns A^{-1} for one selection run. Not shareable between threads while
// picks are being added.
class LogDetState {
 public:
  LogDetState(const RowMatrix& phi, double lambda)
      : phi_(phi), lambda_(lambda), inv_(Matrix::Identity(phi.cols(), phi.cols()) / lambda) {
    if (!(lambda > 0)) throw InputError("log-det state: lambda must be > 0");
  }

  Eigen::Index dim() const { return phi_.cols(); }
  double lambda() const { return lambda_; }
  const std::vector<std::size_t>& selected() const { return selected_; }

  // Current phi_i^T A^{-1} phi_i, evaluated directly.
  double leverage(std::size_t i) const {
    const auto row = phi_.row(static_cast<Eigen::Index>(i));
    const Vector u = inv_.selfadjointView<Eigen::Lower>() * row.transpose();
    return row.dot(u);
  }

  double gain(std::size_t i) const { return std::log1p(leverage(i)); }

  // Adds instance i. Returns its marginal gain; the scaled update direction
  // w = A^{-1} phi_i / sqrt(1 + t) is written to *direction when given.
  double add(std::size_t i, Vector* direction = nullptr) {
    const auto row = phi_.row(static_cast<Eigen::Index>(i));
    Vector u = inv_.selfadjointView<Eigen::Lower>() * row.transpose();
    const double t = row.dot(u);
    const double denom = 1.0 + t;
    if (!(denom >= kDenominatorGuard)) {
      std::ostringstream os;
      os << "log-det state: Sherman-Morrison denominator " << denom
         << " while adding instance " << i << "; A^{-1} is corrupted";
      throw NumericalError(os.str());
    }
    inv_.selfadjointView<Eigen::Lower>().rankUpdate(u, -1.0 / denom);
    selected_.push_back(i);
    if (direction) *direction = u / std::sqrt(denom);
    return std::log1p(t);
  }

  // lambda I + sum_{selected} phi phi^T, built from scratch.
  Matrix gram() const {
    const auto p = phi_.cols();
    Matrix a = Matrix::Identity(p, p) * lambda_;
    if (!selected_.empty()) {
      RowMatrix rows(static_cast<Eigen::Index>(selected_.size()), p);
      for (std::size_t r = 0; r < selected_.size(); ++r) {
        rows.row(static_cast<Eigen::Index>(r)) = phi_.row(static_cast<Eigen::Index>(selected_[r]));
      }
      a.selfadjointView<Eigen::Lower>().rankUpdate(rows.transpose());
    }
    a.triangularView<Eigen::StrictlyUpper>() = a.transpose();
    return a;
  }

  // Replaces the running inverse with a fresh Cholesky inverse of gram().
  void reinvert() { inv_ = inverse_spd(gram()); }

  Matrix inverse() const {
    Matrix full = inv_;
    full.triangularView<Eigen::StrictlyUpper>() = full.transpose();
    return full;
  }

  // ||A^{-1} A - I||_F against a freshly built A.
  double inverse_residual() const {
    const auto p = phi_.cols();
    return (inverse() * gram() - Matrix::Identity(p, p)).norm();
  }

 private:
  const RowMatrix& phi_;
  double lambda_;
  Matrix inv_;  // lower triangle is authoritative
  std::vector<std::size_t> selected_;
};

inline double empty_objective(Eigen::Index p, double lambda) {
  return static_cast<double>(p) * std::log(lambda);
}

namespace detail {

inline void check_budget(const DesignMatrix& design, std::size_t k, double lambda) {
  if (k == 0) throw InputError("selection: budget k must be >= 1");
  if (k > static_cast<std::size_t>(design.n())) {
    std::ostringstream os;
    os << "selection: budget k=" << k << " exceeds pool size " << design.n();
    throw InputError(os.str());
  }
  if (!(lambda > 0)) throw InputError("selection: lambda must be > 0");
}

inline std::size_t argmax_candidate(const std::vector<std::size_t>& cands,
                                     const std::vector<double>& score) {
  std::size_t best = cands.front();
  double best_score = score[best];
  for (std::size_t c : cands) {
    // cands is ascending, so strict > keeps the lowest index on ties.
    if (score[c] > best_score) {
      best = c;
      best_score = score[c];
    }
  }
  return best;
}

}  // namespace detail

// Shared driver. A queue that covers every unselected instance is never
// rebuilt, so queue_q >= N reproduces exact greedy bit for bit.
inline SelectionResult run_greedy(const DesignMatrix& design, const GreedyOptions& opt,
                                  SelectionMode mode) {
  detail::check_budget(design, opt.k, opt.lambda);
  if (opt.queue_q == 0) throw InputError("selection: queue_q must be >= 1");
  if (opt.refresh_r == 0) throw InputError("selection: refresh_r must be >= 1");
  if (opt.reinvert_every == 0) throw InputError("selection: reinvert_every must be >= 1");

  const RowMatrix& phi = design.rows;
  const auto n = static_cast<std::size_t>(phi.rows());
  const auto p = phi.cols();
  LogDetState state(phi, opt.lambda);

  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    score[i] = phi.row(static_cast<Eigen::Index>(i)).squaredNorm() / opt.lambda;
  }
  std::vector<char> taken(n, 0);
  std::vector<char> queued(n, 0);
  std::vector<std::size_t> queue;
  bool full_queue = opt.queue_q >= n;
  if (full_queue) {
    queue.resize(n);
    std::iota(queue.begin(), queue.end(), std::size_t{0});
    std::fill(queued.begin(), queued.end(), 1);
  }

  // Update directions since the last rebuild, one column per pick.
  Matrix pending(p, 0);
  std::size_t pending_cols = 0;
  if (!full_queue) pending.resize(p, static_cast<Eigen::Index>(std::min(opt.refresh_r, opt.k)));

  auto rebuild_queue = [&] {
    // Bring out-of-queue scores up to date.
    if (pending_cols > 0) {
      const auto w = pending.leftCols(static_cast<Eigen::Index>(pending_cols));
      constexpr std::size_t kBlock = 1024;
      std::vector<std::size_t> stale;
      stale.reserve(kBlock);
      auto flush = [&] {
        if (stale.empty()) return;
        RowMatrix block(static_cast<Eigen::Index>(stale.size()), p);
        for (std::size_t r = 0; r < stale.size(); ++r) {
          block.row(static_cast<Eigen::Index>(r)) = phi.row(static_cast<Eigen::Index>(stale[r]));
        }
        const RowMatrix proj = block * w;
        for (std::size_t r = 0; r < stale.size(); ++r) {
          score[stale[r]] -= proj.row(static_cast<Eigen::Index>(r)).squaredNorm();
        }
        stale.clear();
      };
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i] || queued[i]) continue;
        stale.push_back(i);
        if (stale.size() == kBlock) flush();
      }
      flush();
      pending_cols = 0;
    }
    std::vector<std::size_t> free;
    free.reserve(n - state.selected().size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) free.push_back(i);
    }
    const std::size_t q = std::min(opt.queue_q, free.size());
    auto better = [&](std::size_t a, std::size_t b) {
      return score[a] > score[b] || (score[a] == score[b] && a < b);
    };
    std::nth_element(free.begin(), free.begin() + static_cast<std::ptrdiff_t>(q) - 1, free.end(),
                     better);
    queue.assign(free.begin(), free.begin() + static_cast<std::ptrdiff_t>(q));
    std::sort(queue.begin(), queue.end());
    std::fill(queued.begin(), queued.end(), 0);
    for (std::size_t c : queue) queued[c] = 1;
  };

  SelectionResult result;
  result.mode = mode;
  result.indices.reserve(opt.k);
  result.gains.reserve(opt.k);
  Vector w(p);
  for (std::size_t step = 0; step < opt.k; ++step) {
    if (!full_queue && step % opt.refresh_r == 0) rebuild_queue();
    if (queue.empty()) rebuild_queue();

    const std::size_t pick = detail::argmax_candidate(queue, score);
    const double gain = state.add(pick, &w);
    taken[pick] = 1;
    queued[pick] = 0;
    queue.erase(std::lower_bound(queue.begin(), queue.end(), pick));
    result.indices.push_back(pick);
    result.gains.push_back(gain);

    for (std::size_t c : queue) {
      const double dot = phi.row(static_cast<Eigen::Index>(c)).dot(w);
      score[c] -= dot * dot;
    }
    if (!full_queue) {
      if (pending_cols == static_cast<std::size_t>(pending.cols())) {
        pending.conservativeResize(Eigen::NoChange, pending.cols() * 2 + 1);
      }
      pending.col(static_cast<Eigen::Index>(pending_cols++)) = w;
    }
    if ((step + 1) % opt.reinvert_every == 0 && step + 1 < opt.k) state.reinvert();
  }
  result.objective = empty_objective(p, opt.lambda);
  for (double g : result.gains) result.objective += g;
  return result;
}

inline SelectionResult greedy_exact(const DesignMatrix& design, std::size_t k, double lambda,
                                    std::size_t reinvert_every = kDefaultReinvertEvery) {
  GreedyOptions opt;
  opt.k = k;
  opt.lambda = lambda;
  opt.reinvert_every = reinvert_every;
  return run_greedy(design, opt, SelectionMode::exact_greedy);
}

inline SelectionResult greedy_screened(const DesignMatrix& design, std::size_t k, double lambda,
                                       std::size_t queue_q, std::size_t refresh_r,
                                       std::size_t reinvert_every = kDefaultReinvertEvery) {
  GreedyOptions opt;
  opt.k = k;
  opt.lambda = lambda;
  opt.queue_q = queue_q;
  opt.refresh_r = refresh_r;
  opt.reinvert_every = reinvert_every;
  if (queue_q == 0) throw InputError("selection: queue_q must be >= 1");
  if (refresh_r == 0) throw InputError("selection: refresh_r must be >= 1");
  return run_greedy(design, opt, SelectionMode::screened_greedy);
}

// J(S) by direct Cholesky of the p x p Gram matrix.
inline double score_subset(const DesignMatrix& design, std::span<const std::size_t> indices,
                           double lambda) {
  if (!(lambda > 0)) throw InputError("score_subset: lambda must be > 0");
  const auto n = static_cast<std::size_t>(design.n());
  const auto p = design.dim();
  std::vector<char> seen(n, 0);
  RowMatrix rows(static_cast<Eigen::Index>(indices.size()), p);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= n) throw InputError("score_subset: index out of range");
    if (seen[i]) {
      std::ostringstream os;
      os << "score_subset: duplicate index " << i;
      throw InputError(os.str());
    }
    seen[i] = 1;
    rows.row(static_cast<Eigen::Index>(r)) = design.rows.row(static_cast<Eigen::Index>(i));
  }
  Matrix a = Matrix::Identity(p, p) * lambda;
  if (!indices.empty()) a.selfadjointView<Eigen::Lower>().rankUpdate(rows.transpose());
  a.triangularView<Eigen::StrictlyUpper>() = a.transpose();
  return log_det_spd(a);
}

// Marginal gains of adding indices in the given order.
inline std::vector<double> sequential_gains(const DesignMatrix& design,
                                            std::span<const std::size_t> indices,
                                            double lambda) {
  LogDetState state(design.rows, lambda);
  std::vector<double> gains;
  gains.reserve(indices.size());
  for (std::size_t i : indices) gains.push_back(state.add(i));
  return gains;
}

inline double binomial_coefficient(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double c = 1.0;
  for (std::size_t j = 1; j <= k; ++j) {
    c = c * static_cast<double>(n - k + j) / static_cast<double>(j);
  }
  return std::round(c);
}

// Exact maximizer of J over all size-k subsets (lexicographically first on
// ties). Each subset is scored through the k x k dual form
// J(S) = p log(lambda) + log det(I_k + Phi_S Phi_S^T / lambda).
inline SelectionResult exhaustive_opt(const DesignMatrix& design, std::size_t k, double lambda) {
  detail::check_budget(design, k, lambda);
  const auto n = static_cast<std::size_t>(design.n());
  const double count = binomial_coefficient(n, k);
  if (count > kExhaustiveBudget) {
    std::ostringstream os;
    os << "exhaustive_opt: C(" << n << "," << k << ") = " << count
       << " subsets exceeds the budget of " << kExhaustiveBudget
       << "; shrink N or k";
    throw InputError(os.str());
  }
  const RowMatrix& phi = design.rows;
  // Cache the scaled kernel when it is small; otherwise form entries on demand.
  const bool cached = n <= 4096;
  const Matrix kernel = cached ? Matrix(phi * phi.transpose() / lambda) : Matrix();
  auto entry = [&](std::size_t a, std::size_t b) {
    if (cached) return kernel(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    return phi.row(static_cast<Eigen::Index>(a)).dot(phi.row(static_cast<Eigen::Index>(b))) /
           lambda;
  };

  std::vector<std::size_t> comb(k);
  std::iota(comb.begin(), comb.end(), std::size_t{0});
  std::vector<std::size_t> best = comb;
  double best_val = -std::numeric_limits<double>::infinity();
  const auto kk = static_cast<Eigen::Index>(k);
  Matrix sub(kk, kk);
  for (;;) {
    for (Eigen::Index a = 0; a < kk; ++a) {
      for (Eigen::Index b = 0; b <= a; ++b) {
        sub(a, b) = entry(comb[static_cast<std::size_t>(a)], comb[static_cast<std::size_t>(b)]);
      }
      sub(a, a) += 1.0;
    }
    Eigen::LLT<Matrix, Eigen::Lower> llt(sub);
    double val = 0.0;
    for (Eigen::Index a = 0; a < kk; ++a) val += std::log(llt.matrixLLT()(a, a));
    val *= 2.0;
    if (val > best_val) {
      best_val = val;
      best = comb;
    }
    // Next combination in lexicographic order.
    std::size_t pos = k;
    while (pos > 0 && comb[pos - 1] == n - k + pos - 1) --pos;
    if (pos == 0) break;
    ++comb[pos - 1];
    for (std::size_t j = pos; j < k; ++j) comb[j] = comb[j - 1] + 1;
  }

  SelectionResult result;
  result.mode = SelectionMode::exhaustive;
  result.indices = best;
  result.gains = sequential_gains(design, best, lambda);
  result.objective = empty_objective(design.dim(), lambda) + best_val;
  return result;
}

// Variance of the per-step marginal gains of a selection.
inline double gain_variance(const SelectionResult& r) {
  if (r.gains.size() < 2) return 0.0;
  const double m = std::accumulate(r.gains.begin(), r.gains.end(), 0.0) /
                   static_cast<double>(r.gains.size());
  double acc = 0.0;
  for (double g : r.gains) acc += (g - m) * (g - m);
  return acc / static_cast<double>(r.gains.size() - 1);
}

}  // namespace covsel
