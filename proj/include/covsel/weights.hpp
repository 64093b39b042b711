#pragma once

// Beta(1,1)-posterior weights from verifier success counts.
//
// With s successes out of G rollouts the posterior on the success rate is
// Beta(s+1, G-s+1). Difficulty is the posterior mean of -log P and
// trainability the posterior mean of P(1-P):
//   d = psi(G+2) - psi(s+1)
//   r = (s+1)(G-s+1) / ((G+2)(G+3))

#include <cmath>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

#include "covsel/errors.hpp"

namespace covsel {

// Digamma for x > 0: shift up to x >= 6 with psi(x) = psi(x+1) - 1/x, then
// the asymptotic series through x^-12.
inline double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    std::ostringstream os;
    os << "digamma: argument " << x << " is not a positive finite number";
    throw DomainError(os.str());
  }
  double acc = 0.0;
  while (x < 6.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number coefficients B_{2k}/(2k).
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 - inv2 * (691.0 / 32760))))));
  return acc + std::log(x) - 0.5 * inv - series;
}

struct VerifierWeights {
  std::vector<double> d;        // difficulty
  std::vector<double> r;        // trainability
  std::vector<double> d_tilde;  // d / mean(d)
  std::vector<double> r_tilde;  // r / mean(r)
};

inline double difficulty_weight(int s, int g) {
  return digamma(g + 2.0) - digamma(s + 1.0);
}

inline double trainability_weight(int s, int g) {
  return static_cast<double>(s + 1) * static_cast<double>(g - s + 1) /
         (static_cast<double>(g + 2) * static_cast<double>(g + 3));
}

namespace detail {

inline std::vector<double> mean_one(const std::vector<double>& v) {
  const double m =
      std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / m;
  return out;
}

}  // namespace detail

inline VerifierWeights compute_weights(std::span<const int> s, int g) {
  if (g <= 0) throw InputError("compute_weights: rollout count must be positive");
  if (s.empty()) throw InputError("compute_weights: no instances");
  VerifierWeights w;
  w.d.reserve(s.size());
  w.r.reserve(s.size());
  const double psi_top = digamma(g + 2.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 0 || s[i] > g) {
      std::ostringstream os;
      os << "compute_weights: success count " << s[i] << " outside [0, " << g
         << "] at row " << i;
      throw InputError(os.str());
    }
    w.d.push_back(psi_top - digamma(s[i] + 1.0));
    w.r.push_back(trainability_weight(s[i], g));
  }
  w.d_tilde = detail::mean_one(w.d);
  w.r_tilde = detail::mean_one(w.r);
  return w;
}

}  // namespace covsel
