#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "covsel/covsel.hpp"

namespace testing_support {

using namespace covsel;

inline RowMatrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  CounterRng rng(seed);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline RowMatrix nonneg(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  CounterRng rng(seed);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform() < 0.3 ? rng.uniform() * 2 : 0.0;
  return m;
}

inline SymMatrix random_spd(Eigen::Index n, std::uint64_t seed) {
  const RowMatrix a = gaussian(n, n, seed);
  SymMatrix s = a.transpose() * a;
  s.diagonal().array() += 0.5;
  return s;
}

inline std::vector<int> random_counts(std::size_t n, int g, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<int> s(n);
  for (auto& v : s) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(g) + 1));
  return s;
}

inline DesignMatrix design_of(RowMatrix rows) {
  DesignMatrix d;
  d.sae_cols = rows.cols();
  d.rows = std::move(rows);
  return d;
}

inline InstancePool random_pool(std::size_t n, std::size_t f, int g, std::uint64_t seed) {
  InstancePool p;
  p.cluster_mass = nonneg(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f), seed);
  p.success_counts = random_counts(n, g, seed + 1);
  p.rollouts = g;
  for (std::size_t i = 0; i < n; ++i) p.instance_ids.push_back("id" + std::to_string(i));
  return p;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("covsel_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
