#pragma once

// Pipeline configuration and its key=value file form. Any key absent from a
// config file keeps its default.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "covsel/errors.hpp"
#include "covsel/pool_io.hpp"

namespace covsel {

enum class StabilizeStep { remove_success_axis, clip_rows, center_buckets };

using StabilizeOrder = std::array<StabilizeStep, 3>;

inline constexpr StabilizeOrder kDefaultStabilizeOrder = {
    StabilizeStep::remove_success_axis, StabilizeStep::clip_rows,
    StabilizeStep::center_buckets};

struct PipelineConfig {
  double rho = 0.1;       // metric ridge
  double eta = 0.5;       // spectral shrinkage exponent
  double c = 2.0;         // eigenvalue clip bound
  double rho_g = 1e-3;    // gradient residualization ridge
  double omega = 1.0;     // gradient block scale
  double alpha = 1.0;     // inverse-norm exponent
  double epsilon = 1e-3;  // gradient-norm floor
  double lambda = 1.0;    // log-det regularizer
  std::size_t budget_k = 0;    // 0 = derive from budget_frac
  double budget_frac = 0.2;
  std::size_t queue_q = 1024;
  std::size_t refresh_r = 256;
  std::size_t reinvert_every = 512;
  std::uint64_t seed = 0;
  StabilizeOrder stabilize_order = kDefaultStabilizeOrder;
  std::size_t subspace_k = 10;  // leading subspace size for shuffle audits
  std::size_t top_m = 25;       // difficulty localization set size

  // Budget for a pool of n instances.
  std::size_t resolve_budget(std::size_t n) const {
    if (budget_k > 0) return budget_k;
    const auto k = static_cast<std::size_t>(std::llround(budget_frac * static_cast<double>(n)));
    return k == 0 ? 1 : k;
  }

  // Throws ConfigError on any violated invariant; n_instances = 0 skips the
  // budget-vs-pool check.
  void validate(std::size_t n_instances = 0) const {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (!(rho > 0)) fail("rho must be > 0");
    if (!(c >= 1)) fail("c must be >= 1");
    if (!(rho_g > 0)) fail("rho_g must be > 0");
    if (!(omega >= 0)) fail("omega must be >= 0");
    if (!(alpha >= 0)) fail("alpha must be >= 0");
    if (!(epsilon > 0)) fail("epsilon must be > 0");
    if (!(lambda > 0)) fail("lambda must be > 0");
    if (!std::isfinite(eta)) fail("eta must be finite");
    if (budget_k == 0 && !(budget_frac > 0 && budget_frac <= 1)) {
      fail("budget_frac must be in (0, 1]");
    }
    if (queue_q < 1) fail("queue_q must be >= 1");
    if (refresh_r < 1) fail("refresh_r must be >= 1");
    if (reinvert_every < 1) fail("reinvert_every must be >= 1");
    if (n_instances > 0 && resolve_budget(n_instances) > n_instances) {
      fail("budget exceeds pool size");
    }
  }
};

inline std::string to_string(StabilizeStep s) {
  switch (s) {
    case StabilizeStep::remove_success_axis: return "remove";
    case StabilizeStep::clip_rows: return "clip";
    case StabilizeStep::center_buckets: return "center";
  }
  return "?";
}

inline StabilizeOrder parse_stabilize_order(const std::string& text) {
  const auto parts = detail::split(text, ',');
  if (parts.size() != 3) throw ConfigError("stabilize_order needs three steps");
  StabilizeOrder order{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (parts[i] == "remove") order[i] = StabilizeStep::remove_success_axis;
    else if (parts[i] == "clip") order[i] = StabilizeStep::clip_rows;
    else if (parts[i] == "center") order[i] = StabilizeStep::center_buckets;
    else throw ConfigError("stabilize_order: unknown step '" + parts[i] + "'");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = i + 1; j < 3; ++j) {
      if (order[i] == order[j]) throw ConfigError("stabilize_order repeats a step");
    }
  }
  return order;
}

// Applies one key=value pair; unknown keys are an error.
inline void set_config_value(PipelineConfig& cfg, const std::string& key,
                             const std::string& value) {
  auto num = [&] { return detail::parse_double(value, key); };
  auto count = [&] {
    const long long v = detail::parse_int(value, key);
    if (v < 0) throw ConfigError("config: " + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  if (key == "rho") cfg.rho = num();
  else if (key == "eta") cfg.eta = num();
  else if (key == "c") cfg.c = num();
  else if (key == "rho_g") cfg.rho_g = num();
  else if (key == "omega") cfg.omega = num();
  else if (key == "alpha") cfg.alpha = num();
  else if (key == "epsilon") cfg.epsilon = num();
  else if (key == "lambda") cfg.lambda = num();
  else if (key == "budget_k") cfg.budget_k = count();
  else if (key == "budget_frac") cfg.budget_frac = num();
  else if (key == "queue_q") cfg.queue_q = count();
  else if (key == "refresh_r") cfg.refresh_r = count();
  else if (key == "reinvert_every") cfg.reinvert_every = count();
  else if (key == "seed") cfg.seed = std::stoull(value);
  else if (key == "stabilize_order") cfg.stabilize_order = parse_stabilize_order(value);
  else if (key == "subspace_k") cfg.subspace_k = count();
  else if (key == "top_m") cfg.top_m = count();
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  PipelineConfig cfg;
  for (const auto& [k, v] : detail::read_key_values(path, '=')) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

inline void save_config(const PipelineConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "rho=" << detail::format_double(cfg.rho) << '\n'
      << "eta=" << detail::format_double(cfg.eta) << '\n'
      << "c=" << detail::format_double(cfg.c) << '\n'
      << "rho_g=" << detail::format_double(cfg.rho_g) << '\n'
      << "omega=" << detail::format_double(cfg.omega) << '\n'
      << "alpha=" << detail::format_double(cfg.alpha) << '\n'
      << "epsilon=" << detail::format_double(cfg.epsilon) << '\n'
      << "lambda=" << detail::format_double(cfg.lambda) << '\n'
      << "budget_k=" << cfg.budget_k << '\n'
      << "budget_frac=" << detail::format_double(cfg.budget_frac) << '\n'
      << "queue_q=" << cfg.queue_q << '\n'
      << "refresh_r=" << cfg.refresh_r << '\n'
      << "reinvert_every=" << cfg.reinvert_every << '\n'
      << "seed=" << cfg.seed << '\n'
      << "stabilize_order=" << to_string(cfg.stabilize_order[0]) << ','
      << to_string(cfg.stabilize_order[1]) << ',' << to_string(cfg.stabilize_order[2])
      << '\n'
      << "subspace_k=" << cfg.subspace_k << '\n'
      << "top_m=" << cfg.top_m << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace covsel
