#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "covsel/errors.hpp"

namespace covsel {

enum class SelectionMode { exact_greedy, screened_greedy, exhaustive, baseline };

inline std::string_view to_string(SelectionMode m) {
  switch (m) {
    case SelectionMode::exact_greedy: return "exact_greedy";
    case SelectionMode::screened_greedy: return "screened_greedy";
    case SelectionMode::exhaustive: return "exhaustive";
    case SelectionMode::baseline: return "baseline";
  }
  return "unknown";
}

inline SelectionMode selection_mode_from_string(std::string_view s) {
  if (s == "exact_greedy" || s == "exact") return SelectionMode::exact_greedy;
  if (s == "screened_greedy" || s == "screened") {
    return SelectionMode::screened_greedy;
  }
  if (s == "exhaustive") return SelectionMode::exhaustive;
  if (s == "baseline") return SelectionMode::baseline;
  throw InputError("unknown selection mode '" + std::string(s) + "'");
}

// Ordered subset plus the log-det trace that produced (or scores) it.
// objective = p*log(lambda) + sum(gains) for every producer in this library.
struct SelectionResult {
  std::vector<std::size_t> indices;
  std::vector<double> gains;
  double objective = 0.0;
  SelectionMode mode = SelectionMode::exact_greedy;

  std::size_t size() const { return indices.size(); }
  bool operator==(const SelectionResult&) const = default;
};

}  // namespace covsel
