#pragma once

// On-disk data model for instance pools, selections and pipeline configs.
//
// Pool manifest: "key: value" lines naming sibling files (paths resolve
// relative to the manifest's directory).
//   n_instances, n_clusters, rollouts,
//   cluster_mass_file, success_counts_file, ids_file,
//   gradients_file + gradients_dim        (optional),
//   surface_features_file + surface_feature_names (optional, comma list).
//
// Matrix file: int64 rows, int64 cols (little-endian), then rows*cols
// little-endian float32 values, row-major.
//
// Selection file: "# mode=<mode>", header "rank,instance_id,marginal_gain",
// one row per pick in selection order (rank starts at 1), footer
// "objective=<float>".

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "covsel/errors.hpp"
#include "covsel/linalg.hpp"
#include "covsel/result.hpp"

namespace covsel {

struct InstancePool {
  RowMatrix cluster_mass;             // N x F, nonnegative
  std::vector<int> success_counts;    // N, each in [0, rollouts]
  int rollouts = 0;                   // G
  std::optional<RowMatrix> gradients; // N x p_g
  std::optional<RowMatrix> surface_features;  // N x S
  std::vector<std::string> surface_feature_names;
  std::vector<std::string> instance_ids;

  std::size_t size() const { return static_cast<std::size_t>(cluster_mass.rows()); }
  std::size_t n_clusters() const { return static_cast<std::size_t>(cluster_mass.cols()); }
};

class PoolError : public InputError {
 public:
  enum class Kind {
    dimension_mismatch,
    out_of_range,
    non_finite,
    negative_mass,
    duplicate_id,
    missing_key,
    parse,
  };

  PoolError(Kind kind, std::optional<std::size_t> row, const std::string& what)
      : InputError(what), kind_(kind), row_(row) {}

  Kind kind() const noexcept { return kind_; }
  std::optional<std::size_t> row() const noexcept { return row_; }

 private:
  Kind kind_;
  std::optional<std::size_t> row_;
};

namespace detail {

inline std::string row_msg(const char* what, std::size_t row) {
  std::ostringstream os;
  os << what << " at row " << row;
  return os.str();
}

}  // namespace detail

// Checks every pool invariant; throws PoolError naming the first bad row.
inline void validate_pool(const InstancePool& pool) {
  using K = PoolError::Kind;
  const auto n = static_cast<std::size_t>(pool.cluster_mass.rows());
  if (n == 0 || pool.cluster_mass.cols() == 0) {
    throw PoolError(K::dimension_mismatch, std::nullopt,
                    "pool: cluster mass matrix is empty");
  }
  if (pool.rollouts <= 0) {
    throw PoolError(K::out_of_range, std::nullopt, "pool: rollouts must be positive");
  }
  if (pool.success_counts.size() != n) {
    throw PoolError(K::dimension_mismatch, std::nullopt,
                    "pool: success count length differs from cluster mass rows");
  }
  if (pool.instance_ids.size() != n) {
    throw PoolError(K::dimension_mismatch, std::nullopt,
                    "pool: id count differs from cluster mass rows");
  }
  if (pool.gradients && static_cast<std::size_t>(pool.gradients->rows()) != n) {
    throw PoolError(K::dimension_mismatch, std::nullopt,
                    "pool: gradient rows differ from cluster mass rows");
  }
  if (pool.surface_features) {
    if (static_cast<std::size_t>(pool.surface_features->rows()) != n) {
      throw PoolError(K::dimension_mismatch, std::nullopt,
                      "pool: surface feature rows differ from cluster mass rows");
    }
    if (pool.surface_feature_names.size() !=
        static_cast<std::size_t>(pool.surface_features->cols())) {
      throw PoolError(K::dimension_mismatch, std::nullopt,
                      "pool: surface feature names do not match column count");
    }
  }
  std::unordered_map<std::string, std::size_t> seen;
  seen.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = pool.cluster_mass.row(static_cast<Eigen::Index>(i));
    if (!row.allFinite()) {
      throw PoolError(K::non_finite, i, detail::row_msg("pool: non-finite cluster mass", i));
    }
    if ((row.array() < 0.0).any()) {
      throw PoolError(K::negative_mass, i, detail::row_msg("pool: negative cluster mass", i));
    }
    const int s = pool.success_counts[i];
    if (s < 0 || s > pool.rollouts) {
      std::ostringstream os;
      os << "pool: success count " << s << " outside [0, " << pool.rollouts
         << "] at row " << i;
      throw PoolError(K::out_of_range, i, os.str());
    }
    if (pool.gradients &&
        !pool.gradients->row(static_cast<Eigen::Index>(i)).allFinite()) {
      throw PoolError(K::non_finite, i, detail::row_msg("pool: non-finite gradient", i));
    }
    if (pool.surface_features &&
        !pool.surface_features->row(static_cast<Eigen::Index>(i)).allFinite()) {
      throw PoolError(K::non_finite, i,
                      detail::row_msg("pool: non-finite surface feature", i));
    }
    auto [it, inserted] = seen.emplace(pool.instance_ids[i], i);
    if (!inserted) {
      std::ostringstream os;
      os << "pool: duplicate instance id '" << pool.instance_ids[i] << "' at row "
         << i << " (first seen at row " << it->second << ")";
      throw PoolError(K::duplicate_id, i, os.str());
    }
  }
}

// ---------------------------------------------------------------------------
// Matrix files

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

}  // namespace detail

inline void write_matrix(const std::filesystem::path& path, const RowMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::int64_t dims[2] = {detail::to_little<std::int64_t>(m.rows()),
                                detail::to_little<std::int64_t>(m.cols())};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  std::vector<float> buf(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      buf[static_cast<std::size_t>(j)] =
          detail::to_little(static_cast<float>(m(i, j)));
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline RowMatrix read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::int64_t dims[2];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in) throw IoError("'" + path.string() + "': truncated header");
  const std::int64_t rows = detail::to_little(dims[0]);
  const std::int64_t cols = detail::to_little(dims[1]);
  if (rows < 0 || cols < 0) {
    throw PoolError(PoolError::Kind::parse, std::nullopt,
                    "'" + path.string() + "': negative dimensions");
  }
  RowMatrix m(rows, cols);
  std::vector<float> buf(static_cast<std::size_t>(cols));
  for (std::int64_t i = 0; i < rows; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) {
      std::ostringstream os;
      os << "'" << path.string() << "': truncated data at row " << i;
      throw IoError(os.str());
    }
    for (std::int64_t j = 0; j < cols; ++j) {
      m(i, j) = static_cast<double>(detail::to_little(buf[static_cast<std::size_t>(j)]));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Text helpers

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Reads "key<sep>value" lines; '#' starts a comment line.
inline std::map<std::string, std::string> read_key_values(
    const std::filesystem::path& path, char sep) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto pos = t.find(sep);
    if (pos == std::string::npos) {
      std::ostringstream os;
      os << "'" << path.string() << "' line " << lineno << ": expected key"
         << sep << "value";
      throw PoolError(PoolError::Kind::parse, std::nullopt, os.str());
    }
    kv[trim(std::string_view(t).substr(0, pos))] =
        trim(std::string_view(t).substr(pos + 1));
  }
  return kv;
}

inline long long parse_int(const std::string& s, const std::string& what) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw PoolError(PoolError::Kind::parse, std::nullopt,
                    what + ": cannot parse integer '" + s + "'");
  }
  return v;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw PoolError(PoolError::Kind::parse, std::nullopt,
                    what + ": cannot parse number '" + s + "'");
  }
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pool manifests

inline InstancePool load_pool(const std::filesystem::path& manifest_path) {
  using K = PoolError::Kind;
  const auto kv = detail::read_key_values(manifest_path, ':');
  const auto dir = manifest_path.parent_path();
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw PoolError(K::missing_key, std::nullopt,
                      "manifest '" + manifest_path.string() + "' lacks key '" + key + "'");
    }
    return it->second;
  };
  auto opt = [&](const char* key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end() || it->second.empty()) return std::nullopt;
    return it->second;
  };

  const auto n = detail::parse_int(need("n_instances"), "n_instances");
  const auto f = detail::parse_int(need("n_clusters"), "n_clusters");
  InstancePool pool;
  pool.rollouts = static_cast<int>(detail::parse_int(need("rollouts"), "rollouts"));

  pool.cluster_mass = read_matrix(dir / need("cluster_mass_file"));
  if (pool.cluster_mass.rows() != n || pool.cluster_mass.cols() != f) {
    std::ostringstream os;
    os << "cluster mass file is " << pool.cluster_mass.rows() << "x"
       << pool.cluster_mass.cols() << ", manifest declares " << n << "x" << f;
    throw PoolError(K::dimension_mismatch, std::nullopt, os.str());
  }

  const auto counts = detail::read_lines(dir / need("success_counts_file"));
  if (static_cast<long long>(counts.size()) != n) {
    std::ostringstream os;
    os << "success counts file has " << counts.size() << " rows, expected " << n;
    throw PoolError(K::dimension_mismatch,
                    counts.size() < static_cast<std::size_t>(n)
                        ? std::optional<std::size_t>(counts.size())
                        : std::optional<std::size_t>(static_cast<std::size_t>(n)),
                    os.str());
  }
  pool.success_counts.reserve(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    long long v = 0;
    try {
      v = detail::parse_int(detail::trim(counts[i]), "success count");
    } catch (const PoolError&) {
      throw PoolError(K::parse, i, detail::row_msg("unparseable success count", i));
    }
    pool.success_counts.push_back(static_cast<int>(v));
  }

  pool.instance_ids = detail::read_lines(dir / need("ids_file"));
  for (auto& id : pool.instance_ids) id = detail::trim(id);
  if (static_cast<long long>(pool.instance_ids.size()) != n) {
    std::ostringstream os;
    os << "ids file has " << pool.instance_ids.size() << " rows, expected " << n;
    throw PoolError(K::dimension_mismatch, std::nullopt, os.str());
  }

  if (auto g = opt("gradients_file")) {
    pool.gradients = read_matrix(dir / *g);
    if (auto gd = opt("gradients_dim")) {
      if (pool.gradients->cols() != detail::parse_int(*gd, "gradients_dim")) {
        throw PoolError(K::dimension_mismatch, std::nullopt,
                        "gradient file width differs from gradients_dim");
      }
    }
    if (pool.gradients->rows() != n) {
      throw PoolError(K::dimension_mismatch, std::nullopt,
                      "gradient file rows differ from n_instances");
    }
  }
  if (auto sf = opt("surface_features_file")) {
    pool.surface_features = read_matrix(dir / *sf);
    if (auto names = opt("surface_feature_names")) {
      pool.surface_feature_names = detail::split(*names, ',');
    } else {
      for (Eigen::Index j = 0; j < pool.surface_features->cols(); ++j) {
        pool.surface_feature_names.push_back("feature_" + std::to_string(j));
      }
    }
  }
  validate_pool(pool);
  return pool;
}

// Writes the manifest plus sibling data files named after its stem.
inline void save_pool(const InstancePool& pool,
                      const std::filesystem::path& manifest_path) {
  validate_pool(pool);
  const auto dir = manifest_path.parent_path();
  const std::string stem = manifest_path.stem().string();
  if (!dir.empty()) std::filesystem::create_directories(dir);

  const std::string mass_name = stem + ".mass.bin";
  const std::string counts_name = stem + ".success.txt";
  const std::string ids_name = stem + ".ids.txt";
  write_matrix(dir / mass_name, pool.cluster_mass);
  {
    std::ofstream out(dir / counts_name);
    for (int s : pool.success_counts) out << s << '\n';
    if (!out) throw IoError("write failed for success counts");
  }
  {
    std::ofstream out(dir / ids_name);
    for (const auto& id : pool.instance_ids) out << id << '\n';
    if (!out) throw IoError("write failed for ids");
  }

  std::ofstream m(manifest_path);
  if (!m) throw IoError("cannot open '" + manifest_path.string() + "' for writing");
  m << "n_instances: " << pool.size() << '\n'
    << "n_clusters: " << pool.n_clusters() << '\n'
    << "rollouts: " << pool.rollouts << '\n'
    << "cluster_mass_file: " << mass_name << '\n'
    << "success_counts_file: " << counts_name << '\n'
    << "ids_file: " << ids_name << '\n';
  if (pool.gradients) {
    const std::string g = stem + ".grad.bin";
    write_matrix(dir / g, *pool.gradients);
    m << "gradients_file: " << g << '\n'
      << "gradients_dim: " << pool.gradients->cols() << '\n';
  }
  if (pool.surface_features) {
    const std::string sf = stem + ".surface.bin";
    write_matrix(dir / sf, *pool.surface_features);
    m << "surface_features_file: " << sf << '\n' << "surface_feature_names: ";
    for (std::size_t j = 0; j < pool.surface_feature_names.size(); ++j) {
      if (j) m << ',';
      m << pool.surface_feature_names[j];
    }
    m << '\n';
  }
  if (!m) throw IoError("write failed for manifest");
}

// ---------------------------------------------------------------------------
// Selection files

inline void save_selection(const SelectionResult& result,
                           const std::vector<std::string>& instance_ids,
                           const std::filesystem::path& path) {
  if (result.gains.size() != result.indices.size()) {
    throw InputError("save_selection: gains and indices differ in length");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "# mode=" << to_string(result.mode) << '\n';
  out << "rank,instance_id,marginal_gain\n";
  for (std::size_t r = 0; r < result.indices.size(); ++r) {
    const std::size_t idx = result.indices[r];
    if (idx >= instance_ids.size()) {
      throw InputError("save_selection: index out of range for the pool");
    }
    out << (r + 1) << ',' << instance_ids[idx] << ','
        << detail::format_double(result.gains[r]) << '\n';
  }
  out << "objective=" << detail::format_double(result.objective) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline SelectionResult load_selection(const std::filesystem::path& path,
                                      const std::vector<std::string>& instance_ids) {
  const auto lines = detail::read_lines(path);
  std::unordered_map<std::string, std::size_t> index_of;
  index_of.reserve(instance_ids.size());
  for (std::size_t i = 0; i < instance_ids.size(); ++i) index_of.emplace(instance_ids[i], i);

  SelectionResult result;
  bool have_objective = false;
  for (const auto& raw : lines) {
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.rfind("# mode=", 0) == 0) {
      result.mode = selection_mode_from_string(line.substr(7));
      continue;
    }
    if (line.front() == '#' || line.rfind("rank,", 0) == 0) continue;
    if (line.rfind("objective=", 0) == 0) {
      result.objective = detail::parse_double(line.substr(10), "objective");
      have_objective = true;
      continue;
    }
    const auto fields = detail::split(line, ',');
    if (fields.size() != 3) {
      throw InputError("selection file: malformed row '" + line + "'");
    }
    auto it = index_of.find(fields[1]);
    if (it == index_of.end()) {
      throw InputError("selection file: unknown instance id '" + fields[1] + "'");
    }
    result.indices.push_back(it->second);
    result.gains.push_back(detail::parse_double(fields[2], "marginal_gain"));
  }
  if (!have_objective) throw InputError("selection file: missing objective footer");
  return result;
}

}  // namespace covsel
