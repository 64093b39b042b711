#pragma once

// Cluster basis over sparse-autoencoder latents, plus the BatchTopK mask.
//
// Pipeline: frequency-band filter -> graph-hybrid latent embedding
// (presence half + residual half, 2 x 64 dims) -> spherical k-means ->
// per-instance cluster mass m_if = sum of f_il over latents l in cluster f.

#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "covsel/errors.hpp"
#include "covsel/linalg.hpp"
#include "covsel/pool_io.hpp"
#include "covsel/rng.hpp"

namespace covsel {

// ---------------------------------------------------------------------------
// BatchTopK

// Keeps the B*k largest entries of a B x D batch of post-ReLU activations
// and zeroes the rest. Ties at the cutoff keep the entry that comes first in
// row-major order. Zero entries never count as survivors.
inline RowMatrix batch_topk_mask(const RowMatrix& pre_acts, long k) {
  if (k <= 0) throw InputError("batch_topk_mask: k must be positive");
  if (!pre_acts.allFinite()) throw InputError("batch_topk_mask: non-finite activation");
  if ((pre_acts.array() < 0.0).any()) {
    throw InputError("batch_topk_mask: activations must be nonnegative (post-ReLU)");
  }
  const Eigen::Index total = pre_acts.size();
  const double* data = pre_acts.data();  // row-major: flat index is (row, col) order
  std::vector<Eigen::Index> nz;
  nz.reserve(static_cast<std::size_t>(total));
  for (Eigen::Index f = 0; f < total; ++f) {
    if (data[f] > 0.0) nz.push_back(f);
  }
  const auto budget = static_cast<std::size_t>(
      std::min<long double>(static_cast<long double>(k) * pre_acts.rows(),
                            static_cast<long double>(nz.size())));
  auto before = [&](Eigen::Index a, Eigen::Index b) {
    return data[a] > data[b] || (data[a] == data[b] && a < b);
  };
  if (budget < nz.size()) {
    std::nth_element(nz.begin(), nz.begin() + static_cast<std::ptrdiff_t>(budget), nz.end(),
                     before);
  }
  RowMatrix out = RowMatrix::Zero(pre_acts.rows(), pre_acts.cols());
  double* dst = out.data();
  for (std::size_t j = 0; j < budget; ++j) dst[nz[j]] = data[nz[j]];
  return out;
}

// ---------------------------------------------------------------------------
// Latent activations

// Per-instance mean latent activations, N x D, nonnegative, column-major
// sparse so each latent's instance column is contiguous.
struct LatentActivations {
  Eigen::SparseMatrix<double> values;

  Eigen::Index n_instances() const { return values.rows(); }
  Eigen::Index n_latents() const { return values.cols(); }
};

inline LatentActivations make_activations(Eigen::Index n, Eigen::Index d,
                                          const std::vector<Eigen::Triplet<double>>& entries) {
  for (const auto& t : entries) {
    if (t.row() < 0 || t.row() >= n || t.col() < 0 || t.col() >= d) {
      throw InputError("activations: triplet index out of range");
    }
    if (!(t.value() >= 0.0) || !std::isfinite(t.value())) {
      throw InputError("activations: values must be finite and nonnegative");
    }
  }
  LatentActivations acts;
  acts.values.resize(n, d);
  acts.values.setFromTriplets(entries.begin(), entries.end());
  acts.values.makeCompressed();
  return acts;
}

// Text format: header "N D nnz", then nnz lines "i l value".
inline LatentActivations read_activations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  long long n = 0, d = 0, nnz = 0;
  if (!(in >> n >> d >> nnz) || n <= 0 || d <= 0 || nnz < 0) {
    throw InputError("'" + path.string() + "': bad header, expected 'N D nnz'");
  }
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(nnz));
  for (long long e = 0; e < nnz; ++e) {
    long long i = 0, l = 0;
    double v = 0.0;
    if (!(in >> i >> l >> v)) {
      std::ostringstream os;
      os << "'" << path.string() << "': truncated at entry " << e;
      throw InputError(os.str());
    }
    entries.emplace_back(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l), v);
  }
  return make_activations(n, d, entries);
}

inline void write_activations(const LatentActivations& acts, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << acts.n_instances() << ' ' << acts.n_latents() << ' ' << acts.values.nonZeros() << '\n';
  out << std::setprecision(17);
  for (Eigen::Index l = 0; l < acts.values.outerSize(); ++l) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(acts.values, l); it; ++it) {
      out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// Latents whose activation rate #{i: f_il > 0}/N lies in [min_freq, max_freq].
inline std::vector<std::size_t> frequency_filter(const LatentActivations& acts, double min_freq,
                                                 double max_freq) {
  if (!(min_freq >= 0.0 && min_freq < max_freq && max_freq <= 1.0)) {
    throw InputError("frequency_filter: need 0 <= min_freq < max_freq <= 1");
  }
  const double n = static_cast<double>(acts.n_instances());
  std::vector<std::size_t> kept;
  for (Eigen::Index l = 0; l < acts.values.outerSize(); ++l) {
    std::size_t fired = 0;
    for (Eigen::SparseMatrix<double>::InnerIterator it(acts.values, l); it; ++it) {
      if (it.value() > 0.0) ++fired;
    }
    const double rate = static_cast<double>(fired) / n;
    if (rate >= min_freq && rate <= max_freq) kept.push_back(static_cast<std::size_t>(l));
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Graph-hybrid embedding

struct EmbeddingOptions {
  std::size_t n_neighbors = 32;
  std::size_t half_dim = 64;
  double ridge = 1e-3;
};

struct LatentEmbedding {
  RowMatrix rows;                          // |kept| x 2*half_dim, unit rows
  std::vector<std::size_t> zero_presence;  // positions in kept with empty presence
};

namespace detail {

// Uncentered principal-axis scores of the rows of x, via the row Gram
// matrix: row i maps to U_i diag(sqrt(lambda)). Columns beyond the rank of x
// (or beyond x.rows()) are zero.
inline RowMatrix principal_scores(const Matrix& gram, std::size_t dims) {
  const EigenDecomp eig = sym_eig(gram);
  const auto keep = std::min<Eigen::Index>(static_cast<Eigen::Index>(dims), gram.rows());
  RowMatrix out = RowMatrix::Zero(gram.rows(), static_cast<Eigen::Index>(dims));
  for (Eigen::Index k = 0; k < keep; ++k) {
    const double lam = eig.values(k);
    if (lam <= 0.0) break;
    out.col(k) = eig.vectors.col(k) * std::sqrt(lam);
  }
  return out;
}

inline void unit_rows(RowMatrix& m, std::vector<std::size_t>* zero_rows = nullptr) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double nrm = m.row(i).norm();
    if (nrm > 0.0) {
      m.row(i) /= nrm;
    } else if (zero_rows) {
      zero_rows->push_back(static_cast<std::size_t>(i));
    }
  }
}

}  // namespace detail

inline LatentEmbedding build_embedding(const LatentActivations& acts,
                                       const std::vector<std::size_t>& kept,
                                       const EmbeddingOptions& opt = {}) {
  const auto l = static_cast<Eigen::Index>(kept.size());
  if (l == 0) throw InputError("build_embedding: no kept latents");
  if (opt.n_neighbors >= kept.size()) {
    throw InputError("build_embedding: n_neighbors must be smaller than the kept set");
  }
  const auto n = acts.n_instances();

  // Dense activation and presence columns of the kept latents.
  Matrix mass = Matrix::Zero(n, l);
  Matrix presence = Matrix::Zero(n, l);
  for (Eigen::Index j = 0; j < l; ++j) {
    const auto col = static_cast<Eigen::Index>(kept[static_cast<std::size_t>(j)]);
    if (col >= acts.n_latents()) throw InputError("build_embedding: kept index out of range");
    for (Eigen::SparseMatrix<double>::InnerIterator it(acts.values, col); it; ++it) {
      mass(it.row(), j) = it.value();
      if (it.value() > 0.0) presence(it.row(), j) = 1.0;
    }
  }

  // Presence cosine, sparsified to self + n_neighbors strongest others.
  Matrix co = presence.transpose() * presence;
  const Vector counts = co.diagonal();
  for (Eigen::Index a = 0; a < l; ++a) {
    for (Eigen::Index b = 0; b < l; ++b) {
      const double denom = std::sqrt(counts(a) * counts(b));
      co(a, b) = denom > 0.0 ? co(a, b) / denom : 0.0;
    }
  }
  Matrix sim = Matrix::Zero(l, l);     // kept similarity graph (with self)
  Matrix nbr = Matrix::Zero(l, l);     // off-diagonal neighbor weights
  std::vector<Eigen::Index> order;
  for (Eigen::Index a = 0; a < l; ++a) {
    order.resize(static_cast<std::size_t>(l));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    order.erase(order.begin() + a);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(opt.n_neighbors),
                      order.end(), [&](Eigen::Index x, Eigen::Index y) {
                        return co(a, x) > co(a, y) || (co(a, x) == co(a, y) && x < y);
                      });
    sim(a, a) = co(a, a);
    for (std::size_t j = 0; j < opt.n_neighbors; ++j) {
      const Eigen::Index b = order[j];
      sim(a, b) = co(a, b);
      nbr(a, b) = co(a, b);
    }
  }

  LatentEmbedding out;
  RowMatrix pres_half = detail::principal_scores(sim * sim.transpose(), opt.half_dim);
  detail::unit_rows(pres_half, &out.zero_presence);

  // Residual direction: each mass column minus its ridge fit on its own
  // presence column, compared by cosine on the same sparse graph.
  Matrix rcol = mass;
  for (Eigen::Index a = 0; a < l; ++a) {
    const double pp = presence.col(a).squaredNorm();
    const double beta = presence.col(a).dot(mass.col(a)) / (pp + opt.ridge);
    rcol.col(a) -= beta * presence.col(a);
  }
  const Matrix rco = rcol.transpose() * rcol;
  const Vector rnorm = rco.diagonal().cwiseSqrt();
  Matrix resid = Matrix::Zero(l, l);
  for (Eigen::Index a = 0; a < l; ++a) {
    for (Eigen::Index b = 0; b < l; ++b) {
      if (a != b && nbr(a, b) == 0.0) continue;
      const double denom = rnorm(a) * rnorm(b);
      resid(a, b) = denom > 0.0 ? rco(a, b) / denom : 0.0;
    }
  }
  RowMatrix resid_half =
      detail::principal_scores(resid * resid.transpose(), opt.half_dim);
  detail::unit_rows(resid_half);

  const auto h = static_cast<Eigen::Index>(opt.half_dim);
  out.rows.resize(l, 2 * h);
  out.rows.leftCols(h) = pres_half;
  out.rows.rightCols(h) = resid_half;
  detail::unit_rows(out.rows);
  return out;
}

// ---------------------------------------------------------------------------
// Spherical k-means

struct KMeansOptions {
  std::size_t clusters = 256;
  std::size_t iters = 20;
  std::size_t batch = 8192;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::vector<int> labels;  // per row
  RowMatrix centers;        // unit rows (zero only if every assigned row is zero)
  double mean_cosine = 0.0; // mean over rows of cos(row, own center)
};

namespace detail {

inline int nearest_center(const RowMatrix& centers, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                          double* best_out = nullptr) {
  int best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double s = centers.row(c).dot(x);
    if (s > best_sim) {
      best_sim = s;
      best = static_cast<int>(c);
    }
  }
  if (best_out) *best_out = best_sim;
  return best;
}

// Farthest-point seeding: a seeded first pick, then repeatedly the row with
// the lowest best-cosine to the centers chosen so far.
inline RowMatrix farthest_point_seeds(const RowMatrix& x, std::size_t k, CounterRng& rng) {
  const auto n = static_cast<std::size_t>(x.rows());
  RowMatrix centers(static_cast<Eigen::Index>(k), x.cols());
  std::vector<char> chosen(n, 0);
  std::vector<double> best(n, -std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    chosen[pick] = 1;
    centers.row(static_cast<Eigen::Index>(c)) = x.row(static_cast<Eigen::Index>(pick));
    if (c + 1 == k) break;
    const auto center = centers.row(static_cast<Eigen::Index>(c));
    std::size_t next = n;
    double lowest = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      best[i] = std::max(best[i], center.dot(x.row(static_cast<Eigen::Index>(i))));
      if (best[i] < lowest) {
        lowest = best[i];
        next = i;
      }
    }
    pick = next;
  }
  return centers;
}

inline void normalize_center(RowMatrix& centers, Eigen::Index c) {
  const double nrm = centers.row(c).norm();
  if (nrm > 0.0) centers.row(c) /= nrm;
}

}  // namespace detail

inline double mean_within_cosine(const RowMatrix& x, const RowMatrix& centers,
                                 const std::vector<int>& labels) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    acc += centers.row(labels[static_cast<std::size_t>(i)]).dot(x.row(i));
  }
  return acc / static_cast<double>(x.rows());
}

// Assignment by maximum cosine; rows are expected unit-norm (or zero).
// batch >= rows runs full-batch Lloyd updates; smaller batches use
// per-center learning rates 1/count with renormalization. Empty clusters
// (full batch) are reseeded to the row least similar to its own center.
inline KMeansResult spherical_kmeans(const RowMatrix& x, const KMeansOptions& opt,
                                     std::vector<double>* objective_trace = nullptr) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (opt.clusters == 0) throw InputError("spherical_kmeans: need at least one cluster");
  if (opt.clusters > n) {
    std::ostringstream os;
    os << "spherical_kmeans: " << opt.clusters << " clusters requested for " << n << " rows";
    throw InputError(os.str());
  }
  if (opt.batch == 0) throw InputError("spherical_kmeans: batch must be positive");
  const auto k = static_cast<Eigen::Index>(opt.clusters);
  CounterRng rng(opt.seed);
  CounterRng seed_stream = rng.split(0);
  CounterRng batch_stream = rng.split(1);
  RowMatrix centers = detail::farthest_point_seeds(x, opt.clusters, seed_stream);

  std::vector<int> labels(n, 0);
  std::vector<double> sims(n, 0.0);
  const bool full = opt.batch >= n;
  std::vector<double> seen(static_cast<std::size_t>(k), 0.0);

  auto assign_all = [&] {
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = detail::nearest_center(centers, x.row(static_cast<Eigen::Index>(i)), &sims[i]);
    }
  };

  for (std::size_t it = 0; it < opt.iters; ++it) {
    if (full) {
      assign_all();
      if (objective_trace) objective_trace->push_back(mean_within_cosine(x, centers, labels));
      RowMatrix sums = RowMatrix::Zero(k, x.cols());
      std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
      for (std::size_t i = 0; i < n; ++i) {
        sums.row(labels[i]) += x.row(static_cast<Eigen::Index>(i));
        ++count[static_cast<std::size_t>(labels[i])];
      }
      std::vector<char> used(n, 0);
      for (Eigen::Index c = 0; c < k; ++c) {
        if (count[static_cast<std::size_t>(c)] > 0) {
          centers.row(c) = sums.row(c);
          detail::normalize_center(centers, c);
          continue;
        }
        std::size_t far = n;
        double lowest = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
          if (!used[i] && sims[i] < lowest) {
            lowest = sims[i];
            far = i;
          }
        }
        if (far < n) {
          used[far] = 1;
          centers.row(c) = x.row(static_cast<Eigen::Index>(far));
        }
      }
    } else {
      std::vector<std::size_t> batch(opt.batch);
      for (auto& b : batch) b = batch_stream.below(n);
      std::vector<int> batch_labels(batch.size());
      for (std::size_t j = 0; j < batch.size(); ++j) {
        batch_labels[j] = detail::nearest_center(centers, x.row(static_cast<Eigen::Index>(batch[j])));
      }
      for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto c = static_cast<std::size_t>(batch_labels[j]);
        seen[c] += 1.0;
        const double lr = 1.0 / seen[c];
        centers.row(static_cast<Eigen::Index>(c)) =
            (1.0 - lr) * centers.row(static_cast<Eigen::Index>(c)) +
            lr * x.row(static_cast<Eigen::Index>(batch[j]));
      }
      for (Eigen::Index c = 0; c < k; ++c) detail::normalize_center(centers, c);
      if (objective_trace) {
        assign_all();
        objective_trace->push_back(mean_within_cosine(x, centers, labels));
      }
    }
  }
  assign_all();
  KMeansResult out;
  out.labels = std::move(labels);
  out.centers = std::move(centers);
  out.mean_cosine = mean_within_cosine(x, out.centers, out.labels);
  return out;
}

// ---------------------------------------------------------------------------
// Cluster model and masses

struct ClusterModel {
  std::vector<int> labels;  // per latent; -1 = outside the frequency band
  int n_clusters = 0;
  RowMatrix centers;        // n_clusters x embed_dim
  RowMatrix embedding;      // kept latents x embed_dim
};

struct ClusterRecipe {
  double min_freq = 0.01;
  double max_freq = 0.80;
  EmbeddingOptions embedding;
  KMeansOptions kmeans;
};

inline ClusterModel build_cluster_model(const LatentActivations& acts,
                                        const ClusterRecipe& recipe = {}) {
  const auto kept = frequency_filter(acts, recipe.min_freq, recipe.max_freq);
  if (kept.size() <= recipe.embedding.n_neighbors) {
    std::ostringstream os;
    os << "cluster: only " << kept.size() << " latents pass the frequency band";
    throw InputError(os.str());
  }
  LatentEmbedding emb = build_embedding(acts, kept, recipe.embedding);
  KMeansResult km = spherical_kmeans(emb.rows, recipe.kmeans);
  ClusterModel model;
  model.n_clusters = static_cast<int>(recipe.kmeans.clusters);
  model.labels.assign(static_cast<std::size_t>(acts.n_latents()), -1);
  for (std::size_t j = 0; j < kept.size(); ++j) model.labels[kept[j]] = km.labels[j];
  model.centers = std::move(km.centers);
  model.embedding = std::move(emb.rows);
  return model;
}

inline RowMatrix cluster_mass(const LatentActivations& acts, const ClusterModel& model) {
  if (static_cast<Eigen::Index>(model.labels.size()) != acts.n_latents()) {
    throw InputError("cluster_mass: model labels do not cover the latent dimension");
  }
  RowMatrix m = RowMatrix::Zero(acts.n_instances(), model.n_clusters);
  for (Eigen::Index l = 0; l < acts.values.outerSize(); ++l) {
    const int f = model.labels[static_cast<std::size_t>(l)];
    if (f < 0) continue;
    if (f >= model.n_clusters) throw InputError("cluster_mass: label exceeds cluster count");
    for (Eigen::SparseMatrix<double>::InnerIterator it(acts.values, l); it; ++it) {
      m(it.row(), f) += it.value();
    }
  }
  return m;
}

// Model file: "n_latents n_clusters" then one label per line; centers go to
// "<path>.centers" in the matrix format.
inline void save_cluster_model(const ClusterModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << model.labels.size() << ' ' << model.n_clusters << '\n';
  for (int lab : model.labels) out << lab << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
  write_matrix(path.string() + ".centers", model.centers);
}

inline ClusterModel load_cluster_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  long long d = 0, f = 0;
  if (!(in >> d >> f) || d < 0 || f <= 0) throw InputError("cluster model: bad header");
  ClusterModel model;
  model.n_clusters = static_cast<int>(f);
  model.labels.resize(static_cast<std::size_t>(d));
  for (auto& lab : model.labels) {
    if (!(in >> lab) || lab < -1 || lab >= f) throw InputError("cluster model: bad label");
  }
  const std::filesystem::path centers = path.string() + ".centers";
  if (std::filesystem::exists(centers)) model.centers = read_matrix(centers);
  return model;
}

}  // namespace covsel
