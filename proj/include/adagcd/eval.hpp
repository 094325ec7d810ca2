#pragma once

// Clustering evaluation: semi-supervised k-means over all embeddings and
// Hungarian-matched All/Old/New accuracy over the unlabeled instances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adagcd/data/split.hpp"
#include "adagcd/error.hpp"
#include "adagcd/matrix.hpp"
#include "adagcd/rng.hpp"

namespace adagcd {

// Maximum-weight assignment on a rows×cols weight matrix (either side may be
// larger). Returns, per row, the matched column or -1. Shortest augmenting
// path Hungarian method, O(n²·m) on the padded square problem.
inline std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const std::size_t rows = weight.size();
  const std::size_t cols = rows ? weight.front().size() : 0;
  std::vector<int> result(rows, -1);
  if (rows == 0 || cols == 0) return result;
  const std::size_t n = std::max(rows, cols);
  double wmax = 0.0;
  for (const auto& r : weight) {
    if (r.size() != cols) throw ShapeError("max_weight_assignment: ragged weight matrix");
    for (double v : r) wmax = std::max(wmax, v);
  }
  // cost[i][j] = wmax − w, padding cells cost wmax (weight 0).
  auto cost = [&](std::size_t i, std::size_t j) {
    const double w = (i < rows && j < cols) ? weight[i][j] : 0.0;
    return wmax - w;
  };
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials, standard e-maxx formulation.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] - 1 < rows && j - 1 < cols) result[p[j] - 1] = static_cast<int>(j - 1);
  return result;
}

struct ClusterReport {
  std::map<InstanceId, int> assignments;
  double acc_all = 0.0;
  double acc_old = 0.0;
  double acc_new = 0.0;
  std::map<int, ClassId> matching;  // cluster → class
  std::size_t n_old = 0;
  std::size_t n_new = 0;

  // key=value lines; doubles printed with round-trip precision.
  std::string to_record() const {
    std::ostringstream os;
    os.precision(17);
    os << "acc_all=" << acc_all << "\n"
       << "acc_old=" << acc_old << "\n"
       << "acc_new=" << acc_new << "\n"
       << "n_old=" << n_old << "\n"
       << "n_new=" << n_new << "\n"
       << "clusters=" << count_clusters() << "\n";
    return os.str();
  }

  std::size_t count_clusters() const {
    std::set<int> c;
    for (const auto& [id, k] : assignments) c.insert(k);
    return c.size();
  }
};

inline void write_assignments_csv(const ClusterReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "instance_id,cluster_id\n";
  for (const auto& [id, k] : report.assignments) out << id << "," << k << "\n";
}

// Scores predicted clusters against ground truth on the given instances. Each
// cluster is matched to at most one class (maximum total overlap); instances in
// matched (cluster, class) cells are correct, everything else is wrong.
inline ClusterReport hungarian_accuracy(const std::map<InstanceId, int>& pred, const std::map<InstanceId, ClassId>& truth,
                                        const std::set<ClassId>& old_classes) {
  if (pred.empty()) throw ContractError("hungarian_accuracy: empty prediction set");
  if (pred.size() != truth.size()) throw ContractError("hungarian_accuracy: prediction and truth cover different ids");
  std::map<int, std::size_t> cluster_index;
  std::map<ClassId, std::size_t> class_index;
  for (const auto& [id, k] : pred) {
    if (!truth.count(id)) throw ContractError("hungarian_accuracy: no truth for instance " + std::to_string(id));
    cluster_index.emplace(k, 0);
    class_index.emplace(truth.at(id), 0);
  }
  std::vector<int> clusters;
  std::vector<ClassId> classes;
  for (auto& [k, idx] : cluster_index) {
    idx = clusters.size();
    clusters.push_back(k);
  }
  for (auto& [c, idx] : class_index) {
    idx = classes.size();
    classes.push_back(c);
  }
  std::vector<std::vector<double>> contingency(clusters.size(), std::vector<double>(classes.size(), 0.0));
  for (const auto& [id, k] : pred) contingency[cluster_index[k]][class_index[truth.at(id)]] += 1.0;
  const std::vector<int> match = max_weight_assignment(contingency);

  ClusterReport report;
  report.assignments = pred;
  for (std::size_t r = 0; r < clusters.size(); ++r)
    if (match[r] >= 0) report.matching[clusters[r]] = classes[static_cast<std::size_t>(match[r])];
  std::size_t correct_old = 0, correct_new = 0;
  for (const auto& [id, k] : pred) {
    const ClassId c = truth.at(id);
    const bool is_old = old_classes.count(c) > 0;
    (is_old ? report.n_old : report.n_new) += 1;
    auto it = report.matching.find(k);
    if (it != report.matching.end() && it->second == c) (is_old ? correct_old : correct_new) += 1;
  }
  const std::size_t total = report.n_old + report.n_new;
  report.acc_all = static_cast<double>(correct_old + correct_new) / static_cast<double>(total);
  report.acc_old = report.n_old ? static_cast<double>(correct_old) / static_cast<double>(report.n_old) : 0.0;
  report.acc_new = report.n_new ? static_cast<double>(correct_new) / static_cast<double>(report.n_new) : 0.0;
  return report;
}

struct KMeansOptions {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  double tol = 1e-4;
};

struct KMeansResult {
  std::vector<int> assignments;   // cluster per row
  Matrix centroids;               // K×d
  std::vector<double> objective;  // constrained SSE after each iteration
  std::size_t iterations = 0;
  std::vector<ClassId> cluster_class;  // class pinned to each of the first |known| clusters
};

// Constrained k-means. `labels[i]` ≥ 0 pins row i to its class's cluster
// (clusters 0..|known|−1 in ascending class order); -1 marks an unlabeled row.
// Known centroids start at labeled means, the remaining K−|known| via k-means++
// over unlabeled rows. A cluster left empty is re-seeded with the unlabeled row
// farthest from its centroid.
inline KMeansResult ss_kmeans(const Matrix& x, const std::vector<ClassId>& labels, const KMeansOptions& opt) {
  const std::size_t n = x.rows(), d = x.cols();
  if (labels.size() != n) throw ShapeError("ss_kmeans: one label per row required");
  if (!x.all_finite()) throw NumericError("ss_kmeans: non-finite embeddings");
  std::set<ClassId> known;
  for (ClassId c : labels)
    if (c >= 0) known.insert(c);
  if (opt.k < known.size())
    throw ConfigError("ss_kmeans: K=" + std::to_string(opt.k) + " is smaller than the " +
                      std::to_string(known.size()) + " labeled classes");
  if (opt.k == 0) throw ConfigError("ss_kmeans: K must be ≥ 1");
  KMeansResult res;
  res.cluster_class.assign(known.begin(), known.end());
  std::map<ClassId, int> class_cluster;
  for (std::size_t i = 0; i < res.cluster_class.size(); ++i) class_cluster[res.cluster_class[i]] = static_cast<int>(i);

  const std::size_t K = opt.k;
  res.centroids = Matrix(K, d);
  res.assignments.assign(n, -1);
  std::vector<std::size_t> unlabeled;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= 0)
      res.assignments[i] = class_cluster[labels[i]];
    else
      unlabeled.push_back(i);
  }

  auto recompute = [&](Matrix& cent) {
    Matrix sums(K, d);
    std::vector<std::size_t> counts(K, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const int c = res.assignments[i];
      if (c < 0) continue;
      ++counts[static_cast<std::size_t>(c)];
      for (std::size_t j = 0; j < d; ++j) sums(static_cast<std::size_t>(c), j) += x(i, j);
    }
    for (std::size_t c = 0; c < K; ++c)
      if (counts[c])
        for (std::size_t j = 0; j < d; ++j) cent(c, j) = sums(c, j) / static_cast<double>(counts[c]);
    return counts;
  };

  // Known centroids from labeled means.
  recompute(res.centroids);

  // k-means++ for the remaining clusters over unlabeled rows.
  Rng rng(derive_seed(opt.seed, {0x6B6D}));
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  for (std::size_t i : unlabeled)
    for (std::size_t c = 0; c < known.size(); ++c)
      dist[i] = std::min(dist[i], linalg::squared_distance(x.row(i), res.centroids.row(c)));
  for (std::size_t c = known.size(); c < K; ++c) {
    if (unlabeled.empty()) break;
    std::size_t pick = unlabeled.front();
    if (c == 0) {
      pick = unlabeled[std::uniform_int_distribution<std::size_t>(0, unlabeled.size() - 1)(rng)];
    } else {
      double total = 0.0;
      for (std::size_t i : unlabeled) total += dist[i];
      if (total > 0.0) {
        double r = uniform01(rng) * total;
        for (std::size_t i : unlabeled) {
          r -= dist[i];
          pick = i;
          if (r <= 0.0) break;
        }
      } else {
        pick = unlabeled[std::uniform_int_distribution<std::size_t>(0, unlabeled.size() - 1)(rng)];
      }
    }
    for (std::size_t j = 0; j < d; ++j) res.centroids(c, j) = x(pick, j);
    for (std::size_t i : unlabeled) dist[i] = std::min(dist[i], linalg::squared_distance(x.row(i), res.centroids.row(c)));
  }

  auto objective = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      s += linalg::squared_distance(x.row(i), res.centroids.row(static_cast<std::size_t>(res.assignments[i])));
    return s;
  };

  for (std::size_t it = 0; it < std::max<std::size_t>(opt.max_iter, 1); ++it) {
    // Assignment step: unlabeled rows to their nearest centroid.
    for (std::size_t i : unlabeled) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t c = 0; c < K; ++c) {
        const double dd = linalg::squared_distance(x.row(i), res.centroids.row(c));
        if (dd < best) {
          best = dd;
          arg = static_cast<int>(c);
        }
      }
      res.assignments[i] = arg;
    }
    // Re-seed empty clusters with the farthest unlabeled row from its own
    // centroid, taken from a cluster that keeps at least one member.
    std::vector<std::size_t> counts(K, 0);
    for (int a : res.assignments) ++counts[static_cast<std::size_t>(a)];
    for (std::size_t c = 0; c < K; ++c) {
      if (counts[c]) continue;
      double far = -1.0;
      std::size_t arg = n;
      for (std::size_t i : unlabeled) {
        const auto own = static_cast<std::size_t>(res.assignments[i]);
        if (counts[own] < 2) continue;
        const double dd = linalg::squared_distance(x.row(i), res.centroids.row(own));
        if (dd > far) {
          far = dd;
          arg = i;
        }
      }
      if (arg == n) continue;
      --counts[static_cast<std::size_t>(res.assignments[arg])];
      res.assignments[arg] = static_cast<int>(c);
      ++counts[c];
    }
    Matrix next = res.centroids;
    recompute(next);
    double shift = 0.0;
    for (std::size_t c = 0; c < K; ++c)
      shift = std::max(shift, std::sqrt(linalg::squared_distance(next.row(c), res.centroids.row(c))));
    res.centroids = std::move(next);
    res.objective.push_back(objective());
    res.iterations = it + 1;
    if (shift < opt.tol) break;
  }
  return res;
}

}  // namespace adagcd
