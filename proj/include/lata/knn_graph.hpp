#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "lata/error.hpp"
#include "lata/matrix.hpp"

namespace lata {

using Index = std::size_t;

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

/// Sum that depends only on the multiset of terms, not their order.
/// Sorts `terms` in place.
inline double canonical_sum(std::span<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

/// k nearest neighbors of every node, flattened row-major (node i owns [i*k, (i+1)*k)).
struct KnnLists {
  std::size_t k = 0;
  std::vector<Index> indices;
  std::vector<double> distances;

  std::size_t nodes() const noexcept { return k == 0 ? 0 : indices.size() / k; }
  std::span<const Index> neighbors(Index i) const { return {indices.data() + i * k, k}; }
  std::span<const double> neighbor_distances(Index i) const {
    return {distances.data() + i * k, k};
  }
};

/// Exact brute-force kNN under Euclidean distance; ties go to the lower index.
inline KnnLists knn_indices(const Matrix& embeddings, std::size_t k) {
  const std::size_t n = embeddings.rows();
  detail::require(n >= 2, ErrorCode::invalid_input, "kNN needs at least two nodes");
  detail::require(k >= 1 && k < n, ErrorCode::invalid_input, "kNN requires 1 <= k < N");

  KnnLists out;
  out.k = k;
  out.indices.resize(n * k);
  out.distances.resize(n * k);

  // Pairwise squared distances, each computed once; (a-b)^2 == (b-a)^2 so mirroring is exact.
  std::vector<double> d2(n * n, 0.0);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) d2[i * n + j] = d2[j * n + i] = squared_distance(embeddings.row(i), embeddings.row(j));

  std::vector<std::pair<double, Index>> cand(n - 1);
  for (Index i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (Index j = 0; j < n; ++j)
      if (j != i) cand[c++] = {d2[i * n + j], j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t r = 0; r < k; ++r) {
      out.indices[i * k + r] = cand[r].second;
      out.distances[i * k + r] = std::sqrt(cand[r].first);
    }
  }
  return out;
}

struct Bandwidth {
  double sigma = 1.0;
  // All neighbor distances were zero and sigma fell back to 1.
  bool degenerate = false;
};

/// Median over the N*k directed neighbor distances.
inline Bandwidth median_bandwidth(const Matrix& embeddings, const KnnLists& knn) {
  detail::require(!knn.indices.empty(), ErrorCode::invalid_input, "empty neighbor lists");
  detail::require(knn.nodes() == embeddings.rows(), ErrorCode::dimension_mismatch,
                  "neighbor lists and embeddings disagree on node count");
  std::vector<double> d = knn.distances;
  std::sort(d.begin(), d.end());
  const std::size_t m = d.size();
  const double med = (m % 2 == 1) ? d[m / 2] : 0.5 * (d[m / 2 - 1] + d[m / 2]);
  if (med == 0.0) return {1.0, true};
  return {med, false};
}

struct Edge {
  Index i = 0;
  Index j = 0;
  double weight = 0.0;
};

/// Symmetric nonnegative affinity matrix in compressed adjacency form.
class SparseAffinityGraph {
 public:
  SparseAffinityGraph() = default;

  /// Edges are stored once per unordered pair (i < j after construction).
  SparseAffinityGraph(std::size_t n_nodes, std::vector<Edge> edges, Bandwidth bandwidth = {})
      : n_(n_nodes), bandwidth_(bandwidth) {
    for (auto& e : edges) {
      detail::require(e.i < n_ && e.j < n_, ErrorCode::invalid_input, "edge endpoint out of range");
      detail::require(e.i != e.j, ErrorCode::invalid_input, "self-loops are not allowed");
      detail::require(e.weight > 0.0 && e.weight <= 1.0, ErrorCode::invalid_input,
                      "edge weight must lie in (0, 1]");
      if (e.i > e.j) std::swap(e.i, e.j);
    }
    std::sort(edges.begin(), edges.end(),
              [](const Edge& a, const Edge& b) { return std::pair(a.i, a.j) < std::pair(b.i, b.j); });
    for (std::size_t e = 1; e < edges.size(); ++e)
      detail::require(edges[e].i != edges[e - 1].i || edges[e].j != edges[e - 1].j,
                      ErrorCode::invalid_input, "duplicate edge");
    edges_ = std::move(edges);
    build_adjacency();
  }

  std::size_t n_nodes() const noexcept { return n_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<double>& degrees() const noexcept { return degrees_; }
  const Bandwidth& bandwidth() const noexcept { return bandwidth_; }

  /// Neighbor indices of node i, ascending.
  std::span<const Index> neighbors(Index i) const {
    return {adj_index_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::span<const double> neighbor_weights(Index i) const {
    return {adj_weight_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::size_t max_degree_count() const {
    std::size_t m = 0;
    for (Index i = 0; i < n_; ++i) m = std::max(m, offsets_[i + 1] - offsets_[i]);
    return m;
  }

  double weight(Index i, Index j) const {
    auto nb = neighbors(i);
    auto it = std::lower_bound(nb.begin(), nb.end(), j);
    if (it == nb.end() || *it != j) return 0.0;
    return neighbor_weights(i)[static_cast<std::size_t>(it - nb.begin())];
  }

 private:
  void build_adjacency() {
    std::vector<std::size_t> count(n_ + 1, 0);
    for (const auto& e : edges_) {
      ++count[e.i + 1];
      ++count[e.j + 1];
    }
    offsets_.assign(n_ + 1, 0);
    for (std::size_t i = 0; i < n_; ++i) offsets_[i + 1] = offsets_[i] + count[i + 1];
    adj_index_.assign(offsets_[n_], 0);
    adj_weight_.assign(offsets_[n_], 0.0);
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    // Edges are sorted by (i, j): lower neighbors land first, each run ascending.
    for (const auto& e : edges_) {
      adj_index_[fill[e.j]] = e.i;
      adj_weight_[fill[e.j]++] = e.weight;
    }
    for (const auto& e : edges_) {
      adj_index_[fill[e.i]] = e.j;
      adj_weight_[fill[e.i]++] = e.weight;
    }
    degrees_.assign(n_, 0.0);
    std::vector<double> buf;
    for (Index i = 0; i < n_; ++i) {
      auto w = neighbor_weights(i);
      buf.assign(w.begin(), w.end());
      degrees_[i] = canonical_sum(buf);
    }
  }

  std::size_t n_ = 0;
  Bandwidth bandwidth_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_{0};
  std::vector<Index> adj_index_;
  std::vector<double> adj_weight_;
  std::vector<double> degrees_;
};

/// Symmetric-union kNN graph with Gaussian affinities exp(-d^2 / sigma^2).
/// sigma defaults to the median directed neighbor distance.
inline SparseAffinityGraph build_graph(const Matrix& embeddings, std::size_t k,
                                       std::optional<double> sigma_override = std::nullopt) {
  const KnnLists knn = knn_indices(embeddings, k);
  Bandwidth bw;
  if (sigma_override) {
    detail::require(std::isfinite(*sigma_override) && *sigma_override > 0.0,
                    ErrorCode::invalid_input, "sigma override must be > 0");
    bw.sigma = *sigma_override;
  } else {
    bw = median_bandwidth(embeddings, knn);
  }

  std::vector<std::pair<Index, Index>> pairs;
  pairs.reserve(knn.indices.size());
  for (Index i = 0; i < knn.nodes(); ++i)
    for (Index j : knn.neighbors(i)) pairs.emplace_back(std::min(i, j), std::max(i, j));
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  const double inv_s2 = 1.0 / (bw.sigma * bw.sigma);
  std::vector<Edge> edges;
  edges.reserve(pairs.size());
  for (auto [i, j] : pairs) {
    double w = std::exp(-squared_distance(embeddings.row(i), embeddings.row(j)) * inv_s2);
    // Far neighbors under a tiny bandwidth would underflow to zero and vanish from the union.
    w = std::max(w, std::numeric_limits<double>::min());
    edges.push_back({i, j, w});
  }
  return SparseAffinityGraph(embeddings.rows(), std::move(edges), bw);
}

/// M = W Z, one canonical per-row sum per class.
inline Matrix neighbor_aggregate(const SparseAffinityGraph& graph, const Matrix& z) {
  detail::require(z.rows() == graph.n_nodes(), ErrorCode::dimension_mismatch,
                  "aggregate: row count differs from node count");
  Matrix m(z.rows(), z.cols());
  std::vector<double> terms(graph.max_degree_count());
  for (Index i = 0; i < graph.n_nodes(); ++i) {
    auto nb = graph.neighbors(i);
    auto w = graph.neighbor_weights(i);
    if (nb.empty()) continue;
    for (std::size_t c = 0; c < z.cols(); ++c) {
      for (std::size_t e = 0; e < nb.size(); ++e) terms[e] = w[e] * z(nb[e], c);
      m(i, c) = canonical_sum(std::span<double>(terms.data(), nb.size()));
    }
  }
  return m;
}

}  // namespace lata
