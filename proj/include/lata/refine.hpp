#pragma once

// Transductive refinement of probability rows over an affinity graph.
//
// Each iteration replaces every row by q_i * exp(gamma * sum_j W_ij z_j), renormalized
// (synchronous update from the previous iterate). Two scalar diagnostics are tracked:
//
//   objective         sum_i KL(z_i || q_i) + gamma/2 sum_ij W_ij |z_i - z_j|^2
//   mean_field_energy sum_i KL(z_i || q_i) - gamma/2 sum_ij W_ij z_i . z_j
//
// The update is the exact minimizer of the second one after linearizing its bilinear term,
// which makes it the quantity the iteration descends. The first one also carries the
// degree term gamma * sum_i d_i |z_i|^2, which the update ignores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lata/core.hpp"
#include "lata/error.hpp"
#include "lata/knn_graph.hpp"
#include "lata/matrix.hpp"

namespace lata {

inline constexpr double kDefaultGamma = 0.35;
inline constexpr std::size_t kDefaultIterations = 8;
inline constexpr double kProbabilityFloor = 1e-300;

struct RefineConfig {
  double gamma = kDefaultGamma;
  std::size_t t_iter = kDefaultIterations;
  double beta = 0.0;
  std::optional<std::size_t> kappa;
  std::optional<double> gate_threshold;
  bool record_objective = true;

  void validate(std::size_t classes) const {
    detail::require(std::isfinite(gamma) && gamma >= 0.0, ErrorCode::config, "gamma must be >= 0");
    detail::require(beta >= 0.0 && beta <= 1.0, ErrorCode::config, "beta must lie in [0, 1]");
    if (kappa)
      detail::require(*kappa >= 1 && *kappa <= classes, ErrorCode::config,
                      "kappa must lie in [1, C]");
    if (gate_threshold)
      detail::require(*gate_threshold >= 0.0 && *gate_threshold <= 1.0, ErrorCode::config,
                      "gate threshold must lie in [0, 1]");
  }
};

struct ClassPrior {
  Vector m;
  double smoothing = 0.0;
  // Some class had zero mass; unusable with beta > 0.
  bool has_zero = false;
};

/// Dirichlet-smoothed label marginals: (count_k + a) / (n + C a).
inline ClassPrior estimate_prior(std::span<const std::size_t> labels, std::size_t classes,
                                 double pseudo_count) {
  detail::require(!labels.empty(), ErrorCode::invalid_input, "cannot estimate a prior from no labels");
  detail::require(classes >= 1, ErrorCode::invalid_input, "need at least one class");
  detail::require(pseudo_count >= 0.0, ErrorCode::invalid_input, "pseudo count must be >= 0");
  Vector counts(classes, 0.0);
  for (auto y : labels) {
    detail::require(y < classes, ErrorCode::invalid_input, "label out of range");
    counts[y] += 1.0;
  }
  const double denom = static_cast<double>(labels.size()) + static_cast<double>(classes) * pseudo_count;
  ClassPrior prior;
  prior.smoothing = pseudo_count;
  prior.m.resize(classes);
  for (std::size_t k = 0; k < classes; ++k) {
    prior.m[k] = (counts[k] + pseudo_count) / denom;
    if (prior.m[k] <= 0.0) prior.has_zero = true;
  }
  return prior;
}

/// q_ik <- q_ik m_k^beta / sum_l q_il m_l^beta on every row. beta = 0 returns q untouched.
inline Matrix apply_prior(const Matrix& q, const ClassPrior& prior, double beta) {
  detail::require(beta >= 0.0 && beta <= 1.0, ErrorCode::invalid_input, "beta must lie in [0, 1]");
  detail::require(prior.m.size() == q.cols(), ErrorCode::dimension_mismatch,
                  "prior length differs from class count");
  if (beta == 0.0) return q;
  Vector bias(q.cols());
  for (std::size_t k = 0; k < q.cols(); ++k) {
    detail::require(prior.m[k] > 0.0, ErrorCode::invalid_input,
                    "prior entries must be strictly positive when beta > 0");
    bias[k] = std::pow(prior.m[k], beta);
  }
  Matrix out(q.rows(), q.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < q.cols(); ++k) s += (out(i, k) = q(i, k) * bias[k]);
    for (std::size_t k = 0; k < q.cols(); ++k) out(i, k) /= s;
  }
  return out;
}

namespace detail {

inline void check_pair(const Matrix& z, const Matrix& q, const SparseAffinityGraph& graph) {
  require(z.rows() == q.rows() && z.cols() == q.cols(), ErrorCode::dimension_mismatch,
          "Z and Q shapes differ");
  require(graph.n_nodes() == q.rows(), ErrorCode::dimension_mismatch,
          "graph node count differs from row count");
}

/// sum_i KL(z_i || q_i); +inf if some z_ik > 0 meets q_ik = 0.
inline double kl_fidelity(const Matrix& z, const Matrix& q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t k = 0; k < z.cols(); ++k) {
      const double zk = z(i, k);
      if (zk <= 0.0) continue;
      if (q(i, k) <= 0.0) return std::numeric_limits<double>::infinity();
      kl += zk * std::log(zk / std::max(q(i, k), kProbabilityFloor));
    }
  return kl;
}

}  // namespace detail

/// KL fidelity plus gamma/2 * sum_ij W_ij |z_i - z_j|^2, summed from the edge list.
inline double objective(const Matrix& z, const Matrix& q, const SparseAffinityGraph& graph,
                        double gamma) {
  detail::check_pair(z, q, graph);
  const double kl = detail::kl_fidelity(z, q);
  double smooth = 0.0;
  for (const auto& e : graph.edges())
    smooth += e.weight * squared_distance(z.row(e.i), z.row(e.j));
  // Each unordered edge stands for both (i, j) and (j, i): gamma/2 * 2 = gamma.
  return kl + gamma * smooth;
}

/// KL fidelity minus gamma/2 * sum_ij W_ij z_i . z_j.
inline double mean_field_energy(const Matrix& z, const Matrix& q, const SparseAffinityGraph& graph,
                                double gamma) {
  detail::check_pair(z, q, graph);
  const double kl = detail::kl_fidelity(z, q);
  double bilinear = 0.0;
  for (const auto& e : graph.edges()) bilinear += e.weight * dot(z.row(e.i), z.row(e.j));
  return kl - gamma * bilinear;
}

struct RefineTrace {
  // Entry 0 is the initial point, entry t the value after iteration t.
  std::vector<double> objective_values;
  std::vector<double> energy_values;
  std::size_t iterations_run = 0;
  double gated_fraction = 0.0;
};

struct RefineResult {
  Matrix z;
  RefineTrace trace;
};

/// Runs exactly config.t_iter synchronous updates starting from q.
/// Rows with u < gate_threshold stay at q but still feed their neighbors.
inline RefineResult refine(const Matrix& q, const SparseAffinityGraph& graph,
                           const RefineConfig& config,
                           std::optional<std::span<const double>> u = std::nullopt) {
  config.validate(q.cols());
  detail::require(graph.n_nodes() == q.rows(), ErrorCode::dimension_mismatch,
                  "graph node count differs from row count");
  const std::size_t n = q.rows();
  const std::size_t c = q.cols();

  std::vector<char> frozen(n, 0);
  std::size_t n_frozen = 0;
  if (config.gate_threshold) {
    detail::require(u.has_value() && u->size() == n, ErrorCode::dimension_mismatch,
                    "gating needs one failure probability per row");
    for (std::size_t i = 0; i < n; ++i)
      if ((*u)[i] < *config.gate_threshold) {
        frozen[i] = 1;
        ++n_frozen;
      }
  }

  RefineResult res;
  res.z = q;
  res.trace.gated_fraction = n == 0 ? 0.0 : static_cast<double>(n_frozen) / static_cast<double>(n);
  auto record = [&](const Matrix& z) {
    if (!config.record_objective) return;
    res.trace.objective_values.push_back(objective(z, q, graph, config.gamma));
    res.trace.energy_values.push_back(mean_field_energy(z, q, graph, config.gamma));
  };
  record(res.z);
  if (config.gamma == 0.0) {
    // exp(0) = 1: every iteration reproduces q exactly.
    res.trace.iterations_run = config.t_iter;
    for (std::size_t t = 0; t < config.t_iter; ++t) record(res.z);
    return res;
  }

  Matrix next(n, c);
  std::vector<double> logit(c);
  for (std::size_t t = 1; t <= config.t_iter; ++t) {
    const Matrix agg = neighbor_aggregate(graph, res.z);
    for (std::size_t i = 0; i < n; ++i) {
      auto out = next.row(i);
      if (frozen[i]) {
        std::copy(q.row(i).begin(), q.row(i).end(), out.begin());
        continue;
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < c; ++k) {
        logit[k] = config.gamma * agg(i, k);
        if (q(i, k) > 0.0) mx = std::max(mx, logit[k]);
      }
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        out[k] = q(i, k) > 0.0 ? q(i, k) * std::exp(logit[k] - mx) : 0.0;
        s += out[k];
      }
      detail::require(std::isfinite(s) && s > 0.0, ErrorCode::numerical,
                      "refinement produced a non-finite row at iteration " + std::to_string(t));
      for (std::size_t k = 0; k < c; ++k) out[k] /= s;
    }
    std::swap(res.z, next);
    res.trace.iterations_run = t;
    record(res.z);
  }
  return res;
}

/// Rows restricted to their top-kappa entries and renormalized on that support.
struct TopKRows {
  Matrix q;
  std::vector<std::vector<std::size_t>> support;  // kept class indices, ascending
  Vector kept_mass;
};

/// Keeps the kappa largest entries per row (ties to the lower index).
inline TopKRows truncate_topk(const Matrix& q, std::size_t kappa) {
  detail::require(kappa >= 1, ErrorCode::invalid_input, "kappa must be >= 1");
  detail::require(kappa <= q.cols(), ErrorCode::invalid_input, "kappa exceeds class count");
  TopKRows out;
  if (kappa == q.cols()) {
    out.q = q;
    out.support.assign(q.rows(), std::vector<std::size_t>(q.cols()));
    for (auto& keep : out.support)
      for (std::size_t k = 0; k < keep.size(); ++k) keep[k] = k;
    out.kept_mass.assign(q.rows(), 1.0);
    return out;
  }
  out.q = Matrix(q.rows(), q.cols());
  out.support.resize(q.rows());
  out.kept_mass.resize(q.rows());
  std::vector<std::size_t> order(q.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    auto row = q.row(i);
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    auto& keep = out.support[i];
    keep.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kappa));
    std::sort(keep.begin(), keep.end());
    double mass = 0.0;
    for (auto k : keep) mass += row[k];
    out.kept_mass[i] = mass;
    for (auto k : keep) out.q(i, k) = mass > 0.0 ? row[k] / mass : 1.0 / static_cast<double>(kappa);
  }
  return out;
}

/// Back to all C classes: off-support entries keep their original q, the refined
/// support is scaled to the original kept mass, then the row is renormalized.
inline Matrix restore_topk(const Matrix& refined, const Matrix& original, const TopKRows& trunc) {
  detail::require(refined.rows() == original.rows() && refined.cols() == original.cols(),
                  ErrorCode::dimension_mismatch, "restore: shape mismatch");
  Matrix out = original;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    if (trunc.support[i].size() == out.cols()) {
      std::copy(refined.row(i).begin(), refined.row(i).end(), out.row(i).begin());
      continue;
    }
    for (auto k : trunc.support[i]) out(i, k) = refined(i, k) * trunc.kept_mass[i];
    double s = 0.0;
    for (double v : out.row(i)) s += v;
    for (double& v : out.row(i)) v /= s;
  }
  return out;
}

}  // namespace lata
