#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lata/core.hpp"
#include "lata/error.hpp"
#include "lata/failure_signals.hpp"

namespace lata {

enum class ScoreKind { lac, aps, raps };

inline ScoreKind parse_score_kind(const std::string& s) {
  if (s == "lac" || s == "LAC") return ScoreKind::lac;
  if (s == "aps" || s == "APS") return ScoreKind::aps;
  if (s == "raps" || s == "RAPS") return ScoreKind::raps;
  throw Error(ErrorCode::config, "unknown score rule '" + s + "'");
}

inline const char* to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::lac: return "lac";
    case ScoreKind::aps: return "aps";
    case ScoreKind::raps: return "raps";
  }
  return "lac";
}

struct ScoreRule {
  ScoreKind kind = ScoreKind::lac;
  double k_reg = 1.0;
  double gamma_raps = 1e-3;
  bool randomize = false;
  double u_value = 1.0;  // used when randomize is off

  void validate() const {
    detail::require(k_reg >= 0.0, ErrorCode::config, "k_reg must be >= 0");
    detail::require(gamma_raps >= 0.0, ErrorCode::config, "gamma_raps must be >= 0");
    detail::require(u_value >= 0.0 && u_value <= 1.0, ErrorCode::config, "U must lie in [0, 1]");
  }
};

struct FailureAwareParams {
  double lambda = 0.5;
  double eta = 0.25;
};

/// Threshold from calibration. `infinite` means every label is admitted.
struct ConformalThreshold {
  double s_hat = 0.0;
  bool infinite = false;
  std::size_t n_cal = 0;
  double alpha = 0.1;

  bool admits(double score) const { return infinite || score <= s_hat; }
};

using PredictionSet = std::vector<std::size_t>;

/// 1-based rank of every class: descending probability, ascending index on ties.
inline std::vector<std::size_t> class_ranks(std::span<const double> z) {
  std::vector<std::size_t> order(z.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
  std::vector<std::size_t> rank(z.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  return rank;
}

namespace detail {

inline void check_label(std::span<const double> z, std::size_t y) {
  require(y < z.size(), ErrorCode::invalid_input, "label out of range");
}

inline double aps_from_ranks(std::span<const double> z, std::span<const std::size_t> rank, std::size_t y,
                             double u) {
  double prefix = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (rank[j] < rank[y]) prefix += z[j];
  return prefix + u * z[y];
}

inline double raps_penalty(const ScoreRule& rule, std::size_t rank_y) {
  return rule.gamma_raps * std::max(0.0, static_cast<double>(rank_y) - rule.k_reg);
}

}  // namespace detail

inline double score_lac(std::span<const double> z, std::size_t y) {
  detail::check_label(z, y);
  return 1.0 - z[y];
}

/// Mass of strictly better-ranked classes plus U * z_y.
inline double score_aps(std::span<const double> z, std::size_t y, double u) {
  detail::check_label(z, y);
  const auto rank = class_ranks(z);
  return detail::aps_from_ranks(z, rank, y, u);
}

inline double score_raps(std::span<const double> z, std::size_t y, const ScoreRule& rule, double u) {
  detail::check_label(z, y);
  const auto rank = class_ranks(z);
  return detail::aps_from_ranks(z, rank, y, u) + detail::raps_penalty(rule, rank[y]);
}

/// Base score under `rule`; `u` is the APS/RAPS randomization draw (ignored for LAC).
inline double base_score(std::span<const double> z, std::size_t y, const ScoreRule& rule, double u) {
  switch (rule.kind) {
    case ScoreKind::lac: return score_lac(z, y);
    case ScoreKind::aps: return score_aps(z, y, u);
    case ScoreKind::raps: return score_raps(z, y, rule, u);
  }
  return score_lac(z, y);
}

/// Scores of every candidate label for one sample (shared ranking and U).
inline Vector all_label_scores(std::span<const double> z, const ScoreRule& rule, double u) {
  Vector s(z.size());
  if (rule.kind == ScoreKind::lac) {
    for (std::size_t y = 0; y < z.size(); ++y) s[y] = 1.0 - z[y];
    return s;
  }
  const auto rank = class_ranks(z);
  for (std::size_t y = 0; y < z.size(); ++y) {
    s[y] = detail::aps_from_ranks(z, rank, y, u);
    if (rule.kind == ScoreKind::raps) s[y] += detail::raps_penalty(rule, rank[y]);
  }
  return s;
}

/// S* = S_base (1 + lambda u) - eta alpha_y. May be negative.
inline double score_failure_aware(double base, double u, double attention_y, const FailureAwareParams& p) {
  return base * (1.0 + p.lambda * u) - p.eta * attention_y;
}

/// Rank ceil((n+1)(1-alpha)) of the calibration scores, 1-based.
inline std::size_t conformal_rank(std::size_t n, double alpha) {
  const double target = static_cast<double>(n + 1) * (1.0 - alpha);
  // (n+1)(1-alpha) lands on an integer for common choices; keep representation error from
  // bumping it up by one.
  return static_cast<std::size_t>(std::ceil(target - 1e-9));
}

/// Split-conformal threshold: the ceil((n+1)(1-alpha))-th smallest score, or +inf past n.
inline ConformalThreshold calibrate(std::span<const double> scores, double alpha) {
  detail::require(!scores.empty(), ErrorCode::invalid_input, "no calibration scores");
  detail::require(alpha > 0.0 && alpha < 1.0, ErrorCode::invalid_input, "alpha must lie in (0, 1)");
  ConformalThreshold t;
  t.n_cal = scores.size();
  t.alpha = alpha;
  const std::size_t r = conformal_rank(scores.size(), alpha);
  if (r > scores.size()) {
    t.infinite = true;
    t.s_hat = std::numeric_limits<double>::infinity();
    return t;
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(r - 1), sorted.end());
  t.s_hat = sorted[r - 1];
  return t;
}

/// All labels whose failure-aware score is within the threshold, ascending.
inline PredictionSet predict_set(std::span<const double> z, const FailureSignals& signals,
                                 const ScoreRule& rule, const FailureAwareParams& params,
                                 const ConformalThreshold& threshold, double u_draw) {
  PredictionSet set;
  if (threshold.infinite) {
    set.resize(z.size());
    std::iota(set.begin(), set.end(), std::size_t{0});
    return set;
  }
  const Vector base = all_label_scores(z, rule, u_draw);
  for (std::size_t y = 0; y < z.size(); ++y) {
    const double s = score_failure_aware(base[y], signals.u, signals.attention[y], params);
    if (threshold.admits(s)) set.push_back(y);
  }
  return set;
}

inline PredictionSet predict_set(std::span<const double> z, const FailureSignals& signals,
                                 const ScoreRule& rule, const FailureAwareParams& params,
                                 const ConformalThreshold& threshold) {
  return predict_set(z, signals, rule, params, threshold, rule.u_value);
}

}  // namespace lata
