#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lata/conformal.hpp"
#include "lata/error.hpp"

namespace lata {

struct EvaluationRecord {
  std::size_t true_label = 0;
  PredictionSet prediction_set;
  std::size_t point_prediction = 0;

  bool covered() const {
    return std::binary_search(prediction_set.begin(), prediction_set.end(), true_label);
  }
};

/// A per-class average together with how many classes had no test examples.
struct ClassAverage {
  double value = 0.0;
  std::size_t excluded_classes = 0;
};

namespace detail {

inline void require_records(std::span<const EvaluationRecord> r) {
  require(!r.empty(), ErrorCode::invalid_input, "no evaluation records");
}

inline std::size_t class_span(std::span<const EvaluationRecord> records, std::size_t classes) {
  std::size_t c = classes;
  for (const auto& r : records) c = std::max(c, r.true_label + 1);
  return c;
}

}  // namespace detail

inline double coverage(std::span<const EvaluationRecord> records) {
  detail::require_records(records);
  std::size_t hit = 0;
  for (const auto& r : records) hit += r.covered() ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(records.size());
}

inline double mean_size(std::span<const EvaluationRecord> records) {
  detail::require_records(records);
  std::size_t total = 0;
  for (const auto& r : records) total += r.prediction_set.size();
  return static_cast<double>(total) / static_cast<double>(records.size());
}

/// Mean |Cov_c - (1 - alpha)| over represented classes, x100.
/// `classes` is the label-space size, used to count excluded classes.
inline ClassAverage ccv(std::span<const EvaluationRecord> records, double alpha, std::size_t classes = 0) {
  detail::require_records(records);
  const std::size_t c = detail::class_span(records, classes);
  std::vector<std::size_t> n(c, 0), hit(c, 0);
  for (const auto& r : records) {
    ++n[r.true_label];
    hit[r.true_label] += r.covered() ? 1 : 0;
  }
  ClassAverage out;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < c; ++k) {
    if (n[k] == 0) {
      ++out.excluded_classes;
      continue;
    }
    sum += std::abs(static_cast<double>(hit[k]) / static_cast<double>(n[k]) - (1.0 - alpha));
    ++used;
  }
  out.value = 100.0 * sum / static_cast<double>(used);
  return out;
}

/// Balanced top-1 accuracy over represented classes, x100.
inline ClassAverage aca(std::span<const EvaluationRecord> records, std::size_t classes = 0) {
  detail::require_records(records);
  const std::size_t c = detail::class_span(records, classes);
  std::vector<std::size_t> n(c, 0), hit(c, 0);
  for (const auto& r : records) {
    ++n[r.true_label];
    hit[r.true_label] += r.point_prediction == r.true_label ? 1 : 0;
  }
  ClassAverage out;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < c; ++k) {
    if (n[k] == 0) {
      ++out.excluded_classes;
      continue;
    }
    sum += static_cast<double>(hit[k]) / static_cast<double>(n[k]);
    ++used;
  }
  out.value = 100.0 * sum / static_cast<double>(used);
  return out;
}

/// Metrics of one run. ccv and aca are on the x100 scale.
struct ConformalReport {
  double coverage = 0.0;
  double mean_size = 0.0;
  double ccv = 0.0;
  double aca = 0.0;
  std::size_t n_test = 0;
  double alpha = 0.1;
  double wall_time_s = 0.0;
  // Bytes held by the largest window's working set; an estimate from container sizes.
  std::size_t peak_mem_estimate = 0;
  std::size_t excluded_classes = 0;
};

inline ConformalReport summarize(std::span<const EvaluationRecord> records, double alpha,
                                 std::size_t classes) {
  ConformalReport r;
  r.alpha = alpha;
  r.n_test = records.size();
  if (records.empty()) return r;
  r.coverage = coverage(records);
  r.mean_size = mean_size(records);
  const auto c = ccv(records, alpha, classes);
  r.ccv = c.value;
  r.excluded_classes = c.excluded_classes;
  r.aca = aca(records, classes).value;
  return r;
}

}  // namespace lata
