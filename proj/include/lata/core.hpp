#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lata/error.hpp"
#include "lata/matrix.hpp"

namespace lata {

inline constexpr double kUnitNormTol = 1e-6;
inline constexpr double kSimplexTol = 1e-6;
inline constexpr double kDefaultTemperature = 1.0;

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require(a.size() == b.size(), ErrorCode::dimension_mismatch, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Lowest index among the maximal entries.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Unit-norm feature vector.
class Embedding {
 public:
  /// Normalizes `raw`; rejects zero vectors and non-finite entries.
  static Embedding normalize(std::span<const double> raw) {
    detail::require(!raw.empty(), ErrorCode::invalid_input, "embedding must have D > 0");
    for (double x : raw)
      detail::require(std::isfinite(x), ErrorCode::invalid_input, "non-finite embedding entry");
    const double n = l2_norm(raw);
    detail::require(n > 0.0, ErrorCode::invalid_input, "cannot normalize a zero vector");
    Embedding e;
    e.values_.assign(raw.begin(), raw.end());
    for (double& x : e.values_) x /= n;
    return e;
  }

  std::span<const double> values() const noexcept { return values_; }
  std::size_t dim() const noexcept { return values_.size(); }

 private:
  Vector values_;
};

/// Point on the probability simplex.
class ProbabilityVector {
 public:
  ProbabilityVector() = default;
  explicit ProbabilityVector(Vector probs) : probs_(std::move(probs)) {
    detail::require(!probs_.empty(), ErrorCode::invalid_input, "empty probability vector");
    double s = 0.0;
    for (double p : probs_) {
      detail::require(std::isfinite(p) && p >= 0.0 && p <= 1.0 + kSimplexTol,
                      ErrorCode::invalid_input, "probability entry outside [0, 1]");
      s += p;
    }
    detail::require(std::abs(s - 1.0) <= kSimplexTol, ErrorCode::invalid_input,
                    "probabilities do not sum to 1");
  }

  static ProbabilityVector uniform(std::size_t classes) {
    return ProbabilityVector(Vector(classes, 1.0 / static_cast<double>(classes)));
  }

  std::span<const double> probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t c) const { return probs_[c]; }
  std::size_t top_class() const { return argmax(probs_); }

 private:
  Vector probs_;
};

struct LabeledExample {
  Embedding embedding;
  std::size_t label = 0;
};

/// Class prototypes, one unit-norm row per class.
class PrototypeBank {
 public:
  PrototypeBank() = default;

  /// Rows of `prototypes` are normalized on construction.
  PrototypeBank(const Matrix& prototypes, std::vector<std::string> class_names)
      : names_(std::move(class_names)) {
    detail::require(prototypes.rows() >= 2, ErrorCode::invalid_input, "need at least two classes");
    detail::require(names_.size() == prototypes.rows(), ErrorCode::invalid_input,
                    "class name count does not match prototype count");
    protos_ = Matrix(prototypes.rows(), prototypes.cols());
    for (std::size_t c = 0; c < prototypes.rows(); ++c) {
      auto e = Embedding::normalize(prototypes.row(c));
      std::copy(e.values().begin(), e.values().end(), protos_.row(c).begin());
    }
  }

  std::size_t classes() const noexcept { return protos_.rows(); }
  std::size_t dim() const noexcept { return protos_.cols(); }
  std::span<const double> prototype(std::size_t c) const { return protos_.row(c); }
  const Matrix& matrix() const noexcept { return protos_; }
  const std::vector<std::string>& class_names() const noexcept { return names_; }

 private:
  Matrix protos_;
  std::vector<std::string> names_;
};

/// Mean of the given templates. Not renormalized; PrototypeBank does that.
inline Vector average_prototype(const std::vector<Vector>& templates) {
  detail::require(!templates.empty(), ErrorCode::invalid_input, "no templates to average");
  const std::size_t d = templates.front().size();
  Vector mean(d, 0.0);
  for (const auto& t : templates) {
    detail::require(t.size() == d, ErrorCode::dimension_mismatch, "template dimension mismatch");
    for (std::size_t i = 0; i < d; ++i) mean[i] += t[i];
  }
  for (double& x : mean) x /= static_cast<double>(templates.size());
  return mean;
}

/// Softmax with max-logit subtraction, written into `out`.
inline void softmax_into(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out[c] = std::exp(logits[c] - mx);
    s += out[c];
  }
  for (double& p : out) p /= s;
}

inline Vector softmax(std::span<const double> logits) {
  Vector out(logits.size());
  softmax_into(logits, out);
  return out;
}

namespace detail {

inline void zero_shot_row(std::span<const double> v, const PrototypeBank& bank, double tau,
                          std::span<double> out) {
  for (std::size_t c = 0; c < bank.classes(); ++c) out[c] = dot(v, bank.prototype(c)) / tau;
  softmax_into(std::span<const double>(out.data(), out.size()), out);
}

inline void check_tau(double tau) {
  require(std::isfinite(tau) && tau > 0.0, ErrorCode::invalid_input, "temperature must be > 0");
}

}  // namespace detail

/// Temperature-scaled softmax over prototype similarities.
inline ProbabilityVector zero_shot_probs(const Embedding& v, const PrototypeBank& bank,
                                         double tau = kDefaultTemperature) {
  detail::check_tau(tau);
  detail::require(v.dim() == bank.dim(), ErrorCode::dimension_mismatch,
                  "embedding and prototype dimensions differ");
  Vector out(bank.classes());
  detail::zero_shot_row(v.values(), bank, tau, out);
  return ProbabilityVector(std::move(out));
}

/// Zero-shot probabilities for every row of a matrix of unit-norm embeddings.
inline Matrix zero_shot_matrix(const Matrix& embeddings, const PrototypeBank& bank,
                               double tau = kDefaultTemperature) {
  detail::check_tau(tau);
  detail::require(embeddings.cols() == bank.dim(), ErrorCode::dimension_mismatch,
                  "embedding and prototype dimensions differ");
  Matrix q(embeddings.rows(), bank.classes());
  for (std::size_t i = 0; i < embeddings.rows(); ++i)
    detail::zero_shot_row(embeddings.row(i), bank, tau, q.row(i));
  return q;
}

/// Row-normalizes every row of `raw` to unit Euclidean norm.
inline Matrix normalize_rows(const Matrix& raw) {
  Matrix out(raw.rows(), raw.cols());
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    auto e = Embedding::normalize(raw.row(i));
    std::copy(e.values().begin(), e.values().end(), out.row(i).begin());
  }
  return out;
}

}  // namespace lata
