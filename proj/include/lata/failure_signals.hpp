#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lata/core.hpp"
#include "lata/error.hpp"
#include "lata/matrix.hpp"

namespace lata {

/// Per-sample failure probability and label attention.
struct FailureSignals {
  double u = 0.0;
  ProbabilityVector attention;
};

enum class Activation { identity, relu, tanh };

inline Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity" || name == "linear" || name == "none") return Activation::identity;
  throw Error(ErrorCode::validation, "unknown activation '" + name + "'");
}

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "identity";
}

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::identity;
};

/// Parameters of the cross-attention failure head.
struct ViluWeights {
  Matrix query_proj;  // D x D
  Matrix key_proj;
  Matrix value_proj;
  std::vector<DenseLayer> mlp;  // input 3D, output 1
  double attention_scale = 1.0;

  std::size_t dim() const noexcept { return query_proj.rows(); }

  void validate() const {
    const std::size_t d = query_proj.rows();
    detail::require(d > 0, ErrorCode::validation, "empty projection matrices");
    for (const Matrix* m : {&query_proj, &key_proj, &value_proj})
      detail::require(m->rows() == d && m->cols() == d, ErrorCode::validation,
                      "projections must be D x D");
    detail::require(std::isfinite(attention_scale) && attention_scale > 0.0, ErrorCode::validation,
                    "attention scale must be > 0");
    detail::require(!mlp.empty(), ErrorCode::validation, "MLP needs at least one layer");
    std::size_t in = 3 * d;
    for (const auto& layer : mlp) {
      detail::require(layer.weight.cols() == in, ErrorCode::validation, "MLP layer input mismatch");
      detail::require(layer.bias.size() == layer.weight.rows(), ErrorCode::validation,
                      "MLP bias length mismatch");
      in = layer.weight.rows();
    }
    detail::require(in == 1, ErrorCode::validation, "MLP must end in a single output");
  }
};

namespace detail {

inline Vector matvec(const Matrix& m, std::span<const double> x) {
  require(m.cols() == x.size(), ErrorCode::dimension_mismatch, "matvec: shape mismatch");
  Vector y(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
  return y;
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

inline double sigmoid(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

}  // namespace detail

struct AttentionOutput {
  ProbabilityVector attention;
  Vector summary;
};

/// Single-head cross-attention from the image embedding to the class bank.
inline AttentionOutput attention_forward(std::span<const double> v, const PrototypeBank& bank,
                                         const ViluWeights& w) {
  detail::require(v.size() == w.dim() && bank.dim() == w.dim(), ErrorCode::dimension_mismatch,
                  "attention: embedding, bank and projection dimensions must agree");
  const Vector qv = detail::matvec(w.query_proj, v);
  Vector scores(bank.classes());
  std::vector<Vector> values;
  values.reserve(bank.classes());
  for (std::size_t j = 0; j < bank.classes(); ++j) {
    scores[j] = dot(qv, detail::matvec(w.key_proj, bank.prototype(j))) / w.attention_scale;
    values.push_back(detail::matvec(w.value_proj, bank.prototype(j)));
  }
  Vector attn = softmax(scores);
  Vector summary(w.dim(), 0.0);
  for (std::size_t j = 0; j < values.size(); ++j)
    for (std::size_t d = 0; d < summary.size(); ++d) summary[d] += attn[j] * values[j][d];
  return {ProbabilityVector(std::move(attn)), std::move(summary)};
}

/// sigmoid(g([v, t_top, summary])) where top = argmax q.
inline double vilu_u(std::span<const double> v, const PrototypeBank& bank, const ProbabilityVector& q,
                     const ViluWeights& w, const AttentionOutput& att) {
  detail::require(q.size() == bank.classes(), ErrorCode::dimension_mismatch,
                  "probability vector length differs from class count");
  const std::size_t top = q.top_class();
  Vector x;
  x.reserve(3 * w.dim());
  x.insert(x.end(), v.begin(), v.end());
  x.insert(x.end(), bank.prototype(top).begin(), bank.prototype(top).end());
  x.insert(x.end(), att.summary.begin(), att.summary.end());
  for (const auto& layer : w.mlp) {
    Vector y = detail::matvec(layer.weight, x);
    for (std::size_t r = 0; r < y.size(); ++r) y[r] = detail::activate(layer.activation, y[r] + layer.bias[r]);
    x = std::move(y);
  }
  return detail::sigmoid(x[0]);
}

inline double vilu_u(std::span<const double> v, const PrototypeBank& bank, const ProbabilityVector& q,
                     const ViluWeights& w) {
  w.validate();
  return vilu_u(v, bank, q, w, attention_forward(v, bank, w));
}

/// u = H(q) / log C, attention = q.
inline FailureSignals heuristic_signals(const ProbabilityVector& q) {
  double h = 0.0;
  for (double p : q.probs())
    if (p > 0.0) h -= p * std::log(p);
  const double u = q.size() > 1 ? h / std::log(static_cast<double>(q.size())) : 0.0;
  return {std::clamp(u, 0.0, 1.0), q};
}

/// Test oracle: u = 1 iff the top class is wrong, attention one-hot at the true label.
inline FailureSignals oracle_signals(const ProbabilityVector& q, std::size_t true_label) {
  detail::require(true_label < q.size(), ErrorCode::invalid_input, "label out of range");
  Vector onehot(q.size(), 0.0);
  onehot[true_label] = 1.0;
  return {q.top_class() == true_label ? 0.0 : 1.0, ProbabilityVector(std::move(onehot))};
}

/// What a provider may look at for one pool item.
struct SignalInput {
  std::span<const double> embedding;
  const PrototypeBank* bank = nullptr;
  const ProbabilityVector* q = nullptr;
  std::optional<std::size_t> label;  // only filled for providers that ask for it
};

/// Pluggable source of failure signals. One instance scores every pool item.
class FailureProvider {
 public:
  virtual ~FailureProvider() = default;
  virtual FailureSignals signals(const SignalInput& in) const = 0;
  virtual bool needs_labels() const { return false; }
  virtual std::string name() const = 0;
};

class HeuristicProvider final : public FailureProvider {
 public:
  FailureSignals signals(const SignalInput& in) const override { return heuristic_signals(*in.q); }
  std::string name() const override { return "heuristic"; }
};

class OracleProvider final : public FailureProvider {
 public:
  FailureSignals signals(const SignalInput& in) const override {
    detail::require(in.label.has_value(), ErrorCode::invalid_input, "oracle provider needs labels");
    return oracle_signals(*in.q, *in.label);
  }
  bool needs_labels() const override { return true; }
  std::string name() const override { return "oracle"; }
};

class ViluProvider final : public FailureProvider {
 public:
  explicit ViluProvider(ViluWeights w) : w_(std::move(w)) { w_.validate(); }

  FailureSignals signals(const SignalInput& in) const override {
    auto att = attention_forward(in.embedding, *in.bank, w_);
    const double u = vilu_u(in.embedding, *in.bank, *in.q, w_, att);
    return {u, std::move(att.attention)};
  }
  std::string name() const override { return "vilu"; }
  const ViluWeights& weights() const noexcept { return w_; }

 private:
  ViluWeights w_;
};

}  // namespace lata
