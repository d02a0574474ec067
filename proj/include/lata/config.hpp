#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lata/conformal.hpp"
#include "lata/error.hpp"
#include "lata/refine.hpp"

namespace lata {

/// Synthetic Gaussian-mixture task on the unit sphere.
struct SyntheticSpec {
  std::size_t classes = 5;
  std::size_t dim = 32;
  double separation = 1.0;   // norm of each class mean before noise
  double noise = 0.5;        // per-coordinate Gaussian noise scale
  std::vector<double> mixture;  // empty = uniform
  std::size_t n_cal = 80;
  std::size_t n_test = 920;
  std::uint64_t seed = 0;
  // Zero-shot prototypes are class means perturbed by this much noise before renormalizing.
  double prototype_noise = 0.0;

  void validate() const {
    detail::require(classes >= 2, ErrorCode::config, "synthetic data needs at least two classes");
    detail::require(dim >= 1, ErrorCode::config, "synthetic dimension must be positive");
    detail::require(n_cal > 0 && n_test > 0, ErrorCode::config, "synthetic counts must be positive");
    detail::require(noise >= 0.0 && separation >= 0.0 && prototype_noise >= 0.0, ErrorCode::config,
                    "synthetic scales must be >= 0");
    if (!mixture.empty()) {
      detail::require(mixture.size() == classes, ErrorCode::config, "mixture length differs from class count");
      double s = 0.0;
      for (double w : mixture) {
        detail::require(w >= 0.0, ErrorCode::config, "mixture weights must be >= 0");
        s += w;
      }
      detail::require(std::abs(s - 1.0) <= 1e-6, ErrorCode::config, "mixture weights must sum to 1");
    }
  }
};

enum class ProviderKind { heuristic, vilu, oracle };

inline ProviderKind parse_provider(const std::string& s) {
  if (s == "heuristic") return ProviderKind::heuristic;
  if (s == "vilu") return ProviderKind::vilu;
  if (s == "oracle") return ProviderKind::oracle;
  throw Error(ErrorCode::config, "unknown provider '" + s + "'");
}

inline const char* to_string(ProviderKind p) {
  switch (p) {
    case ProviderKind::heuristic: return "heuristic";
    case ProviderKind::vilu: return "vilu";
    case ProviderKind::oracle: return "oracle";
  }
  return "heuristic";
}

/// Every knob of an experiment. Defaults follow the reference protocol.
struct RunConfig {
  double alpha = 0.10;
  ScoreRule score;
  double gamma = kDefaultGamma;
  std::size_t t_iter = kDefaultIterations;
  std::size_t k = 15;
  std::optional<double> sigma;
  double beta = 0.0;
  double prior_pseudo_count = 1.0;
  std::optional<std::size_t> kappa = 128;
  double lambda = 0.5;
  double eta = 0.25;
  std::optional<double> gate_threshold;
  double tau = kDefaultTemperature;
  std::size_t window = 256;
  std::size_t shots = 16;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool record_timing = false;
  ProviderKind provider = ProviderKind::heuristic;
  std::string vilu_bundle;
  std::string data_dir;  // embeddings.mat, prototypes.mat, labels.jsonl, classes.json
  std::optional<SyntheticSpec> synthetic;
  std::string out;

  RefineConfig refine_config(std::size_t classes) const {
    RefineConfig rc;
    rc.gamma = gamma;
    rc.t_iter = t_iter;
    rc.beta = beta;
    // kappa only matters below the class count; at or above it the truncation is the identity.
    if (kappa && *kappa < classes) rc.kappa = kappa;
    rc.gate_threshold = gate_threshold;
    rc.record_objective = false;
    return rc;
  }

  FailureAwareParams failure_params() const { return {lambda, eta}; }

  void validate() const {
    detail::require(alpha > 0.0 && alpha < 1.0, ErrorCode::config, "alpha must lie in (0, 1)");
    score.validate();
    detail::require(std::isfinite(gamma) && gamma >= 0.0, ErrorCode::config, "gamma must be >= 0");
    detail::require(k >= 1, ErrorCode::config, "k must be >= 1");
    if (sigma) detail::require(*sigma > 0.0, ErrorCode::config, "sigma must be > 0");
    detail::require(beta >= 0.0 && beta <= 1.0, ErrorCode::config, "beta must lie in [0, 1]");
    detail::require(prior_pseudo_count >= 0.0, ErrorCode::config, "prior pseudo count must be >= 0");
    if (kappa) detail::require(*kappa >= 1, ErrorCode::config, "kappa must be >= 1");
    detail::require(lambda >= 0.0 && eta >= 0.0, ErrorCode::config, "lambda and eta must be >= 0");
    if (gate_threshold)
      detail::require(*gate_threshold >= 0.0 && *gate_threshold <= 1.0, ErrorCode::config,
                      "gate threshold must lie in [0, 1]");
    detail::require(std::isfinite(tau) && tau > 0.0, ErrorCode::config, "tau must be > 0");
    detail::require(window >= 2, ErrorCode::config, "window must be >= 2");
    detail::require(trials >= 1, ErrorCode::config, "trials must be >= 1");
    detail::require(threads >= 1, ErrorCode::config, "threads must be >= 1");
    if (provider == ProviderKind::vilu)
      detail::require(!vilu_bundle.empty(), ErrorCode::config, "vilu provider needs a weight bundle");
    detail::require(synthetic.has_value() || !data_dir.empty(), ErrorCode::config,
                    "config needs either a data directory or a synthetic spec");
    if (synthetic) synthetic->validate();
  }
};

inline nlohmann::ordered_json to_json(const SyntheticSpec& s) {
  nlohmann::ordered_json j;
  j["classes"] = s.classes;
  j["dim"] = s.dim;
  j["separation"] = s.separation;
  j["noise"] = s.noise;
  j["mixture"] = s.mixture;
  j["n_cal"] = s.n_cal;
  j["n_test"] = s.n_test;
  j["seed"] = s.seed;
  j["prototype_noise"] = s.prototype_noise;
  return j;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["alpha"] = c.alpha;
  j["score"] = to_string(c.score.kind);
  j["k_reg"] = c.score.k_reg;
  j["gamma_raps"] = c.score.gamma_raps;
  j["randomize"] = c.score.randomize;
  j["u_value"] = c.score.u_value;
  j["gamma"] = c.gamma;
  j["t_iter"] = c.t_iter;
  j["k"] = c.k;
  j["sigma"] = c.sigma ? nlohmann::ordered_json(*c.sigma) : nlohmann::ordered_json(nullptr);
  j["beta"] = c.beta;
  j["prior_pseudo_count"] = c.prior_pseudo_count;
  j["kappa"] = c.kappa ? nlohmann::ordered_json(*c.kappa) : nlohmann::ordered_json(nullptr);
  j["lambda"] = c.lambda;
  j["eta"] = c.eta;
  j["gate_threshold"] =
      c.gate_threshold ? nlohmann::ordered_json(*c.gate_threshold) : nlohmann::ordered_json(nullptr);
  j["tau"] = c.tau;
  j["window"] = c.window;
  j["shots"] = c.shots;
  j["trials"] = c.trials;
  j["seed"] = c.seed;
  j["provider"] = to_string(c.provider);
  j["vilu_bundle"] = c.vilu_bundle;
  j["data_dir"] = c.data_dir;
  j["synthetic"] = c.synthetic ? to_json(*c.synthetic) : nlohmann::ordered_json(nullptr);
  return j;
}

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& dst) {
  if (!j.contains(key) || j[key].is_null()) return;
  try {
    dst = j[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::config, std::string("config field '") + key + "' has the wrong type");
  }
}

template <class T>
void read_optional(const nlohmann::json& j, const char* key, std::optional<T>& dst) {
  if (!j.contains(key)) return;
  if (j[key].is_null()) {
    dst.reset();
    return;
  }
  T v{};
  read_field(j, key, v);
  dst = v;
}

}  // namespace detail

inline SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  detail::read_field(j, "classes", s.classes);
  detail::read_field(j, "dim", s.dim);
  detail::read_field(j, "separation", s.separation);
  detail::read_field(j, "noise", s.noise);
  detail::read_field(j, "mixture", s.mixture);
  detail::read_field(j, "n_cal", s.n_cal);
  detail::read_field(j, "n_test", s.n_test);
  detail::read_field(j, "seed", s.seed);
  detail::read_field(j, "prototype_noise", s.prototype_noise);
  return s;
}

/// Fields absent from `j` keep the values already in `base`.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  detail::require(j.is_object(), ErrorCode::config, "config must be a JSON object");
  RunConfig c = std::move(base);
  detail::read_field(j, "alpha", c.alpha);
  if (j.contains("score")) {
    std::string s;
    detail::read_field(j, "score", s);
    c.score.kind = parse_score_kind(s);
  }
  detail::read_field(j, "k_reg", c.score.k_reg);
  detail::read_field(j, "gamma_raps", c.score.gamma_raps);
  detail::read_field(j, "randomize", c.score.randomize);
  detail::read_field(j, "u_value", c.score.u_value);
  detail::read_field(j, "gamma", c.gamma);
  detail::read_field(j, "t_iter", c.t_iter);
  detail::read_field(j, "k", c.k);
  detail::read_optional(j, "sigma", c.sigma);
  detail::read_field(j, "beta", c.beta);
  detail::read_field(j, "prior_pseudo_count", c.prior_pseudo_count);
  detail::read_optional(j, "kappa", c.kappa);
  detail::read_field(j, "lambda", c.lambda);
  detail::read_field(j, "eta", c.eta);
  detail::read_optional(j, "gate_threshold", c.gate_threshold);
  detail::read_field(j, "tau", c.tau);
  detail::read_field(j, "window", c.window);
  detail::read_field(j, "shots", c.shots);
  detail::read_field(j, "trials", c.trials);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "threads", c.threads);
  if (j.contains("provider")) {
    std::string p;
    detail::read_field(j, "provider", p);
    c.provider = parse_provider(p);
  }
  detail::read_field(j, "vilu_bundle", c.vilu_bundle);
  detail::read_field(j, "data_dir", c.data_dir);
  detail::read_field(j, "out", c.out);
  if (j.contains("synthetic") && !j["synthetic"].is_null()) c.synthetic = synthetic_from_json(j["synthetic"]);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), ErrorCode::config, "cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace lata
