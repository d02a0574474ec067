#pragma once

// Experiment orchestration: synthetic data, K-shot calibration sampling, windowed
// transduction, multi-trial loops and the double-dip negative control.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lata/config.hpp"
#include "lata/conformal.hpp"
#include "lata/core.hpp"
#include "lata/error.hpp"
#include "lata/failure_signals.hpp"
#include "lata/io.hpp"
#include "lata/knn_graph.hpp"
#include "lata/metrics.hpp"
#include "lata/refine.hpp"

namespace lata {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed of trial t: splitmix64(base + t). Every trial is reproducible on its own.
inline std::uint64_t trial_seed(std::uint64_t base, std::size_t trial) {
  return splitmix64(base + static_cast<std::uint64_t>(trial));
}

// ---------------------------------------------------------------------------
// Windows

struct WindowPlan {
  std::size_t window_size = 0;
  std::vector<std::size_t> cal_indices;
  std::vector<std::vector<std::size_t>> test_batches;
};

/// Every window holds the whole calibration split plus the next W - n test items.
inline WindowPlan make_window_plan(std::span<const std::size_t> cal, std::span<const std::size_t> test,
                                   std::size_t window) {
  detail::require(cal.size() < window, ErrorCode::config,
                  "window W=" + std::to_string(window) + " must exceed the calibration size n=" +
                      std::to_string(cal.size()) + "; raise --window");
  WindowPlan plan;
  plan.window_size = window;
  plan.cal_indices.assign(cal.begin(), cal.end());
  const std::size_t step = window - cal.size();
  for (std::size_t s = 0; s < test.size(); s += step) {
    const std::size_t e = std::min(test.size(), s + step);
    plan.test_batches.emplace_back(test.begin() + static_cast<std::ptrdiff_t>(s),
                                   test.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Orthonormal class means (columns of a QR of a Gaussian matrix), returned as C rows.
inline Matrix orthonormal_means(std::size_t classes, std::size_t dim, Rng& rng) {
  detail::require(dim >= classes, ErrorCode::config,
                  "near-orthogonal class means need D >= C (D=" + std::to_string(dim) +
                      ", C=" + std::to_string(classes) + ")");
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    for (;;) {
      for (double& x : m.row(c)) x = gauss(rng);
      for (std::size_t p = 0; p < c; ++p) {
        const double proj = dot(m.row(c), m.row(p));
        for (std::size_t d = 0; d < dim; ++d) m(c, d) -= proj * m(p, d);
      }
      const double n = l2_norm(m.row(c));
      if (n > 1e-8) {
        for (double& x : m.row(c)) x /= n;
        break;
      }
    }
  }
  return m;
}

/// Per-class counts summing exactly to n_cal: floors of n_cal * m_c, then the leftover
/// units go to the largest fractional parts (lower class index on ties).
inline std::vector<std::size_t> kshot_counts(std::size_t n_cal, std::span<const double> marginals) {
  detail::require(!marginals.empty(), ErrorCode::invalid_input, "no marginals");
  double total = 0.0;
  for (double m : marginals) {
    detail::require(m >= 0.0, ErrorCode::invalid_input, "marginals must be >= 0");
    total += m;
  }
  detail::require(total > 0.0, ErrorCode::invalid_input, "marginals sum to zero");
  std::vector<std::size_t> counts(marginals.size());
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < marginals.size(); ++c) {
    const double exact = static_cast<double>(n_cal) * marginals[c] / total;
    // Products like 8 * 0.75 are exact; guard against 5.999999 style representation error.
    const double fl = std::floor(exact + 1e-9);
    counts[c] = static_cast<std::size_t>(fl);
    assigned += counts[c];
    frac.emplace_back(exact - fl, c);
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n_cal; ++r, ++assigned) ++counts[frac[r % frac.size()].second];
  return counts;
}

/// Samples normalize(separation * mean_y + noise * N(0, I)); prototypes are the class means
/// (optionally perturbed). Calibration is K-shot: per-class counts from kshot_counts(n_cal, mixture).
/// Test labels are drawn from the mixture. Rows are shuffled so split position carries no signal.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Matrix means = orthonormal_means(spec.classes, spec.dim, rng);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Matrix protos = means;
  if (spec.prototype_noise > 0.0)
    for (double& x : protos.data()) x += spec.prototype_noise * gauss(rng);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < spec.classes; ++c) names.push_back("class_" + std::to_string(c));

  std::vector<double> weights = spec.mixture;
  if (weights.empty()) weights.assign(spec.classes, 1.0 / static_cast<double>(spec.classes));
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());

  const std::size_t n = spec.n_cal + spec.n_test;
  const auto cal_counts = kshot_counts(spec.n_cal, weights);
  std::vector<std::size_t> cal_labels;
  for (std::size_t c = 0; c < spec.classes; ++c) cal_labels.insert(cal_labels.end(), cal_counts[c], c);
  Dataset ds;
  ds.bank = PrototypeBank(protos, std::move(names));
  ds.embeddings = Matrix(n, spec.dim);
  ds.labels.resize(n);
  std::vector<double> raw(spec.dim);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i < spec.n_cal ? cal_labels[i] : pick(rng);
    for (std::size_t d = 0; d < spec.dim; ++d) raw[d] = spec.separation * means(y, d) + spec.noise * gauss(rng);
    const auto e = Embedding::normalize(raw);
    std::copy(e.values().begin(), e.values().end(), ds.embeddings.row(i).begin());
    ds.labels[i] = y;
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Dataset out;
  out.bank = std::move(ds.bank);
  out.embeddings = Matrix(n, spec.dim);
  out.labels.resize(n);
  out.split.assign(n, Split::test);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = ds.embeddings.row(perm[i]);
    std::copy(src.begin(), src.end(), out.embeddings.row(i).begin());
    out.labels[i] = ds.labels[perm[i]];
    if (perm[i] < spec.n_cal) out.split[i] = Split::cal;
  }
  return out;
}

// ---------------------------------------------------------------------------
// K-shot calibration sampling

struct KShotSplit {
  std::vector<std::size_t> cal;        // positions into the pool
  std::vector<std::size_t> remainder;  // the rest, in pool order
};

/// Draws round(n_cal * m_c) pool members of every class without replacement, n_cal = C * K.
inline KShotSplit sample_kshot(std::span<const std::size_t> pool_labels, std::size_t shots,
                               std::span<const double> marginals, std::uint64_t seed) {
  const std::size_t classes = marginals.size();
  const auto counts = kshot_counts(classes * shots, marginals);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t p = 0; p < pool_labels.size(); ++p) {
    detail::require(pool_labels[p] < classes, ErrorCode::data, "pool label out of range");
    by_class[pool_labels[p]].push_back(p);
  }
  Rng rng(seed);
  std::vector<char> taken(pool_labels.size(), 0);
  KShotSplit out;
  for (std::size_t c = 0; c < classes; ++c) {
    detail::require(by_class[c].size() >= counts[c], ErrorCode::data,
                    "class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                        " examples, K-shot sampling needs " + std::to_string(counts[c]));
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
    for (std::size_t r = 0; r < counts[c]; ++r) taken[by_class[c][r]] = 1;
  }
  for (std::size_t p = 0; p < pool_labels.size(); ++p) (taken[p] ? out.cal : out.remainder).push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// One window

/// Joint pool of one window: calibration rows first, then the test batch.
struct WindowData {
  Matrix embeddings;  // N x D, unit rows
  Matrix q;           // N x C base probabilities (prior already applied)
  std::vector<FailureSignals> signals;
  std::vector<std::size_t> cal_labels;
  std::vector<std::optional<std::size_t>> test_labels;

  std::size_t n_cal() const noexcept { return cal_labels.size(); }
  std::size_t n_test() const noexcept { return test_labels.size(); }
};

struct WindowResult {
  std::vector<PredictionSet> sets;        // one per test item
  std::vector<EvaluationRecord> records;  // labeled test items only
  ConformalThreshold threshold;
  Matrix refined;  // N x C
  RefineTrace trace;
  std::size_t edges = 0;
};

/// Refined probabilities of the whole pool. Never sees labels.
inline Matrix refine_pool(const Matrix& embeddings, const Matrix& q, std::span<const double> u,
                          const RunConfig& config, RefineTrace* trace = nullptr, std::size_t* edges = nullptr) {
  const std::size_t n = q.rows();
  if (config.gamma == 0.0 || config.t_iter == 0 || n < 2) return q;
  const RefineConfig rc = config.refine_config(q.cols());
  const auto graph = build_graph(embeddings, std::min(config.k, n - 1), config.sigma);
  if (edges) *edges = graph.edges().size();
  RefineResult res;
  if (rc.kappa) {
    const auto trunc = truncate_topk(q, *rc.kappa);
    res = refine(trunc.q, graph, rc, u);
    res.z = restore_topk(res.z, q, trunc);
  } else {
    res = refine(q, graph, rc, u);
  }
  if (trace) *trace = std::move(res.trace);
  return std::move(res.z);
}

/// Refine, score calibration with its labels, calibrate, and emit sets for the batch.
/// U draws (randomized APS/RAPS) come from `rng`: calibration items first, then test items.
inline WindowResult run_window(const WindowData& w, const RunConfig& config, Rng& rng) {
  const std::size_t n = w.n_cal();
  const std::size_t m = w.n_test();
  WindowResult out;
  if (m == 0) return out;
  detail::require(n >= 1, ErrorCode::data, "window has no calibration items");
  detail::require(w.q.rows() == n + m && w.embeddings.rows() == n + m && w.signals.size() == n + m,
                  ErrorCode::dimension_mismatch, "window arrays disagree on pool size");

  std::vector<double> u(n + m);
  for (std::size_t i = 0; i < n + m; ++i) u[i] = w.signals[i].u;
  out.refined = refine_pool(w.embeddings, w.q, u, config, &out.trace, &out.edges);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto draw = [&] { return config.score.randomize ? unif(rng) : config.score.u_value; };
  const auto params = config.failure_params();

  std::vector<double> cal_scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double base = base_score(out.refined.row(i), w.cal_labels[i], config.score, draw());
    cal_scores[i] = score_failure_aware(base, w.signals[i].u, w.signals[i].attention[w.cal_labels[i]], params);
  }
  out.threshold = calibrate(cal_scores, config.alpha);

  out.sets.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t p = n + j;
    out.sets.push_back(predict_set(out.refined.row(p), w.signals[p], config.score, params, out.threshold, draw()));
    if (w.test_labels[j])
      out.records.push_back({*w.test_labels[j], out.sets.back(), argmax(out.refined.row(p))});
  }
  return out;
}

/// Plain split conformal on fixed probabilities: the reference the full pipeline must
/// reproduce when every refinement and failure-aware knob is off.
inline std::vector<PredictionSet> plain_scp(const Matrix& q_cal, std::span<const std::size_t> cal_labels,
                                            const Matrix& q_test, const ScoreRule& rule, double alpha, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto draw = [&] { return rule.randomize ? unif(rng) : rule.u_value; };
  std::vector<double> s(q_cal.rows());
  for (std::size_t i = 0; i < q_cal.rows(); ++i) s[i] = base_score(q_cal.row(i), cal_labels[i], rule, draw());
  const auto t = calibrate(s, alpha);
  std::vector<PredictionSet> sets;
  for (std::size_t j = 0; j < q_test.rows(); ++j) {
    PredictionSet set;
    const Vector scores = all_label_scores(q_test.row(j), rule, draw());
    for (std::size_t y = 0; y < scores.size(); ++y)
      if (t.admits(scores[y])) set.push_back(y);
    sets.push_back(std::move(set));
  }
  return sets;
}

// ---------------------------------------------------------------------------
// Trials

inline std::unique_ptr<FailureProvider> make_provider(const RunConfig& config) {
  switch (config.provider) {
    case ProviderKind::heuristic: return std::make_unique<HeuristicProvider>();
    case ProviderKind::oracle: return std::make_unique<OracleProvider>();
    case ProviderKind::vilu: return std::make_unique<ViluProvider>(load_vilu_bundle(config.vilu_bundle));
  }
  return std::make_unique<HeuristicProvider>();
}

/// Rough bytes held while processing one window of n rows.
inline std::size_t window_memory_estimate(std::size_t n, std::size_t dim, std::size_t classes, std::size_t edges) {
  const std::size_t dense = n * dim + 6 * n * classes;  // embeddings, q, z, next, aggregate, signals
  const std::size_t sparse = edges * (2 * sizeof(std::size_t) + sizeof(double)) +
                             2 * edges * (sizeof(std::size_t) + sizeof(double)) + (n + 1) * sizeof(std::size_t);
  return dense * sizeof(double) + sparse;
}

struct TrialResult {
  ConformalReport report;
  std::vector<EvaluationRecord> records;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string failure;
  ErrorCode failure_code = ErrorCode::numerical;
};

/// One trial on a fixed calibration/test assignment of `ds`.
inline TrialResult run_trial(const Dataset& ds, std::span<const std::size_t> cal_rows,
                             std::span<const std::size_t> test_rows, const RunConfig& config,
                             const FailureProvider& provider, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  TrialResult tr;
  tr.seed = seed;
  Rng rng(seed);
  const std::size_t classes = ds.classes();

  std::vector<std::size_t> cal_labels;
  for (auto r : cal_rows) {
    detail::require(ds.labels[r].has_value(), ErrorCode::data, "calibration row without a label");
    cal_labels.push_back(*ds.labels[r]);
  }

  // Base probabilities and failure signals are per-item maps, identical for every window.
  std::vector<std::size_t> rows(cal_rows.begin(), cal_rows.end());
  rows.insert(rows.end(), test_rows.begin(), test_rows.end());
  const Matrix emb = gather_rows(ds.embeddings, rows);
  Matrix q = zero_shot_matrix(emb, ds.bank, config.tau);
  if (config.beta > 0.0) q = apply_prior(q, estimate_prior(cal_labels, classes, config.prior_pseudo_count), config.beta);
  std::vector<FailureSignals> signals(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ProbabilityVector qi(Vector(q.row(i).begin(), q.row(i).end()));
    SignalInput in{emb.row(i), &ds.bank, &qi, std::nullopt};
    if (provider.needs_labels()) in.label = ds.labels[rows[i]];
    signals[i] = provider.signals(in);
  }

  std::vector<std::size_t> cal_pos(cal_rows.size()), test_pos(test_rows.size());
  std::iota(cal_pos.begin(), cal_pos.end(), std::size_t{0});
  std::iota(test_pos.begin(), test_pos.end(), cal_rows.size());
  const auto plan = make_window_plan(cal_pos, test_pos, config.window);

  std::size_t peak = 0;
  for (const auto& batch : plan.test_batches) {
    std::vector<std::size_t> pool(cal_pos);
    pool.insert(pool.end(), batch.begin(), batch.end());
    WindowData w;
    w.embeddings = gather_rows(emb, pool);
    w.q = gather_rows(q, pool);
    for (auto p : pool) w.signals.push_back(signals[p]);
    w.cal_labels = cal_labels;
    for (auto p : batch) w.test_labels.push_back(ds.labels[rows[p]]);
    auto res = run_window(w, config, rng);
    peak = std::max(peak, window_memory_estimate(pool.size(), emb.cols(), classes, res.edges));
    tr.records.insert(tr.records.end(), res.records.begin(), res.records.end());
  }
  tr.report = summarize(tr.records, config.alpha, classes);
  tr.report.peak_mem_estimate = peak;
  tr.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return tr;
}

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;
};

struct AggregateReport {
  MetricSummary coverage, mean_size, ccv, aca, wall_time_s;
  std::size_t n_trials = 0;
  std::size_t n_failed = 0;
  double alpha = 0.1;
  std::size_t peak_mem_estimate = 0;
  double time_per_image_s = 0.0;

  /// Standard error of the mean coverage across trials.
  double coverage_se() const {
    return n_trials > 0 ? coverage.stddev / std::sqrt(static_cast<double>(n_trials)) : 0.0;
  }
};

struct ExperimentReport {
  RunConfig config;
  AggregateReport aggregate;
  std::vector<TrialResult> trials;
};

inline MetricSummary summarize_metric(const std::vector<double>& v) {
  MetricSummary s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

/// Mean and sample standard deviation of each metric, reduced in trial order.
inline AggregateReport aggregate(const std::vector<TrialResult>& trials, double alpha) {
  AggregateReport a;
  a.alpha = alpha;
  std::vector<double> cov, size, ccv_v, aca_v, wall;
  std::size_t images = 0;
  for (const auto& t : trials) {
    if (!t.ok) {
      ++a.n_failed;
      continue;
    }
    cov.push_back(t.report.coverage);
    size.push_back(t.report.mean_size);
    ccv_v.push_back(t.report.ccv);
    aca_v.push_back(t.report.aca);
    wall.push_back(t.report.wall_time_s);
    images += t.report.n_test;
    a.peak_mem_estimate = std::max(a.peak_mem_estimate, t.report.peak_mem_estimate);
  }
  a.n_trials = cov.size();
  a.coverage = summarize_metric(cov);
  a.mean_size = summarize_metric(size);
  a.ccv = summarize_metric(ccv_v);
  a.aca = summarize_metric(aca_v);
  a.wall_time_s = summarize_metric(wall);
  double total = 0.0;
  for (double w : wall) total += w;
  a.time_per_image_s = images > 0 ? total / static_cast<double>(images) : 0.0;
  return a;
}

/// Runs `fn(t)` for t in [0, n) on `threads` workers; results land in slot t.
template <class Fn>
auto parallel_trials(std::size_t n, std::size_t threads, Fn fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<R> out(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < n;) out[t] = fn(t);
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    worker();
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return out;
}

/// Calibration/test rows of one trial. Synthetic runs redraw the whole dataset;
/// file-backed runs resample a K-shot calibration split from the labeled cal pool.
struct TrialData {
  std::shared_ptr<const Dataset> dataset;
  std::vector<std::size_t> cal_rows;
  std::vector<std::size_t> test_rows;
};

inline TrialData prepare_trial(const RunConfig& config, const std::shared_ptr<const Dataset>& fixed,
                               std::uint64_t seed) {
  TrialData td;
  if (config.synthetic) {
    SyntheticSpec spec = *config.synthetic;
    spec.seed = splitmix64(spec.seed ^ seed);
    td.dataset = std::make_shared<const Dataset>(generate_synthetic(spec));
    td.cal_rows = td.dataset->rows_in(Split::cal);
    td.test_rows = td.dataset->rows_in(Split::test);
    return td;
  }
  detail::require(fixed != nullptr, ErrorCode::config, "no dataset loaded");
  td.dataset = fixed;
  const auto pool = fixed->rows_in(Split::cal);
  td.test_rows = fixed->rows_in(Split::test);
  if (config.shots == 0) {
    td.cal_rows = pool;
    return td;
  }
  std::vector<std::size_t> pool_labels;
  for (auto r : pool) {
    detail::require(fixed->labels[r].has_value(), ErrorCode::data, "calibration pool row without a label");
    pool_labels.push_back(*fixed->labels[r]);
  }
  std::vector<double> marg(fixed->classes(), 0.0);
  for (auto y : pool_labels) marg[y] += 1.0;
  const auto split = sample_kshot(pool_labels, config.shots, marg, splitmix64(seed ^ 0x6B73686F74ull));
  for (auto p : split.cal) td.cal_rows.push_back(pool[p]);
  return td;
}

inline std::shared_ptr<const Dataset> load_fixed_dataset(const RunConfig& config) {
  if (config.synthetic) return nullptr;
  return std::make_shared<const Dataset>(load_dataset(dataset_paths_in(config.data_dir)));
}

template <class TrialFn>
std::vector<TrialResult> run_trials(const RunConfig& config, TrialFn body) {
  return parallel_trials(config.trials, config.threads, [&](std::size_t t) {
    const std::uint64_t seed = trial_seed(config.seed, t);
    try {
      return body(t, seed);
    } catch (const Error& e) {
      TrialResult bad;
      bad.seed = seed;
      bad.ok = false;
      bad.failure = e.what();
      bad.failure_code = e.code();
      return bad;
    } catch (const std::exception& e) {
      TrialResult bad;
      bad.seed = seed;
      bad.ok = false;
      bad.failure = e.what();
      return bad;
    }
  });
}

/// Trials x windows of the full pipeline.
inline ExperimentReport run_experiment(const RunConfig& config,
                                       std::shared_ptr<const Dataset> fixed = nullptr,
                                       const FailureProvider* provider = nullptr) {
  config.validate();
  if (!fixed) fixed = load_fixed_dataset(config);
  std::unique_ptr<FailureProvider> owned;
  if (!provider) {
    owned = make_provider(config);
    provider = owned.get();
  }
  ExperimentReport rep;
  rep.config = config;
  rep.trials = run_trials(config, [&](std::size_t, std::uint64_t seed) {
    const auto td = prepare_trial(config, fixed, seed);
    return run_trial(*td.dataset, td.cal_rows, td.test_rows, config, *provider, seed);
  });
  rep.aggregate = aggregate(rep.trials, config.alpha);
  return rep;
}

// ---------------------------------------------------------------------------
// Double-dip negative control

/// Nearest-class-mean probe fitted on the calibration rows, used as the class bank.
inline PrototypeBank fit_class_mean_probe(const Dataset& ds, std::span<const std::size_t> cal_rows) {
  const std::size_t classes = ds.classes();
  Matrix means(classes, ds.embeddings.cols());
  std::vector<std::size_t> count(classes, 0);
  for (auto r : cal_rows) {
    detail::require(ds.labels[r].has_value(), ErrorCode::data, "calibration row without a label");
    const auto y = *ds.labels[r];
    ++count[y];
    for (std::size_t d = 0; d < means.cols(); ++d) means(y, d) += ds.embeddings(r, d);
  }
  for (std::size_t c = 0; c < classes; ++c)
    detail::require(count[c] > 0, ErrorCode::data,
                    "class " + std::to_string(c) + " is absent from calibration; the probe is undefined");
  return PrototypeBank(means, ds.bank.class_names());
}

/// Probe@cal + SCP@same: adapt on the calibration labels, then conformalize on the same split.
/// Breaks exchangeability on purpose.
inline TrialResult double_dip_control(const Dataset& ds, std::span<const std::size_t> cal_rows,
                                      std::span<const std::size_t> test_rows, const RunConfig& config,
                                      std::uint64_t seed) {
  TrialResult tr;
  tr.seed = seed;
  Rng rng(seed);
  const auto probe = fit_class_mean_probe(ds, cal_rows);
  const Matrix q_cal = zero_shot_matrix(gather_rows(ds.embeddings, cal_rows), probe, config.tau);
  const Matrix q_test = zero_shot_matrix(gather_rows(ds.embeddings, test_rows), probe, config.tau);
  std::vector<std::size_t> cal_labels;
  for (auto r : cal_rows) cal_labels.push_back(*ds.labels[r]);
  const auto sets = plain_scp(q_cal, cal_labels, q_test, config.score, config.alpha, rng);
  for (std::size_t j = 0; j < test_rows.size(); ++j)
    if (ds.labels[test_rows[j]])
      tr.records.push_back({*ds.labels[test_rows[j]], sets[j], argmax(q_test.row(j))});
  tr.report = summarize(tr.records, config.alpha, ds.classes());
  return tr;
}

struct ControlReport {
  RunConfig config;
  AggregateReport probe_aggregate;
  AggregateReport legal_aggregate;
  std::vector<TrialResult> probe_trials;
  std::vector<TrialResult> legal_trials;
};

/// The illegal probe baseline next to the legal label-free pipeline on identical trials.
inline ControlReport run_control(const RunConfig& config, std::shared_ptr<const Dataset> fixed = nullptr) {
  config.validate();
  if (!fixed) fixed = load_fixed_dataset(config);
  RunConfig legal = config;
  legal.beta = 0.0;
  const auto provider = make_provider(legal);
  ControlReport rep;
  rep.config = config;
  std::vector<TrialResult> legal_trials(config.trials);
  rep.probe_trials = run_trials(config, [&](std::size_t t, std::uint64_t seed) {
    const auto td = prepare_trial(config, fixed, seed);
    try {
      legal_trials[t] = run_trial(*td.dataset, td.cal_rows, td.test_rows, legal, *provider, seed);
    } catch (const Error& e) {
      legal_trials[t].ok = false;
      legal_trials[t].failure = e.what();
      legal_trials[t].failure_code = e.code();
    }
    return double_dip_control(*td.dataset, td.cal_rows, td.test_rows, config, seed);
  });
  rep.legal_trials = std::move(legal_trials);
  rep.probe_aggregate = aggregate(rep.probe_trials, config.alpha);
  rep.legal_aggregate = aggregate(rep.legal_trials, config.alpha);
  return rep;
}

/// Fraction of rows whose zero-shot argmax matches the label.
inline double zero_shot_accuracy(const Dataset& ds, double tau = kDefaultTemperature) {
  const Matrix q = zero_shot_matrix(ds.embeddings, ds.bank, tau);
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.labels[i]) continue;
    ++n;
    hit += argmax(q.row(i)) == *ds.labels[i] ? 1 : 0;
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

}  // namespace lata
