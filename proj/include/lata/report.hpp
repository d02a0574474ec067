#pragma once

// Serialization of experiment results: deterministic JSON, an aligned text table,
// and CSV of coverage/size points.

#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lata/config.hpp"
#include "lata/harness.hpp"
#include "lata/metrics.hpp"

namespace lata {

using ordered_json = nlohmann::ordered_json;

/// Timing fields are wall-clock dependent, so they are written only when asked for.
inline ordered_json to_json(const ConformalReport& r, bool timing) {
  ordered_json j;
  j["coverage"] = r.coverage;
  j["mean_size"] = r.mean_size;
  j["ccv"] = r.ccv;
  j["aca"] = r.aca;
  j["n_test"] = r.n_test;
  j["alpha"] = r.alpha;
  j["excluded_classes"] = r.excluded_classes;
  j["peak_mem_estimate"] = r.peak_mem_estimate;
  if (timing) j["wall_time_s"] = r.wall_time_s;
  return j;
}

inline ordered_json to_json(const MetricSummary& m) {
  ordered_json j;
  j["mean"] = m.mean;
  j["std"] = m.stddev;
  return j;
}

inline ordered_json to_json(const AggregateReport& a, bool timing) {
  ordered_json j;
  j["n_trials"] = a.n_trials;
  j["n_failed"] = a.n_failed;
  j["alpha"] = a.alpha;
  j["coverage"] = to_json(a.coverage);
  j["coverage_se"] = a.coverage_se();
  j["mean_size"] = to_json(a.mean_size);
  j["ccv"] = to_json(a.ccv);
  j["aca"] = to_json(a.aca);
  j["peak_mem_estimate"] = a.peak_mem_estimate;
  if (timing) {
    j["wall_time_s"] = to_json(a.wall_time_s);
    j["time_per_image_s"] = a.time_per_image_s;
  }
  return j;
}

inline ordered_json to_json(const TrialResult& t, std::size_t index, bool timing) {
  ordered_json j;
  j["trial"] = index;
  j["seed"] = t.seed;
  j["ok"] = t.ok;
  if (t.ok)
    j["report"] = to_json(t.report, timing);
  else
    j["failure"] = t.failure;
  return j;
}

inline ordered_json trials_json(const std::vector<TrialResult>& trials, bool timing) {
  ordered_json arr = ordered_json::array();
  for (std::size_t t = 0; t < trials.size(); ++t) arr.push_back(to_json(trials[t], t, timing));
  return arr;
}

inline ordered_json to_json(const ExperimentReport& r) {
  const bool timing = r.config.record_timing;
  ordered_json j;
  j["config"] = to_json(r.config);
  j["aggregate"] = to_json(r.aggregate, timing);
  j["trials"] = trials_json(r.trials, timing);
  return j;
}

inline ordered_json to_json(const ControlReport& r) {
  const bool timing = r.config.record_timing;
  ordered_json j;
  j["config"] = to_json(r.config);
  j["probe_on_cal"] = to_json(r.probe_aggregate, timing);
  j["label_free"] = to_json(r.legal_aggregate, timing);
  j["probe_trials"] = trials_json(r.probe_trials, timing);
  j["label_free_trials"] = trials_json(r.legal_trials, timing);
  return j;
}

struct AblationPoint {
  std::string parameter;
  double value = 0.0;
  AggregateReport aggregate;
};

inline ordered_json to_json(const std::vector<AblationPoint>& pts, const RunConfig& config) {
  ordered_json j;
  j["config"] = to_json(config);
  ordered_json arr = ordered_json::array();
  for (const auto& p : pts) {
    ordered_json e;
    e["parameter"] = p.parameter;
    e["value"] = p.value;
    e["aggregate"] = to_json(p.aggregate, config.record_timing);
    arr.push_back(std::move(e));
  }
  j["points"] = std::move(arr);
  return j;
}

inline std::string format_fixed(double v, int precision) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

/// Aligned table: one row per labelled aggregate.
inline std::string text_table(const std::vector<std::pair<std::string, AggregateReport>>& rows) {
  const std::vector<std::string> head = {"method", "coverage", "size", "CCV", "ACA", "trials"};
  std::vector<std::vector<std::string>> cells;
  cells.push_back(head);
  for (const auto& [name, a] : rows) {
    cells.push_back({name, format_fixed(a.coverage.mean, 4) + " +/- " + format_fixed(a.coverage.stddev, 4),
                     format_fixed(a.mean_size.mean, 3), format_fixed(a.ccv.mean, 2), format_fixed(a.aca.mean, 2),
                     std::to_string(a.n_trials)});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& r : cells)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::ostringstream out;
  for (const auto& r : cells) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) out << "  ";
      if (c == 0)
        out << std::left << std::setw(static_cast<int>(width[c])) << r[c];
      else
        out << std::right << std::setw(static_cast<int>(width[c])) << r[c];
    }
    out << '\n';
  }
  return out.str();
}

/// One line per trial: trial,seed,coverage,mean_size,ccv,aca.
inline std::string coverage_size_csv(const std::vector<TrialResult>& trials) {
  std::ostringstream out;
  out << "trial,seed,coverage,mean_size,ccv,aca\n";
  out << std::setprecision(17);
  for (std::size_t t = 0; t < trials.size(); ++t) {
    if (!trials[t].ok) continue;
    const auto& r = trials[t].report;
    out << t << ',' << trials[t].seed << ',' << r.coverage << ',' << r.mean_size << ',' << r.ccv << ',' << r.aca
        << '\n';
  }
  return out.str();
}

inline std::string ablation_csv(const std::vector<AblationPoint>& pts) {
  std::ostringstream out;
  out << "parameter,value,coverage,coverage_std,mean_size,ccv,aca,trials\n";
  out << std::setprecision(17);
  for (const auto& p : pts) {
    const auto& a = p.aggregate;
    out << p.parameter << ',' << p.value << ',' << a.coverage.mean << ',' << a.coverage.stddev << ','
        << a.mean_size.mean << ',' << a.ccv.mean << ',' << a.aca.mean << ',' << a.n_trials << '\n';
  }
  return out.str();
}

}  // namespace lata
