// lata: command-line front end for experiments, synthetic data and ablation sweeps.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lata/lata.hpp"
#include "lata/report.hpp"

namespace fs = std::filesystem;
using namespace lata;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return kExitConfig;
    case ErrorCode::numerical: return kExitNumerical;
    default: return kExitData;
  }
}

// Every flag is optional so that only flags given on the command line override the config file.
struct Overrides {
  std::string config_path;
  std::optional<double> alpha, k_reg, gamma_raps, u_value, gamma, beta, prior_pseudo_count, lambda, eta, tau;
  std::optional<std::string> score, kappa, sigma, gate_threshold, provider, vilu_bundle, data_dir, out;
  std::optional<bool> randomize;
  std::optional<std::size_t> t_iter, k, window, shots, trials, threads;
  std::optional<std::uint64_t> seed;
  bool timing = false;

  bool synthetic = false;
  std::optional<std::size_t> classes, dim, n_cal, n_test;
  std::optional<double> separation, noise, prototype_noise;
  std::optional<std::vector<double>> mixture;
  std::optional<std::uint64_t> data_seed;

  std::string format = "text";
};

void add_run_flags(CLI::App& app, Overrides& o) {
  app.add_option("--config", o.config_path, "JSON config file; flags override its fields");
  app.add_option("--alpha", o.alpha, "miscoverage level (0.10)");
  app.add_option("--score", o.score, "lac | aps | raps (lac)");
  app.add_option("--randomize", o.randomize, "draw U ~ Uniform(0,1) for APS/RAPS (false)");
  app.add_option("--u-value", o.u_value, "fixed U when not randomizing (1)");
  app.add_option("--k-reg", o.k_reg, "RAPS rank offset (1)");
  app.add_option("--gamma-raps", o.gamma_raps, "RAPS penalty (0.001)");
  app.add_option("--gamma", o.gamma, "graph coupling strength (0.35)");
  app.add_option("--t-iter", o.t_iter, "refinement iterations (8)");
  app.add_option("-k,--k", o.k, "neighbors per node (15)");
  app.add_option("--sigma", o.sigma, "kernel bandwidth, or 'median' (median)");
  app.add_option("--beta", o.beta, "label-informed prior exponent (0)");
  app.add_option("--prior-pseudo-count", o.prior_pseudo_count, "Dirichlet smoothing of the prior (1)");
  app.add_option("--kappa", o.kappa, "top-kappa truncation, or 'none' (128)");
  app.add_option("--lambda", o.lambda, "uncertainty weight (0.5)");
  app.add_option("--eta", o.eta, "attention bonus (0.25)");
  app.add_option("--gate-threshold", o.gate_threshold, "freeze rows with u below this, or 'none' (none)");
  app.add_option("--tau", o.tau, "softmax temperature (1)");
  app.add_option("-W,--window", o.window, "window size W (256)");
  app.add_option("-K,--shots", o.shots, "shots per class for K-shot calibration; 0 uses the whole pool (16)");
  app.add_option("--trials", o.trials, "number of seeds (100)");
  app.add_option("--seed", o.seed, "base seed (0)");
  app.add_option("--threads", o.threads, "worker threads (1)");
  app.add_flag("--timing", o.timing, "include wall-clock fields in the JSON report");
  app.add_option("--provider", o.provider, "heuristic | vilu | oracle (heuristic)");
  app.add_option("--vilu-bundle", o.vilu_bundle, "bundle.json of a ViLU weight bundle");
  app.add_option("--data-dir", o.data_dir, "dataset directory");
  app.add_option("--out", o.out, "output directory for JSON/text/CSV reports");
  app.add_option("--format", o.format, "stdout format: text | json")->check(CLI::IsMember({"text", "json"}));

  app.add_flag("--synthetic", o.synthetic, "use a synthetic Gaussian-mixture dataset");
  app.add_option("--classes", o.classes, "synthetic: number of classes (5)");
  app.add_option("--dim", o.dim, "synthetic: embedding dimension (32)");
  app.add_option("--separation", o.separation, "synthetic: class mean norm (1)");
  app.add_option("--noise", o.noise, "synthetic: per-coordinate noise (0.5)");
  app.add_option("--mixture", o.mixture, "synthetic: class weights")->delimiter(',');
  app.add_option("--n-cal", o.n_cal, "synthetic: calibration size (80)");
  app.add_option("--n-test", o.n_test, "synthetic: test size (920)");
  app.add_option("--prototype-noise", o.prototype_noise, "synthetic: prototype perturbation (0)");
  app.add_option("--data-seed", o.data_seed, "synthetic: data seed (0)");
}

template <class T>
void set_if(const std::optional<T>& src, T& dst) {
  if (src) dst = *src;
}

std::optional<double> parse_optional_double(const std::string& s, const char* flag, const char* none_word) {
  if (s == none_word) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::config, std::string(flag) + " expects a number or '" + none_word + "', got '" + s + "'");
}

std::optional<std::size_t> parse_kappa(const std::string& s) {
  if (s == "none") return std::nullopt;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used == s.size() && v >= 1) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::config, "--kappa expects a positive integer or 'none', got '" + s + "'");
}

RunConfig build_config(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  set_if(o.alpha, c.alpha);
  if (o.score) c.score.kind = parse_score_kind(*o.score);
  set_if(o.randomize, c.score.randomize);
  set_if(o.u_value, c.score.u_value);
  set_if(o.k_reg, c.score.k_reg);
  set_if(o.gamma_raps, c.score.gamma_raps);
  set_if(o.gamma, c.gamma);
  set_if(o.t_iter, c.t_iter);
  set_if(o.k, c.k);
  if (o.sigma) c.sigma = parse_optional_double(*o.sigma, "--sigma", "median");
  set_if(o.beta, c.beta);
  set_if(o.prior_pseudo_count, c.prior_pseudo_count);
  if (o.kappa) c.kappa = parse_kappa(*o.kappa);
  set_if(o.lambda, c.lambda);
  set_if(o.eta, c.eta);
  if (o.gate_threshold) c.gate_threshold = parse_optional_double(*o.gate_threshold, "--gate-threshold", "none");
  set_if(o.tau, c.tau);
  set_if(o.window, c.window);
  set_if(o.shots, c.shots);
  set_if(o.trials, c.trials);
  set_if(o.seed, c.seed);
  set_if(o.threads, c.threads);
  if (o.timing) c.record_timing = true;
  if (o.provider) c.provider = parse_provider(*o.provider);
  set_if(o.vilu_bundle, c.vilu_bundle);
  set_if(o.data_dir, c.data_dir);
  set_if(o.out, c.out);

  const bool any_synthetic = o.classes || o.dim || o.n_cal || o.n_test || o.separation || o.noise ||
                             o.prototype_noise || o.mixture || o.data_seed;
  if (o.data_dir && (o.synthetic || any_synthetic))
    throw Error(ErrorCode::config, "choose either --data-dir or a synthetic dataset");
  if (o.data_dir) c.synthetic.reset();
  if ((o.synthetic || any_synthetic) && !c.synthetic) c.synthetic = SyntheticSpec{};
  if (c.synthetic) {
    c.data_dir.clear();
    auto& s = *c.synthetic;
    set_if(o.classes, s.classes);
    set_if(o.dim, s.dim);
    set_if(o.separation, s.separation);
    set_if(o.noise, s.noise);
    set_if(o.mixture, s.mixture);
    set_if(o.n_cal, s.n_cal);
    set_if(o.n_test, s.n_test);
    set_if(o.prototype_noise, s.prototype_noise);
    set_if(o.data_seed, s.seed);
  }
  c.validate();
  return c;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  detail::require(static_cast<bool>(out), ErrorCode::io_failure, "cannot write '" + p.string() + "'");
  out << text;
  detail::require(static_cast<bool>(out), ErrorCode::io_failure, "write failed for '" + p.string() + "'");
}

fs::path prepare_out(const std::string& out) {
  const fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  detail::require(!ec && fs::is_directory(dir), ErrorCode::io_failure, "cannot create output directory '" + out + "'");
  return dir;
}

// Failed trials are reported, never skipped; the exit code reflects the first failure.
int report_failures(const std::vector<TrialResult>& trials) {
  int code = kExitOk;
  for (std::size_t t = 0; t < trials.size(); ++t) {
    if (trials[t].ok) continue;
    std::cerr << "trial " << t << " (seed " << trials[t].seed << ") failed: " << trials[t].failure << '\n';
    if (code == kExitOk) code = exit_code_for(trials[t].failure_code);
  }
  return code;
}

int cmd_run(const RunConfig& c, const std::string& format) {
  const auto rep = run_experiment(c);
  const auto json = to_json(rep).dump(2) + "\n";
  const auto table = text_table({{"lata", rep.aggregate}});
  if (!c.out.empty()) {
    const auto dir = prepare_out(c.out);
    write_text(dir / "report.json", json);
    write_text(dir / "report.txt", table);
    write_text(dir / "coverage_size.csv", coverage_size_csv(rep.trials));
  }
  std::cout << (format == "json" ? json : table);
  return report_failures(rep.trials);
}

int cmd_control(const RunConfig& c, const std::string& format) {
  const auto rep = run_control(c);
  const auto json = to_json(rep).dump(2) + "\n";
  const auto table = text_table({{"probe@cal+scp@same", rep.probe_aggregate}, {"label-free", rep.legal_aggregate}});
  if (!c.out.empty()) {
    const auto dir = prepare_out(c.out);
    write_text(dir / "control.json", json);
    write_text(dir / "control.txt", table);
  }
  std::cout << (format == "json" ? json : table);
  const int a = report_failures(rep.probe_trials);
  const int b = report_failures(rep.legal_trials);
  return a != kExitOk ? a : b;
}

RunConfig with_parameter(RunConfig c, const std::string& param, double v) {
  auto as_count = [&](const char* name) {
    if (!(v >= 0.0) || v != std::floor(v))
      throw Error(ErrorCode::config, std::string(name) + " values must be non-negative integers");
    return static_cast<std::size_t>(v);
  };
  if (param == "gamma") c.gamma = v;
  else if (param == "k") c.k = as_count("k");
  else if (param == "t_iter") c.t_iter = as_count("t_iter");
  else if (param == "beta") c.beta = v;
  else if (param == "lambda") c.lambda = v;
  else if (param == "eta") c.eta = v;
  else if (param == "tau") c.tau = v;
  else if (param == "W") c.window = as_count("W");
  else if (param == "K") {
    c.shots = as_count("K");
    if (c.synthetic) c.synthetic->n_cal = c.synthetic->classes * c.shots;
  } else if (param == "kappa") c.kappa = as_count("kappa");
  else if (param == "gate_threshold") c.gate_threshold = v;
  else throw Error(ErrorCode::config, "unknown ablation parameter '" + param + "'");
  c.validate();
  return c;
}

int cmd_ablate(const RunConfig& c, const std::string& param, const std::vector<double>& values,
               const std::string& format) {
  detail::require(!values.empty(), ErrorCode::config, "--values needs at least one value");
  std::vector<RunConfig> configs;
  for (double v : values) configs.push_back(with_parameter(c, param, v));
  std::vector<AblationPoint> pts;
  std::vector<std::pair<std::string, AggregateReport>> rows;
  int code = kExitOk;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto rep = run_experiment(configs[i]);
    pts.push_back({param, values[i], rep.aggregate});
    std::ostringstream label;
    label << param << '=' << values[i];
    rows.emplace_back(label.str(), rep.aggregate);
    const int rc = report_failures(rep.trials);
    if (code == kExitOk) code = rc;
  }
  const auto json = to_json(pts, c).dump(2) + "\n";
  const auto table = text_table(rows);
  if (!c.out.empty()) {
    const auto dir = prepare_out(c.out);
    write_text(dir / "ablation.json", json);
    write_text(dir / "ablation.txt", table);
    write_text(dir / "ablation.csv", ablation_csv(pts));
  }
  std::cout << (format == "json" ? json : table);
  return code;
}

int cmd_synth(const Overrides& o) {
  detail::require(o.out.has_value(), ErrorCode::config, "synth needs --out DIR");
  SyntheticSpec s;
  if (!o.config_path.empty()) {
    const auto c = load_config(o.config_path);
    if (c.synthetic) s = *c.synthetic;
  }
  set_if(o.classes, s.classes);
  set_if(o.dim, s.dim);
  set_if(o.separation, s.separation);
  set_if(o.noise, s.noise);
  set_if(o.mixture, s.mixture);
  set_if(o.n_cal, s.n_cal);
  set_if(o.n_test, s.n_test);
  set_if(o.prototype_noise, s.prototype_noise);
  set_if(o.data_seed, s.seed);
  const auto ds = generate_synthetic(s);
  const auto dir = prepare_out(*o.out);
  write_dataset(ds, dir);
  std::cout << "wrote " << ds.size() << " items (" << s.n_cal << " cal, " << s.n_test << " test, " << s.classes
            << " classes) to " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-free transductive refinement with conformal prediction sets"};
  app.require_subcommand(1);

  Overrides run_o, control_o, ablate_o, synth_o;
  auto* run = app.add_subcommand("run", "run an experiment from a config file and flag overrides");
  add_run_flags(*run, run_o);
  auto* control = app.add_subcommand("control", "double-dip negative control next to the label-free pipeline");
  add_run_flags(*control, control_o);
  auto* ablate = app.add_subcommand("ablate", "sweep one parameter over a list of values");
  add_run_flags(*ablate, ablate_o);
  std::string param;
  std::vector<double> values;
  ablate->add_option("--param", param, "gamma | k | t_iter | beta | lambda | eta | tau | W | K | kappa | gate_threshold")
      ->required();
  ablate->add_option("--values", values, "comma-separated values")->required()->delimiter(',');

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset to a directory");
  synth->add_option("--config", synth_o.config_path, "JSON config whose synthetic block is used");
  synth->add_option("--out", synth_o.out, "output directory")->required();
  synth->add_option("--classes", synth_o.classes, "number of classes (5)");
  synth->add_option("--dim", synth_o.dim, "embedding dimension (32)");
  synth->add_option("--separation", synth_o.separation, "class mean norm (1)");
  synth->add_option("--noise", synth_o.noise, "per-coordinate noise (0.5)");
  synth->add_option("--mixture", synth_o.mixture, "class weights")->delimiter(',');
  synth->add_option("--n-cal", synth_o.n_cal, "calibration size (80)");
  synth->add_option("--n-test", synth_o.n_test, "test size (920)");
  synth->add_option("--prototype-noise", synth_o.prototype_noise, "prototype perturbation (0)");
  synth->add_option("--seed", synth_o.data_seed, "data seed (0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(build_config(run_o), run_o.format);
    if (*control) return cmd_control(build_config(control_o), control_o.format);
    if (*ablate) return cmd_ablate(build_config(ablate_o), param, values, ablate_o.format);
    if (*synth) return cmd_synth(synth_o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}
