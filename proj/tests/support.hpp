#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lata/lata.hpp"

namespace lata::fixtures {

inline Matrix random_unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(n, d);
  for (double& x : m.data()) x = g(rng);
  return normalize_rows(m);
}

inline Matrix random_simplex_rows(std::size_t n, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> e(1.0);
  Matrix m(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double& x : m.row(i)) s += (x = e(rng) + 1e-3);
    for (double& x : m.row(i)) x /= s;
  }
  return m;
}

inline PrototypeBank identity_bank(std::size_t c, std::size_t d) {
  Matrix p(c, d);
  for (std::size_t k = 0; k < c; ++k) p(k, k) = 1.0;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < c; ++k) names.push_back("c" + std::to_string(k));
  return PrototypeBank(p, names);
}

class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("lata_test_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline RunConfig small_synthetic_config(std::size_t trials = 3) {
  RunConfig c;
  SyntheticSpec s;
  s.classes = 4;
  s.dim = 16;
  s.noise = 0.3;
  s.n_cal = 40;
  s.n_test = 160;
  c.synthetic = s;
  c.window = 96;
  c.k = 8;
  c.trials = trials;
  c.seed = 11;
  return c;
}

}  // namespace lata::fixtures
