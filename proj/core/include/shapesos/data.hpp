#pragma once

// Synthetic data, the Bernstein approximation operator and the RMSE
// benchmark harness.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "shapesos/estimators.hpp"
#include "shapesos/poly.hpp"

namespace shapesos::data {

using est::Dataset;

// s log s with s = x_1 + ... + x_n, extended by 0 at the origin.
double convex_target(const Eigen::Ref<const Eigen::VectorXd>& x);

// X uniform on [0,1]^n, Y = convex_target(X) + sigma * N(0, 1).
Dataset synth_convex(int m, int n, double sigma, std::uint64_t seed);

// Largest lattice (d+1)^n the Bernstein operator accepts.
inline constexpr double kBernsteinMaxLattice = 4e6;

// Tensor-product Bernstein polynomial of f on `box` with degree d in each
// coordinate:
//   sum_{k in {0..d}^n} f(l + (k/d)(u - l)) prod_i C(d,k_i) t_i^k_i (1-t_i)^(d-k_i)
// with t = (x - l)/(u - l). Total degree is n*d.
poly::Polynomial bernstein(const std::function<double(const Eigen::VectorXd&)>& f, int n, int d,
                           const poly::Box& box);
poly::Polynomial bernstein(const std::function<double(const Eigen::VectorXd&)>& f, int n, int d);

// Shuffled split; the first round(fraction * m) rows go to train.
std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed);

struct BenchmarkConfig {
  std::vector<int> m{100, 500};
  std::vector<int> n{2};
  std::vector<int> d{2, 4};
  std::vector<int> r{1};
  int seeds = 5;
  std::uint64_t base_seed = 1;
  int test_points = 1000;  // noiseless targets
  double sigma = 1.0;
  est::FitOptions fit;
};

struct BenchmarkRun {
  int m, n, d, r;
  std::uint64_t seed;
  double train_rmse, test_rmse, solve_s;
};

struct BenchmarkCell {
  int m, n, d, r;
  double train_rmse, test_rmse, solve_s;  // medians over seeds
  int runs;
};

struct BenchmarkResult {
  std::vector<BenchmarkCell> cells;
  std::vector<BenchmarkRun> runs;
};

// Fits the convex estimator on every grid cell and seed. Cells whose degree
// cannot be balanced by r are skipped.
BenchmarkResult benchmark(const BenchmarkConfig& config);
// Writes m,n,d,r,train_rmse,test_rmse,solve_s (medians).
void write_benchmark_csv(const std::filesystem::path& path, const BenchmarkResult& result);
// Long-format per-seed rows for plotting.
void write_benchmark_runs(const std::filesystem::path& path, const BenchmarkResult& result);

double median(std::vector<double> v);

}  // namespace shapesos::data
