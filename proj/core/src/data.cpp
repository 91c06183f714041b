#include "shapesos/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "shapesos/errors.hpp"

namespace shapesos::data {

double convex_target(const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double s = x.sum();
  if (s <= 0.0) return 0.0;
  return s * std::log(s);
}

Dataset synth_convex(int m, int n, double sigma, std::uint64_t seed) {
  if (m < 1 || n < 1) throw ValidationError("synthetic data needs m >= 1 and n >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  Dataset d;
  d.box = poly::Box::unit(n);
  d.X.resize(m, n);
  d.Y.resize(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) d.X(i, j) = U(rng);
    d.Y[i] = convex_target(d.X.row(i).transpose());
  }
  if (sigma != 0.0)
    for (int i = 0; i < m; ++i) d.Y[i] += sigma * N(rng);
  return d;
}

poly::Polynomial bernstein(const std::function<double(const Eigen::VectorXd&)>& f, int n, int d,
                           const poly::Box& box) {
  if (n < 1 || d < 0) throw ValidationError("Bernstein operator needs n >= 1 and d >= 0");
  if (box.dim() != n) throw DimensionMismatch("box dimension differs from n");
  if (n * std::log(d + 1.0) > std::log(kBernsteinMaxLattice))
    throw ValidationError("Bernstein lattice (d+1)^n is too large");
  const int side = d + 1;
  std::size_t total = 1;
  for (int i = 0; i < n; ++i) total *= static_cast<std::size_t>(side);

  // beta(k, e): coefficient of t^e in C(d,k) t^k (1-t)^(d-k)
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(side, side);
  for (int k = 0; k <= d; ++k)
    for (int e = k; e <= d; ++e)
      beta(k, e) = static_cast<double>(poly::binomial(d, k)) * static_cast<double>(poly::binomial(d - k, e - k)) *
                   ((e - k) % 2 ? -1.0 : 1.0);

  // Lattice values, first coordinate fastest.
  std::vector<double> T(total);
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd x(n);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rest = flat;
    for (int i = 0; i < n; ++i) {
      idx[static_cast<std::size_t>(i)] = static_cast<int>(rest % static_cast<std::size_t>(side));
      rest /= static_cast<std::size_t>(side);
      const double t = d == 0 ? 0.0 : static_cast<double>(idx[static_cast<std::size_t>(i)]) / d;
      x[i] = box.lower()[i] + t * (box.upper()[i] - box.lower()[i]);
    }
    T[flat] = f(x);
  }
  // Mode products: replace index k by exponent e along each axis.
  std::vector<double> next(total);
  std::size_t stride = 1;
  for (int axis = 0; axis < n; ++axis) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t flat = 0; flat < total; ++flat) {
      const int k = static_cast<int>((flat / stride) % static_cast<std::size_t>(side));
      const std::size_t base = flat - static_cast<std::size_t>(k) * stride;
      const double v = T[flat];
      if (v == 0.0) continue;
      for (int e = k; e <= d; ++e) next[base + static_cast<std::size_t>(e) * stride] += v * beta(k, e);
    }
    std::swap(T, next);
    stride *= static_cast<std::size_t>(side);
  }
  const auto basis = poly::MonomialBasis::make(n, n * d);
  Eigen::VectorXd coeffs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis->size()));
  poly::Exponent e(static_cast<std::size_t>(n));
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rest = flat;
    for (int i = 0; i < n; ++i) {
      e[static_cast<std::size_t>(i)] = static_cast<int>(rest % static_cast<std::size_t>(side));
      rest /= static_cast<std::size_t>(side);
    }
    coeffs[static_cast<Eigen::Index>(basis->index_of(e))] = T[flat];
  }
  const poly::Polynomial in_t(basis, std::move(coeffs));
  const Eigen::VectorXd width = box.upper() - box.lower();
  const Eigen::VectorXd scale = width.cwiseInverse();
  return in_t.compose_affine(scale, -box.lower().cwiseProduct(scale));
}

poly::Polynomial bernstein(const std::function<double(const Eigen::VectorXd&)>& f, int n, int d) {
  return bernstein(f, n, d, poly::Box::unit(n));
}

std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValidationError("split fraction must lie in [0, 1]");
  std::vector<int> order(static_cast<std::size_t>(data.m()));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto cut = static_cast<std::size_t>(std::llround(fraction * data.m()));
  std::vector<int> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<int> test(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  return {data.subset(train), data.subset(test)};
}

double median(std::vector<double> v) {
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

BenchmarkResult benchmark(const BenchmarkConfig& config) {
  BenchmarkResult res;
  for (int n : config.n)
    for (int m : config.m)
      for (int d : config.d)
        for (int r : config.r) {
          if (d >= 2 && 2 * r + 2 < d - 2) continue;
          std::vector<double> tr, te, ts;
          for (int s = 0; s < config.seeds; ++s) {
            const std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(s);
            const Dataset train = synth_convex(m, n, config.sigma, seed);
            const Dataset test = synth_convex(config.test_points, n, 0.0, seed + 1000003ULL);
            est::FitOptions opt = config.fit;
            opt.seed = seed;
            const auto t0 = std::chrono::steady_clock::now();
            const est::FittedModel model = est::fit_sose_convex(train, d, r, opt);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            BenchmarkRun run{m, n, d, r, seed, est::rmse(model, train), est::rmse(model, test), secs};
            res.runs.push_back(run);
            tr.push_back(run.train_rmse);
            te.push_back(run.test_rmse);
            ts.push_back(run.solve_s);
          }
          res.cells.push_back({m, n, d, r, median(tr), median(te), median(ts), config.seeds});
        }
  return res;
}

void write_benchmark_csv(const std::filesystem::path& path, const BenchmarkResult& result) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.precision(10);
  out << "m,n,d,r,train_rmse,test_rmse,solve_s\n";
  for (const auto& c : result.cells)
    out << c.m << "," << c.n << "," << c.d << "," << c.r << "," << c.train_rmse << "," << c.test_rmse << ","
        << c.solve_s << "\n";
}

void write_benchmark_runs(const std::filesystem::path& path, const BenchmarkResult& result) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.precision(10);
  out << "m,n,d,r,seed,train_rmse,test_rmse,solve_s\n";
  for (const auto& c : result.runs)
    out << c.m << "," << c.n << "," << c.d << "," << c.r << "," << c.seed << "," << c.train_rmse << ","
        << c.test_rmse << "," << c.solve_s << "\n";
}

}  // namespace shapesos::data
