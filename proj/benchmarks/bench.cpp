#include <benchmark/benchmark.h>

#include <random>

#include "shapesos/data.hpp"
#include "shapesos/estimators.hpp"
#include "shapesos/inventory.hpp"
#include "shapesos/online.hpp"
#include "shapesos/transport.hpp"

using namespace shapesos;

namespace {

const est::FittedModel& convex_model() {
  static const est::FittedModel m = est::fit_sose_convex(data::synth_convex(200, 2, 1.0, 3), 4, 2);
  return m;
}

void BM_Predict(benchmark::State& state) {
  const auto& model = convex_model();
  Eigen::VectorXd x(2);
  x << 0.3, 0.7;
  for (auto _ : state) benchmark::DoNotOptimize(est::predict(model, x));
}
BENCHMARK(BM_Predict);

void BM_FitSoseConvex(benchmark::State& state) {
  const auto d = data::synth_convex(static_cast<int>(state.range(0)), 2, 1.0, 5);
  for (auto _ : state) benchmark::DoNotOptimize(est::fit_sose_convex(d, 4, static_cast<int>(state.range(1))));
}
BENCHMARK(BM_FitSoseConvex)->Args({100, 1})->Args({100, 2})->Args({500, 2})->Unit(benchmark::kMillisecond);

void BM_Refit(benchmark::State& state) {
  const auto base = data::synth_convex(500, 2, 1.0, 61);
  const auto model = est::fit_sose_convex(base, 4, 1);
  const auto basis = online::factorize(model);
  const auto augmented = base.concat(data::synth_convex(10, 2, 1.0, 62));
  const auto kind = static_cast<sos::GramKind>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(online::refit(basis, augmented, kind));
  state.SetLabel(sos::to_string(kind));
}
BENCHMARK(BM_Refit)
    ->Arg(static_cast<int>(sos::GramKind::DD))
    ->Arg(static_cast<int>(sos::GramKind::SDD))
    ->Unit(benchmark::kMillisecond);

void BM_Clse(benchmark::State& state) {
  const auto d = data::synth_convex(static_cast<int>(state.range(0)), 2, 1.0, 7);
  for (auto _ : state) benchmark::DoNotOptimize(est::fit_clse(d));
}
BENCHMARK(BM_Clse)->Arg(50)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_Sinkhorn(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Eigen::MatrixXd X(n, 3), Y(n, 3);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) {
      X(i, k) = U(rng);
      Y(i, k) = U(rng);
    }
  const Eigen::MatrixXd C = transport::squared_distances(X, Y);
  const Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / n);
  for (auto _ : state) benchmark::DoNotOptimize(transport::sinkhorn(w, w, C));
}
BENCHMARK(BM_Sinkhorn)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_InventoryValue(benchmark::State& state) {
  const auto inst = inventory::InventoryInstance::example(static_cast<int>(state.range(0)));
  const auto box = inventory::default_sample_box(inst);
  const Eigen::VectorXd mid = 0.5 * (box.lower() + box.upper());
  const auto params = inventory::ContractParams::from_vector(mid);
  for (auto _ : state) benchmark::DoNotOptimize(inventory::value(inst, params));
}
BENCHMARK(BM_InventoryValue)->Arg(6)->Arg(12)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
