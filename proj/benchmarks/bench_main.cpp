#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dogfit/guidance.hpp"
#include "dogfit/metrics.hpp"
#include "dogfit/neural.hpp"
#include "dogfit/oracle.hpp"

namespace {

using namespace dogfit;

nn::DenoiserBatch make_batch(int n, int num_classes) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  nn::DenoiserBatch b;
  b.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double x = normal(rng);
    const double y = normal(rng);
    b.push_back(Point(x, y), unif(rng), i % 2 ? Label{i % num_classes} : Label{}, 1.0);
  }
  return b;
}

nn::Architecture default_arch() {
  nn::Architecture a;
  a.num_classes = 8;
  return a;
}

void BM_Forward(benchmark::State& state) {
  const nn::Denoiser m(default_arch(), 0);
  const auto batch = make_batch(static_cast<int>(state.range(0)), 8);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(256)->Arg(1000);

void BM_LossAndGrad(benchmark::State& state) {
  const nn::Denoiser m(default_arch(), 0);
  const auto batch = make_batch(static_cast<int>(state.range(0)), 8);
  const std::vector<Point> target(batch.size(), Point(0.1, -0.2));
  for (auto _ : state) benchmark::DoNotOptimize(nn::loss_and_grad(m, batch, target));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGrad)->Arg(64)->Arg(256);

void BM_AdamStep(benchmark::State& state) {
  nn::Denoiser m(default_arch(), 0);
  nn::OptimState opt(m.params(), nn::AdamConfig{1e-6});
  nn::ParamVector g(m.params().layout());
  for (float& v : g.values()) v = 1e-3f;
  for (auto _ : state) nn::adam_step(opt, m.mutable_params(), g);
}
BENCHMARK(BM_AdamStep);

GaussianMixture ring(int k) {
  GaussianMixture gm;
  for (int i = 0; i < k; ++i) {
    const double a = 2.0 * 3.14159265358979 * i / k;
    gm.weights.push_back(1.0 / k);
    gm.means.emplace_back(std::cos(a), std::sin(a));
    gm.covariances.push_back(Mat2::Identity() * 0.05);
    gm.labels.push_back(i);
  }
  return gm;
}

void BM_AnalyticEps(benchmark::State& state) {
  const GaussianMixture gm = ring(8);
  const NoiseSchedule sched = make_schedule();
  const Point x(0.3, -0.4);
  int t = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(analytic_eps(gm, x, t, sched));
    t = t % 1000 + 1;
  }
}
BENCHMARK(BM_AnalyticEps);

void BM_Frechet(benchmark::State& state) {
  const GaussianMixture gm = ring(3);
  const auto a = sample_mixture(gm, static_cast<int>(state.range(0)), 1);
  const auto b = sample_mixture(gm, static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(frechet_gaussian(a.points, b.points));
}
BENCHMARK(BM_Frechet)->Arg(5000);

void BM_Mmd(benchmark::State& state) {
  const GaussianMixture gm = ring(3);
  const auto a = sample_mixture(gm, static_cast<int>(state.range(0)), 1);
  const auto b = sample_mixture(gm, static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(mmd_rbf(a.points, b.points));
}
BENCHMARK(BM_Mmd)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_PrecisionRecall(benchmark::State& state) {
  const GaussianMixture gm = ring(3);
  const auto a = sample_mixture(gm, static_cast<int>(state.range(0)), 1);
  const auto b = sample_mixture(gm, static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(precision_recall_knn(a.points, b.points, 5));
}
BENCHMARK(BM_PrecisionRecall)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
