#include "hpbm/gp_core.hpp"
#include "hpbm/hybrid.hpp"
#include "hpbm/pbm.hpp"
#include "hpbm/spgp.hpp"
#include "hpbm/synthetic.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace hpbm;

namespace {

gp::Dataset random_data(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  gp::Dataset data{Eigen::MatrixXd(n, d), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      data.inputs(i, j) = u(rng);
      s += std::sin(data.inputs(i, j));
    }
    data.targets[i] = s / static_cast<double>(d) + 0.1 * u(rng);
  }
  return data;
}

gp::KernelHyperparams unit_hyper(Eigen::Index d) {
  gp::KernelHyperparams h;
  h.lengthscales = Eigen::VectorXd::Ones(d);
  h.noise_variance = 0.01;
  return h;
}

void BM_FitExact(benchmark::State& state) {
  const auto data = random_data(state.range(0), 6, 1);
  const auto h = unit_hyper(6);
  for (auto _ : state) benchmark::DoNotOptimize(gp::fit_exact(data, h));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_FitExact)->RangeMultiplier(2)->Range(64, 1024)->Complexity(benchmark::oNCubed);

void BM_ExactLml(benchmark::State& state) {
  const auto data = random_data(state.range(0), 6, 2);
  const auto h = unit_hyper(6);
  for (auto _ : state) benchmark::DoNotOptimize(gp::log_marginal_likelihood(data, h));
}
BENCHMARK(BM_ExactLml)->RangeMultiplier(2)->Range(64, 512);

// Cost should grow linearly in n at fixed m.
void BM_FitcLml(benchmark::State& state) {
  const auto data = random_data(state.range(0), 6, 3);
  const auto h = unit_hyper(6);
  const spgp::InducingSet z{random_data(state.range(1), 6, 4).inputs};
  for (auto _ : state) benchmark::DoNotOptimize(spgp::fitc_log_marginal_likelihood(data, h, z));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_FitcLml)->ArgsProduct({{2000, 4000, 8000, 16000}, {16}})->Complexity(benchmark::oN);
BENCHMARK(BM_FitcLml)->ArgsProduct({{4000}, {8, 16, 32, 64}});

void BM_SpgpMean(benchmark::State& state) {
  const auto data = random_data(2000, 6, 5);
  const auto model = spgp::assemble_spgp(data, unit_hyper(6), {random_data(state.range(0), 6, 6).inputs});
  const Eigen::VectorXd x = data.inputs.row(7).transpose();
  for (auto _ : state) benchmark::DoNotOptimize(model.mean(x));
}
BENCHMARK(BM_SpgpMean)->Arg(8)->Arg(64);

void BM_PbmRunYear(benchmark::State& state) {
  const pbm::PbmParams p;
  const auto forcing = pbm::generate_forcing(7, 2, {});
  const std::span<const pbm::Forcing> year = std::span(forcing).first(pbm::kStepsPerYear);
  for (auto _ : state) benchmark::DoNotOptimize(pbm::pbm_run({0.3, 0.3, 0.0}, year, p));
  state.SetItemsProcessed(state.iterations() * pbm::kStepsPerYear);
}
BENCHMARK(BM_PbmRunYear);

void BM_HybridRolloutYear(benchmark::State& state) {
  pbm::PbmParams p;
  const auto syn = pbm::generate_synthetic_site(8, 2, p, 0.005);
  p.melt_mode = pbm::MeltMode::flawed_threshold;
  const auto ts = hybrid::build_training_set(syn.observations, syn.forcing, p);
  const auto model = spgp::fit_spgp(ts.data, state.range(0), {.seed = 1, .max_iterations = 5});
  const hybrid::HybridModel hm{p, hybrid::Corrector(model)};
  const std::span<const pbm::Forcing> year = std::span(syn.forcing).first(pbm::kStepsPerYear);
  for (auto _ : state) benchmark::DoNotOptimize(hybrid::rollout(syn.truth[0], year, hm));
  state.SetItemsProcessed(state.iterations() * pbm::kStepsPerYear);
}
BENCHMARK(BM_HybridRolloutYear)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
