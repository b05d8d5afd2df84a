#include <benchmark/benchmark.h>

#include <memory>

#include "mdsaf/baselines.hpp"
#include "mdsaf/dsp.hpp"
#include "mdsaf/filterbank.hpp"
#include "mdsaf/harness.hpp"
#include "mdsaf/model.hpp"
#include "mdsaf/rng.hpp"

using namespace mdsaf;

namespace {

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.gaussian();
  return v;
}

acoustics::AcousticPath bench_secondary() {
  std::vector<double> taps(256, 0.0);
  taps[23] = 0.8;
  taps[40] = -0.2;
  return acoustics::AcousticPath{taps};
}

void BM_Fft(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto& plan = dsp::fft_plan(n);
  dsp::ComplexVec buf(n);
  const auto x = gaussian(n, 1);
  for (auto _ : state) {
    for (std::size_t i = 0; i < n; ++i) buf[i] = x[i];
    plan.forward(buf);
    benchmark::DoNotOptimize(buf.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Fft)->RangeMultiplier(4)->Range(64, 4096);

void BM_StackDirect(benchmark::State& state) {
  const auto N = static_cast<std::size_t>(state.range(0));
  const auto re = gaussian(N / 2, 2), im = gaussian(N / 2, 3);
  dsp::ComplexVec half(N / 2);
  for (std::size_t i = 0; i < half.size(); ++i) half[i] = {re[i], im[i]};
  for (auto _ : state) benchmark::DoNotOptimize(filterbank::stack_direct(half, N));
}
BENCHMARK(BM_StackDirect)->Arg(256)->Arg(1024);

void BM_NetworkForward(benchmark::State& state) {
  const auto N = static_cast<std::size_t>(state.range(0));
  const auto H = static_cast<std::size_t>(state.range(1));
  const auto params = model::init_params(model::Dims::for_filter(N, H), 1);
  model::Inference inf(params);
  const auto features = gaussian(2 * N, 4);
  for (auto _ : state) benchmark::DoNotOptimize(inf.step(features).data());
}
BENCHMARK(BM_NetworkForward)->Args({256, 32})->Args({1024, 128})->Unit(benchmark::kMicrosecond);

template <class Make>
void run_updates(benchmark::State& state, Make make) {
  auto controller = make();
  const auto x = gaussian(1 << 14, 5);
  std::size_t n = 0;
  const std::size_t period = controller->update_period();
  for (auto _ : state) {
    // one update period of samples, ending with an update
    for (std::size_t i = 0; i < period; ++i, ++n) {
      controller->output(x[n & (x.size() - 1)]);
      const Step step = make_step(n, period, 0);
      controller->observe(0.1 * x[(n * 7) & (x.size() - 1)], step);
    }
  }
  state.SetItemsProcessed(state.iterations());
}

void BM_NfxlmsPeriod(benchmark::State& state) {
  const auto N = static_cast<std::size_t>(state.range(0));
  run_updates(state, [&] { return std::make_unique<baselines::NfxlmsController>(N, bench_secondary(), 0.01); });
}
BENCHMARK(BM_NfxlmsPeriod)->Arg(256)->Arg(1024);

void BM_DsnfxlmsPeriod(benchmark::State& state) {
  const auto N = static_cast<std::size_t>(state.range(0));
  const auto K = static_cast<std::size_t>(state.range(1));
  const filterbank::FilterBank bank(N, K);
  run_updates(state, [&] { return std::make_unique<baselines::DsnfxlmsController>(bank, bench_secondary(), 0.01); });
}
BENCHMARK(BM_DsnfxlmsPeriod)->Args({256, 8})->Args({1024, 32})->Unit(benchmark::kMicrosecond);

void BM_MdsafPeriod(benchmark::State& state) {
  const auto N = static_cast<std::size_t>(state.range(0));
  const auto K = static_cast<std::size_t>(state.range(1));
  const auto H = static_cast<std::size_t>(state.range(2));
  const filterbank::FilterBank bank(N, K);
  auto params = std::make_shared<const model::ModelParams>(model::init_params(model::Dims::for_filter(N, H), 1));
  run_updates(state, [&] {
    return std::make_unique<harness::MdsafController>(bank, bench_secondary(),
                                                      std::make_unique<harness::NetworkGradient>(params), 0.01);
  });
}
BENCHMARK(BM_MdsafPeriod)->Args({256, 8, 32})->Args({1024, 32, 128})->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
