// Serial reference vs OpenMP kernels. Set OMP_NUM_THREADS to compare.

#include <benchmark/benchmark.h>

#include <vector>

#include "timeprompt/kernels.hpp"
#include "timeprompt/random.hpp"

namespace k = timeprompt::kernels;

namespace {

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  timeprompt::Rng rng(seed);
  return rng.normal_vector(n, 0.0, 1.0);
}

// Batched square products, the attention-score shape used across heads.
template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t batch = 16;
  k::GemmShape s{batch, batch, n, n, n, false, true, false};
  auto a = random_buffer(batch * n * n, 1);
  auto b = random_buffer(batch * n * n, 2);
  std::vector<double> c(batch * n * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gemm(a.data(), b.data(), c.data(), s);
    else k::gemm_serial(a.data(), b.data(), c.data(), s);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch * n * n * n));
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const auto cols = static_cast<std::size_t>(state.range(0));
  const std::size_t rows = 4096;
  auto x = random_buffer(rows * cols, 3);
  std::vector<double> y(rows * cols);
  for (auto _ : state) {
    if constexpr (Parallel) k::softmax_rows(x.data(), y.data(), rows, cols);
    else k::softmax_rows_serial(x.data(), y.data(), rows, cols);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows * cols));
}

template <bool Parallel>
void BM_Gelu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto x = random_buffer(n, 4);
  std::vector<double> y(n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gelu(x.data(), y.data(), n);
    else k::gelu_serial(x.data(), y.data(), n);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(BM_Gemm<true>)->Name("gemm/omp")->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Arg(16)->Arg(96)->Arg(260);
BENCHMARK(BM_Softmax<true>)->Name("softmax/omp")->Arg(16)->Arg(96)->Arg(260);
BENCHMARK(BM_Gelu<false>)->Name("gelu/serial")->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_Gelu<true>)->Name("gelu/omp")->Arg(1 << 16)->Arg(1 << 20);

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  benchmark::AddCustomContext("omp_threads", std::to_string(k::max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
