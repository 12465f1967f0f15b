// Optimized (im2col + GEMM, OpenMP) kernels against the serial reference.
#include <benchmark/benchmark.h>

#include "ufcn/kernels.hpp"
#include "ufcn/rng.hpp"

namespace {

using ufcn::Tensor;

template <typename V>
void fill(V& v, std::uint64_t seed) {
  using T = typename V::value_type;
  ufcn::Rng rng(seed);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1, 1));
}

struct ConvCase {
  Tensor<float> x;
  std::vector<float> w, b;
  int out_c;
};

ConvCase make_case(const benchmark::State& st) {
  const int c = static_cast<int>(st.range(0));
  const int size = static_cast<int>(st.range(1));
  ConvCase cs{Tensor<float>(c, size, size), std::vector<float>(static_cast<std::size_t>(2 * c) * c * 9),
              std::vector<float>(2 * c), 2 * c};
  fill(cs.x.data, 1);
  fill(cs.w, 2);
  fill(cs.b, 3);
  return cs;
}

void BM_ConvForwardOptimized(benchmark::State& st) {
  auto cs = make_case(st);
  Tensor<float> y;
  for (auto _ : st) {
    ufcn::kernels::conv2d_forward<float>(cs.x, cs.w, cs.b, cs.out_c, 3, y);
    benchmark::DoNotOptimize(y.data.data());
  }
}

void BM_ConvForwardReference(benchmark::State& st) {
  auto cs = make_case(st);
  Tensor<float> y;
  for (auto _ : st) {
    ufcn::kernels::reference::conv2d_forward<float>(cs.x, cs.w, cs.b, cs.out_c, 3, y);
    benchmark::DoNotOptimize(y.data.data());
  }
}

void BM_ConvBackwardOptimized(benchmark::State& st) {
  auto cs = make_case(st);
  Tensor<float> y, dx;
  ufcn::kernels::conv2d_forward<float>(cs.x, cs.w, cs.b, cs.out_c, 3, y);
  std::vector<float> dw(cs.w.size()), db(cs.b.size());
  for (auto _ : st) {
    ufcn::kernels::conv2d_backward<float>(cs.x, cs.w, cs.out_c, 3, y, &dx, dw, db);
    benchmark::DoNotOptimize(dx.data.data());
  }
}

void BM_ConvBackwardReference(benchmark::State& st) {
  auto cs = make_case(st);
  Tensor<float> y, dx;
  ufcn::kernels::reference::conv2d_forward<float>(cs.x, cs.w, cs.b, cs.out_c, 3, y);
  std::vector<float> dw(cs.w.size()), db(cs.b.size());
  for (auto _ : st) {
    ufcn::kernels::reference::conv2d_backward<float>(cs.x, cs.w, cs.out_c, 3, y, &dx, dw, db);
    benchmark::DoNotOptimize(dx.data.data());
  }
}

void BM_UpsampleOptimized(benchmark::State& st) {
  Tensor<float> x(1, static_cast<int>(st.range(1)), static_cast<int>(st.range(1))), y;
  fill(x.data, 4);
  for (auto _ : st) {
    ufcn::kernels::upsample_bilinear2x_forward<float>(x, y);
    benchmark::DoNotOptimize(y.data.data());
  }
}

void BM_UpsampleReference(benchmark::State& st) {
  Tensor<float> x(1, static_cast<int>(st.range(1)), static_cast<int>(st.range(1))), y;
  fill(x.data, 4);
  for (auto _ : st) {
    ufcn::kernels::reference::upsample_bilinear2x_forward<float>(x, y);
    benchmark::DoNotOptimize(y.data.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForwardOptimized)->Args({8, 128})->Args({32, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvForwardReference)->Args({8, 128})->Args({32, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackwardOptimized)->Args({8, 128})->Args({32, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackwardReference)->Args({8, 128})->Args({32, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_UpsampleOptimized)->Args({1, 64})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_UpsampleReference)->Args({1, 64})->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
