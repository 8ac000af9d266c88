#include <benchmark/benchmark.h>

#include "attnpain/tensor.hpp"

using namespace attnpain;

namespace {

void BM_matmul_f64(benchmark::State& state) {
  const size_t n = static_cast<size_t>(state.range(0));
  Prng rng(1);
  Tensor a = Tensor::uniform({n, n}, -1, 1, rng);
  Tensor b = Tensor::uniform({n, n}, -1, 1, rng);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.item(0));
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * n * n * n);
}
BENCHMARK(BM_matmul_f64)->Arg(64)->Arg(128)->Arg(256);

void BM_matmul_f32(benchmark::State& state) {
  const size_t n = static_cast<size_t>(state.range(0));
  Prng rng(1);
  Tensor a = Tensor::uniform({n, n}, -1, 1, rng, DType::f32);
  Tensor b = Tensor::uniform({n, n}, -1, 1, rng, DType::f32);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.item(0));
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * n * n * n);
}
BENCHMARK(BM_matmul_f32)->Arg(64)->Arg(128)->Arg(256);

void BM_softmax(benchmark::State& state) {
  Prng rng(2);
  Tensor x = Tensor::uniform({16, 12, 197, 197}, -5, 5, rng, DType::f32);
  for (auto _ : state) {
    Tensor y = softmax(x, 3);
    benchmark::DoNotOptimize(y.item(0));
  }
}
BENCHMARK(BM_softmax);

void BM_layer_norm(benchmark::State& state) {
  Prng rng(3);
  Tensor x = Tensor::uniform({16, 197, 768}, -1, 1, rng, DType::f32);
  Tensor g = Tensor::full({768}, 1.0, DType::f32);
  Tensor b = Tensor::zeros({768}, DType::f32);
  for (auto _ : state) {
    Tensor y = layer_norm(x, g, b, 1e-6);
    benchmark::DoNotOptimize(y.item(0));
  }
}
BENCHMARK(BM_layer_norm);

}  // namespace
