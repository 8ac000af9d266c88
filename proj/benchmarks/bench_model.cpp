#include <benchmark/benchmark.h>

#include "attnpain/optim.hpp"
#include "attnpain/vit.hpp"

using namespace attnpain;

namespace {

void BM_tiny_forward(benchmark::State& state) {
  vit::ModelConfig cfg = vit::ModelConfig::tiny_preset();
  cfg.dtype = state.range(0) == 0 ? DType::f32 : DType::f64;
  vit::ViTModel model = vit::ViTModel::init_parameters(cfg, 1);
  Prng rng(2);
  Tensor xb = Tensor::uniform({16, 1, 32, 32}, 0, 1, rng, cfg.dtype);
  NoGradGuard ng;
  for (auto _ : state) {
    auto out = model.forward(xb, false, nullptr);
    benchmark::DoNotOptimize(out.logits.item(0));
  }
}
BENCHMARK(BM_tiny_forward)->Arg(0)->Arg(1);

void BM_tiny_train_step(benchmark::State& state) {
  vit::ModelConfig cfg = vit::ModelConfig::tiny_preset();
  cfg.dtype = DType::f32;
  vit::ViTModel model = vit::ViTModel::init_parameters(cfg, 1);
  model.set_trainable(4);
  Prng rng(2);
  Tensor xb = Tensor::uniform({16, 1, 32, 32}, 0, 1, rng, cfg.dtype);
  std::vector<double> labels(32, 0.0);
  for (size_t b = 0; b < 16; ++b) labels[b * 2 + (b % 2)] = 1.0;
  Tensor yb = Tensor::from_data({16, 2}, labels, cfg.dtype);
  optim::Adam adam;
  Prng drop(3);
  for (auto _ : state) {
    for (auto& p : model.params())
      if (p.trainable) p.value.zero_grad();
    backward(cross_entropy(model.forward(xb, true, &drop).logits, yb));
    adam.step(model.params());
  }
}
BENCHMARK(BM_tiny_train_step);

}  // namespace
