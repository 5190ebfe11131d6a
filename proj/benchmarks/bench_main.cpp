#include <benchmark/benchmark.h>

#include "cardiseg/losses.hpp"
#include "cardiseg/ops.hpp"
#include "cardiseg/preprocess.hpp"
#include "cardiseg/random.hpp"
#include "cardiseg/training.hpp"
#include "cardiseg/unet.hpp"

using namespace cardiseg;

namespace {

Tensor<float> noise(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

Tensor<float> random_labels(std::size_t b, std::size_t hw, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({b, 4, hw, hw});
  const std::size_t plane = hw * hw;
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t p = 0; p < plane; ++p) t[(n * 4 + rng.below(4)) * plane + p] = 1.0f;
  return t;
}

// args: spatial extent, channels
void BM_Conv2dForward(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0)), ch = static_cast<std::size_t>(state.range(1));
  const auto x = noise({8, ch, hw, hw}, 1), k = noise({ch, ch, 3, 3}, 2), b = noise({ch}, 3);
  for (auto _ : state) {
    Tape<float> tape;
    auto y = ops::conv2d(tape.constant(x), tape.constant(k), tape.constant(b));
    benchmark::DoNotOptimize(y.value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * 8 * static_cast<std::int64_t>(hw * hw * ch * ch * 9));
}
BENCHMARK(BM_Conv2dForward)->Args({64, 8})->Args({32, 16})->Args({16, 32})->Unit(benchmark::kMicrosecond);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0)), ch = static_cast<std::size_t>(state.range(1));
  const auto x = noise({8, ch, hw, hw}, 1), k = noise({ch, ch, 3, 3}, 2), b = noise({ch}, 3);
  for (auto _ : state) {
    Tape<float> tape;
    auto xv = tape.input(x);
    auto kv = tape.input(k);
    tape.backward(ops::sum(ops::conv2d(xv, kv, tape.input(b))));
    benchmark::DoNotOptimize(kv.grad().data().data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({64, 8})->Args({32, 16})->Unit(benchmark::kMicrosecond);

// One optimiser step on a batch of 8: forward, SDL loss, backward, Adam.
void BM_TrainStep(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  ModelConfig mc;
  mc.input_height = mc.input_width = hw;
  mc.base_channels = static_cast<std::size_t>(state.range(1));
  UNetModel<float> model(mc);
  TrainConfig tc;
  auto train_state = TrainState<float>::initial(tc, model.parameters());
  const auto x = noise({8, 1, hw, hw}, 4);
  const auto truth = random_labels(8, hw, 5);
  std::uint64_t step = 0;
  for (auto _ : state) {
    model.zero_grad();
    Tape<float> tape;
    auto l = loss(tc.loss, model.forward(tape.constant(x), Mode::kTrain, ++step), truth);
    tape.backward(l);
    adam_step<float>(model.parameters(), train_state, tc.initial_lr);
    benchmark::DoNotOptimize(l.value()[0]);
  }
}
BENCHMARK(BM_TrainStep)->Args({32, 4})->Args({64, 8})->Unit(benchmark::kMillisecond);

void BM_Inference(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  ModelConfig mc;
  mc.input_height = mc.input_width = hw;
  mc.base_channels = 8;
  UNetModel<float> model(mc);
  const auto x = noise({8, 1, hw, hw}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x));
}
BENCHMARK(BM_Inference)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Pipeline(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  Image2D<float> raw(hw + 20, hw);
  for (auto& v : raw.pixels) v = static_cast<float>(1000.0 * rng.uniform());
  Image2D<std::uint8_t> mask(hw + 20, hw, 1);
  PipelineConfig cfg;
  cfg.target_height = cfg.target_width = 64;
  cfg.train_mode = true;
  cfg.distortion_probability = 1.0;
  const double threshold = volume_clip_threshold(raw.pixels, cfg.clip_quantile);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(apply_pipeline(raw, mask, threshold, cfg, ++seed));
}
BENCHMARK(BM_Pipeline)->Arg(84)->Arg(256)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
