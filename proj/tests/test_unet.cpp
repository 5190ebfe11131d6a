#include <gtest/gtest.h>

#include <cmath>

#include "cardiseg/checkpoint.hpp"
#include "cardiseg/error.hpp"
#include "cardiseg/ops.hpp"
#include "cardiseg/random.hpp"
#include "cardiseg/unet.hpp"
#include "test_support.hpp"

using namespace cardiseg;

namespace {

ModelConfig small_config(std::size_t size = 32, std::size_t base = 4, std::uint64_t seed = 3) {
  ModelConfig c;
  c.input_height = c.input_width = size;
  c.base_channels = base;
  c.seed = seed;
  return c;
}

template <typename T>
Tensor<T> random_images(std::size_t batch, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t({batch, 1, size, size});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform());
  return t;
}

// Layer-by-layer enumeration: (in, out, kernel, has_bias) for every
// convolution plus two affine batchnorm vectors after each 3x3 conv.
std::size_t enumerated_parameter_count(std::size_t base, std::size_t classes, std::size_t tk) {
  struct Layer {
    std::size_t in, out, k;
    bool bias, norm;
  };
  std::vector<Layer> layers;
  std::size_t ch[5];
  for (int l = 0; l < 5; ++l) ch[l] = base * (std::size_t{1} << l);
  for (int l = 0; l < 5; ++l) {
    const std::size_t in = l == 0 ? 1 : ch[l - 1];
    layers.push_back({in, ch[l], 3, true, true});
    layers.push_back({ch[l], ch[l], 3, true, true});
  }
  for (int l = 3; l >= 0; --l) {
    layers.push_back({ch[l + 1], ch[l], tk, false, false});
    layers.push_back({2 * ch[l], ch[l], 3, true, true});
    layers.push_back({ch[l], ch[l], 3, true, true});
  }
  layers.push_back({ch[0], classes, 1, true, false});
  std::size_t total = 0;
  for (const auto& L : layers) total += L.in * L.out * L.k * L.k + (L.bias ? L.out : 0) + (L.norm ? 2 * L.out : 0);
  return total;
}

}  // namespace

TEST(ModelConfig, DefaultsMatchArchitecture) {
  const ModelConfig c;
  EXPECT_EQ(c.input_height, 224u);
  EXPECT_EQ(c.input_width, 224u);
  EXPECT_EQ(c.num_classes, 4u);
  EXPECT_DOUBLE_EQ(c.dropout_schedule[0], 0.3);
  EXPECT_DOUBLE_EQ(c.dropout_schedule[4], 0.5);
  for (std::size_t i = 1; i < 5; ++i) EXPECT_GE(c.dropout_schedule[i], c.dropout_schedule[i - 1]);
}

TEST(ModelConfig, Validation) {
  auto bad_size = small_config(30);
  EXPECT_THROW(bad_size.validate(), ConfigError);
  auto zero_base = small_config();
  zero_base.base_channels = 0;
  EXPECT_THROW(zero_base.validate(), ConfigError);
  auto decreasing = small_config();
  decreasing.dropout_schedule = {0.5, 0.3, 0.3, 0.3, 0.3};
  EXPECT_THROW(decreasing.validate(), ConfigError);
  auto full = small_config();
  full.dropout_schedule = {0.3, 0.4, 0.5, 0.6, 1.0};
  EXPECT_THROW(full.validate(), ConfigError);
  EXPECT_THROW(UNetModel<float>{bad_size}, ConfigError);
}

TEST(ModelConfig, JsonRoundTrip) {
  auto c = small_config(48, 6, 99);
  c.transpose_kernel = 3;
  c.head_prior = 0.25;
  EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
  EXPECT_EQ(model_config_from_json("{}"), ModelConfig{});
  EXPECT_THROW(model_config_from_json(R"({"base_channel": 8})"), ConfigError);
}

TEST(UNet, ForwardShapeFullSize) {
  ModelConfig c;
  c.base_channels = 8;
  const UNetModel<float> model(c);
  const auto out = model.predict(random_images<float>(2, 224, 1));
  EXPECT_EQ(out.shape(), (Shape{2, 4, 224, 224}));
}

TEST(UNet, OutputShapeEqualsInputForEveryValidSize) {
  for (std::size_t size : {16u, 32u, 48u, 80u}) {
    const UNetModel<float> model(small_config(size, 2));
    EXPECT_EQ(model.predict(random_images<float>(1, size, size)).shape(), (Shape{1, 4, size, size}));
  }
}

TEST(UNet, WrongInputShapeThrows) {
  const UNetModel<float> model(small_config());
  EXPECT_THROW(model.predict(random_images<float>(1, 64, 2)), ShapeError);
  EXPECT_THROW(model.predict(Tensor<float>({1, 2, 32, 32})), ShapeError);
}

TEST(UNet, BlockShapes) {
  UNetModel<float> model(small_config(224, 8));
  Tape<float> tape;
  auto x = tape.constant(random_images<float>(1, 224, 4));
  auto skip0 = model.down_block(x, 0, Mode::kInfer, 0);
  EXPECT_EQ(skip0.shape(), (Shape{1, 8, 224, 224}));
  auto d1 = model.down_block(skip0, 1, Mode::kInfer, 0);
  EXPECT_EQ(d1.shape(), (Shape{1, 16, 112, 112}));

  auto low = tape.constant(Tensor<float>({1, 16, 56, 56}, 0.5f));
  auto skip = tape.constant(Tensor<float>({1, 8, 112, 112}, 0.25f));
  EXPECT_EQ(model.up_block(low, skip, 0, Mode::kInfer, 0).shape(), (Shape{1, 8, 112, 112}));
  auto wrong = tape.constant(Tensor<float>({1, 8, 100, 100}));
  EXPECT_THROW(model.up_block(low, wrong, 0, Mode::kInfer, 0), ShapeError);
  EXPECT_THROW(model.down_block(tape.constant(Tensor<float>({1, 8, 7, 8})), 1, Mode::kInfer, 0), ShapeError);
}

TEST(UNet, OutputsAreProbabilities) {
  UNetModel<float> model(small_config());
  const auto images = random_images<float>(3, 32, 5);
  const auto probs = model.predict(images);
  for (float v : probs.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  Tape<float> tape;
  for (float v : model.forward(tape.constant(images), Mode::kTrain, 11).value().data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(UNet, InferIsBitIdenticalAndMatchesForward) {
  UNetModel<double> model(small_config());
  const auto images = random_images<double>(2, 32, 6);
  const auto a = model.predict(images);
  const auto b = model.predict(images);
  EXPECT_EQ(test::values(a), test::values(b));
  Tape<double> tape;
  EXPECT_EQ(test::values(model.forward(tape.constant(images), Mode::kInfer, 0).value()), test::values(a));
}

TEST(UNet, ConstructionIsDeterministicInSeed) {
  const UNetModel<float> a(small_config(32, 4, 8)), b(small_config(32, 4, 8)), c(small_config(32, 4, 9));
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(test::values(a.parameters()[i].value), test::values(b.parameters()[i].value));
    any_diff |= test::values(a.parameters()[i].value) != test::values(c.parameters()[i].value);
  }
  EXPECT_TRUE(any_diff);
}

TEST(UNet, HeadBiasStartsAtPriorLogit) {
  auto c = small_config();
  c.head_prior = 0.1;
  const UNetModel<double> model(c);
  const auto& params = model.parameters();
  const auto it = std::find_if(params.begin(), params.end(), [](const auto& p) { return p.name == "head.bias"; });
  ASSERT_NE(it, params.end());
  for (double v : it->value.data()) EXPECT_NEAR(v, std::log(0.1 / 0.9), 1e-15);
}

TEST(UNet, ParameterCountMatchesEnumeration) {
  for (std::size_t base : {1u, 2u, 4u, 8u, 32u}) {
    for (std::size_t tk : {2u, 3u}) {
      auto c = small_config(32, base);
      c.transpose_kernel = tk;
      EXPECT_EQ(UNetModel<float>(c).trainable_parameter_count(), enumerated_parameter_count(base, 4, tk))
          << "base " << base << " k " << tk;
    }
  }
  EXPECT_EQ(UNetModel<float>(small_config(32, 4)).trainable_parameter_count(),
            UNetModel<float>(small_config(64, 4)).trainable_parameter_count());
}

TEST(UNet, DoublingBaseIncreasesCount) {
  std::size_t previous = 0;
  for (std::size_t base = 1; base <= 32; base *= 2) {
    const std::size_t n = UNetModel<float>(small_config(32, base)).trainable_parameter_count();
    EXPECT_GT(n, previous);
    previous = n;
  }
}

TEST(UNet, TrainForwardBackwardFillsEveryTrainableGrad) {
  UNetModel<double> model(small_config());
  Tape<double> tape;
  auto y = model.forward(tape.constant(random_images<double>(2, 32, 7)), Mode::kTrain, 1);
  tape.backward(ops::sum_squares(y));
  for (const auto& p : model.parameters()) {
    if (!p.trainable) continue;
    double norm = 0;
    for (double g : p.grad.data()) norm += g * g;
    EXPECT_GT(norm, 0.0) << p.name;
  }
}

TEST(UNet, TrainModeUpdatesRunningStatistics) {
  UNetModel<float> model(small_config());
  Tape<float> tape;
  model.forward(tape.constant(random_images<float>(2, 32, 8)), Mode::kTrain, 1);
  bool moved = false;
  for (const auto& p : model.parameters()) {
    if (p.trainable || p.name.find("running_mean") == std::string::npos) continue;
    for (float v : p.value.data()) moved |= v != 0.0f;
  }
  EXPECT_TRUE(moved);
}

TEST(UNet, SaveLoadRoundTrip) {
  test::TempDir dir("unet");
  UNetModel<double> model(small_config(32, 4, 21));
  Tape<double> tape;
  model.forward(tape.constant(random_images<double>(2, 32, 9)), Mode::kTrain, 1);  // non-trivial running stats
  save_model(dir / "m.bin", model);
  const auto restored = load_model<double>(dir / "m.bin");
  EXPECT_EQ(restored.config(), model.config());
  const auto images = random_images<double>(2, 32, 10);
  EXPECT_EQ(test::values(restored.predict(images)), test::values(model.predict(images)));

  const auto as_float = load_model<float>(dir / "m.bin");
  const auto pf = as_float.predict(random_images<float>(2, 32, 10));
  const auto pd = model.predict(images);
  for (std::size_t i = 0; i < pd.size(); ++i) EXPECT_NEAR(pf[i], pd[i], 1e-4);
}

TEST(Checkpoint, CorruptFilesRejected) {
  test::TempDir dir("ckpt");
  test::write_file(dir / "bad.bin", "not a checkpoint");
  EXPECT_ANY_THROW(load_model<float>(dir / "bad.bin"));
  UNetModel<float> model(small_config());
  save_model(dir / "ok.bin", model);
  auto bytes = test::read_file(dir / "ok.bin");
  test::write_file(dir / "short.bin", bytes.substr(0, bytes.size() - 5));
  EXPECT_ANY_THROW(load_model<float>(dir / "short.bin"));
  EXPECT_ANY_THROW(load_model<float>(dir / "missing.bin"));
}
