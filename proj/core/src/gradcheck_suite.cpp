#include <algorithm>

#include "cardiseg/gradcheck.hpp"
#include "cardiseg/losses.hpp"
#include "cardiseg/ops.hpp"
#include "cardiseg/random.hpp"
#include "cardiseg/unet.hpp"

namespace cardiseg {
namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(sd * rng.normal());
  return t;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
Tensor<T> one_hot_random(std::size_t b, std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  Tensor<T> t({b, c, h, w});
  const std::size_t plane = h * w;
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t p = 0; p < plane; ++p) t[(n * c + rng.below(c)) * plane + p] = T{1};
  }
  return t;
}

// Scalar read-out with fixed random weights so every output element matters.
template <typename T>
Var<T> project(const Var<T>& y, const Tensor<T>& weights) {
  return ops::sum(ops::mul_constant(y, weights));
}

}  // namespace

template <typename T>
std::vector<GradCheckEntry> gradcheck_suite(double h, std::uint64_t seed) {
  using Fn = std::function<Var<T>(const Var<T>&)>;
  std::vector<GradCheckEntry> out;
  Rng rng(seed);
  auto check = [&](const std::string& name, const Fn& f, const Tensor<T>& x) {
    out.push_back({name, grad_check<T>(f, x, h)});
  };

  {
    const Tensor<T> x = normal_tensor<T>({2, 3, 5, 6}, rng);
    const Tensor<T> k = normal_tensor<T>({4, 3, 3, 3}, rng, 0.3);
    const Tensor<T> b = normal_tensor<T>({4}, rng);
    const Tensor<T> w = normal_tensor<T>({2, 4, 5, 6}, rng);
    check("conv2d/input", [&](const Var<T>& v) {
      Tape<T>& t = v.tape();
      return project(ops::conv2d(v, t.constant(k), t.constant(b)), w);
    }, x);
    check("conv2d/kernel", [&](const Var<T>& v) {
      Tape<T>& t = v.tape();
      return project(ops::conv2d(t.constant(x), v, t.constant(b)), w);
    }, k);
    check("conv2d/bias", [&](const Var<T>& v) {
      Tape<T>& t = v.tape();
      return project(ops::conv2d(t.constant(x), t.constant(k), v), w);
    }, b);
  }
  for (std::size_t ks : {std::size_t{2}, std::size_t{3}}) {
    const Tensor<T> x = normal_tensor<T>({2, 3, 3, 4}, rng);
    const Tensor<T> k = normal_tensor<T>({3, 2, ks, ks}, rng, 0.5);
    const Tensor<T> w = normal_tensor<T>({2, 2, 6, 8}, rng);
    const std::string tag = "conv_transpose2d_k" + std::to_string(ks);
    check(tag + "/input", [&](const Var<T>& v) {
      return project(ops::conv_transpose2d(v, v.tape().constant(k)), w);
    }, x);
    check(tag + "/kernel", [&](const Var<T>& v) {
      return project(ops::conv_transpose2d(v.tape().constant(x), v), w);
    }, k);
  }
  {
    const Tensor<T> x = normal_tensor<T>({2, 2, 6, 4}, rng);
    const Tensor<T> w = normal_tensor<T>({2, 2, 3, 2}, rng);
    check("maxpool2", [&](const Var<T>& v) { return project(ops::maxpool2(v), w); }, x);
  }
  {
    const Tensor<T> x = normal_tensor<T>({3, 2, 4, 4}, rng);
    const Tensor<T> gamma = uniform_tensor<T>({2}, rng, 0.5, 1.5);
    const Tensor<T> beta = normal_tensor<T>({2}, rng);
    const Tensor<T> w = normal_tensor<T>({3, 2, 4, 4}, rng);
    Tensor<T> mean({2}), var({2}, T{1});
    auto bn = [&](const Var<T>& in, const Var<T>& g, const Var<T>& b, Mode mode) {
      Tensor<T> m = mean, s = var;
      return project(ops::batchnorm2d(in, g, b, ops::BatchNormStats<T>{&m, &s}, mode), w);
    };
    check("batchnorm2d_train/input", [&](const Var<T>& v) {
      Tape<T>& t = v.tape();
      return bn(v, t.constant(gamma), t.constant(beta), Mode::kTrain);
    }, x);
    check("batchnorm2d_train/gamma", [&](const Var<T>& v) {
      Tape<T>& t = v.tape();
      return bn(t.constant(x), v, t.constant(beta), Mode::kTrain);
    }, gamma);
    check("batchnorm2d_train/beta", [&](const Var<T>& v) {
      Tape<T>& t = v.tape();
      return bn(t.constant(x), t.constant(gamma), v, Mode::kTrain);
    }, beta);
    mean = normal_tensor<T>({2}, rng, 0.2);
    var = uniform_tensor<T>({2}, rng, 0.5, 2.0);
    check("batchnorm2d_infer/input", [&](const Var<T>& v) {
      Tape<T>& t = v.tape();
      return bn(v, t.constant(gamma), t.constant(beta), Mode::kInfer);
    }, x);
  }
  {
    const Tensor<T> x = normal_tensor<T>({2, 3, 4, 4}, rng);
    const Tensor<T> w = normal_tensor<T>({2, 3, 4, 4}, rng);
    check("elu", [&](const Var<T>& v) { return project(ops::elu(v), w); }, x);
    check("sigmoid", [&](const Var<T>& v) { return project(ops::sigmoid(v), w); }, x);
    check("dropout", [&](const Var<T>& v) { return project(ops::dropout(v, 0.3, Mode::kTrain, 17), w); }, x);
    check("sum_squares", [&](const Var<T>& v) { return ops::sum_squares(v); }, x);
    check("mul_constant", [&](const Var<T>& v) { return ops::sum(ops::mul_constant(v, w)); }, x);
    const Tensor<T> other = normal_tensor<T>({2, 2, 4, 4}, rng);
    const Tensor<T> wc = normal_tensor<T>({2, 5, 4, 4}, rng);
    check("concat_channels", [&](const Var<T>& v) {
      return project(ops::concat_channels(v, v.tape().constant(other)), wc);
    }, x);
    const Tensor<T> ws = normal_tensor<T>({2, 2, 4, 4}, rng);
    check("slice_channels", [&](const Var<T>& v) { return project(ops::slice_channels(v, 1, 2), ws); }, x);
  }

  const std::vector<std::pair<std::string, LossSpec>> losses = {
      {"bce", LossSpec{LossKind::kBCE, {}, 1.0, true}},
      {"wce", LossSpec{LossKind::kWCE, {1.0, 1.0, 2.0, 1.0}, 1.0, true}},
      {"jdl", LossSpec{LossKind::kJDL, {}, 1.0, true}},
      {"sdl", LossSpec{LossKind::kSDL, {}, 1.0, true}},
  };
  {
    const Tensor<T> pred = uniform_tensor<T>({2, 4, 5, 5}, rng, 0.05, 0.95);
    const Tensor<T> truth = one_hot_random<T>(2, 4, 5, 5, rng);
    for (const auto& [name, spec] : losses) {
      check("loss_" + name, [&](const Var<T>& v) { return loss(spec, v, truth); }, pred);
    }
  }

  ModelConfig mc;
  mc.input_height = mc.input_width = 32;
  mc.base_channels = 4;
  mc.seed = rng.next_u64();
  const Tensor<T> image = uniform_tensor<T>({2, 1, 32, 32}, rng, 0.0, 1.0);
  const Tensor<T> truth = one_hot_random<T>(2, 4, 32, 32, rng);
  const std::uint64_t dropout_seed = rng.next_u64();
  for (const auto& [name, spec] : losses) {
    UNetModel<T> model(mc);
    auto forward = [&](const Var<T>& input) {
      return loss(spec, model.forward(input, Mode::kTrain, dropout_seed), truth);
    };
    GradCheckResult total;
    auto merge = [&](const GradCheckResult& r) {
      total.max_rel_error = std::max(total.max_rel_error, r.max_rel_error);
      total.max_abs_error = std::max(total.max_abs_error, r.max_abs_error);
      total.coordinates += r.coordinates;
    };
    auto sample = [&](std::size_t n, std::size_t count) {
      std::vector<std::size_t> coords;
      for (std::size_t i = 0; i < count; ++i) coords.push_back(static_cast<std::size_t>(rng.below(n)));
      return coords;
    };
    merge(grad_check<T>(forward, image, h, sample(image.size(), 8)));
    for (auto& p : model.parameters()) {
      if (!p.trainable) continue;
      model.zero_grad();
      merge(grad_check_parameter<T>([&](Tape<T>& tape) { return forward(tape.constant(image)); }, p, h,
                                    sample(p.value.size(), std::min<std::size_t>(p.value.size(), 3))));
    }
    out.push_back({"unet_" + name, total});
  }
  return out;
}

template std::vector<GradCheckEntry> gradcheck_suite<float>(double, std::uint64_t);
template std::vector<GradCheckEntry> gradcheck_suite<double>(double, std::uint64_t);

}  // namespace cardiseg
