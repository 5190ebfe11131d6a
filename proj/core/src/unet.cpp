#include "cardiseg/unet.hpp"

#include <cmath>
#include <map>

#include "cardiseg/checkpoint.hpp"
#include "cardiseg/ops.hpp"
#include "cardiseg/random.hpp"
#include "json_util.hpp"

namespace cardiseg {

void ModelConfig::validate() const {
  if (input_height == 0 || input_width == 0 || input_height % 16 != 0 || input_width % 16 != 0) {
    throw ConfigError("input size must be positive and divisible by 16, got " + std::to_string(input_height) +
                      "x" + std::to_string(input_width));
  }
  if (base_channels == 0) throw ConfigError("base_channels must be positive");
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  for (std::size_t i = 0; i < dropout_schedule.size(); ++i) {
    const double r = dropout_schedule[i];
    if (!(r >= 0.0) || r >= 1.0) throw ConfigError("dropout rates must lie in [0, 1)");
    if (i > 0 && r < dropout_schedule[i - 1]) throw ConfigError("dropout rates must be non-decreasing with depth");
  }
  if (transpose_kernel < 2 || transpose_kernel > 4) throw ConfigError("transpose_kernel must be 2, 3 or 4");
  if (!(head_prior > 0.0 && head_prior < 1.0)) throw ConfigError("head_prior must lie in (0, 1)");
}

std::string model_config_to_json(const ModelConfig& c) {
  detail::json j;
  j["input_size"] = {c.input_height, c.input_width};
  j["base_channels"] = c.base_channels;
  j["num_classes"] = c.num_classes;
  j["dropout_schedule"] = c.dropout_schedule;
  j["seed"] = c.seed;
  j["transpose_kernel"] = c.transpose_kernel;
  j["head_prior"] = c.head_prior;
  return j.dump();
}

namespace detail {

ModelConfig read_model_config(const json& j, const std::string& path) {
  ModelConfig c;
  ObjectReader r(j, path);
  std::array<std::size_t, 2> size{c.input_height, c.input_width};
  r.read("input_size", size);
  c.input_height = size[0];
  c.input_width = size[1];
  r.read("base_channels", c.base_channels);
  r.read("num_classes", c.num_classes);
  r.read("dropout_schedule", c.dropout_schedule);
  r.read("seed", c.seed);
  r.read("transpose_kernel", c.transpose_kernel);
  r.read("head_prior", c.head_prior);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), path.empty() ? "/" : path);
  }
  return c;
}

}  // namespace detail

ModelConfig model_config_from_json(const std::string& json_text) {
  detail::json j;
  try {
    j = detail::json::parse(json_text);
  } catch (const detail::json::exception& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  return detail::read_model_config(j, "");
}

template <typename T>
struct UNetModel<T>::Binder {
  Tape<T>* tape;
  const std::vector<Parameter<T>>* params;
  std::vector<Parameter<T>>* mutable_params;  // null: bind as constants

  Var<T> operator()(std::size_t i) const {
    if (mutable_params != nullptr) return tape->parameter((*mutable_params)[i]);
    return tape->constant_ref((*params)[i].value);
  }

  ops::BatchNormStats<T> stats(const Norm& n) const {
    // Infer mode only reads the running statistics, so the const model stays unchanged.
    auto& p = const_cast<std::vector<Parameter<T>>&>(*params);
    return {&p[n.mean].value, &p[n.var].value};
  }
};

template <typename T>
UNetModel<T>::UNetModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t b = config_.base_channels;
  std::size_t cin = 1;
  for (std::size_t level = 0; level <= kDepth; ++level) {
    const std::size_t ch = b << level;
    const std::string name = level == kDepth ? "bottleneck" : "down" + std::to_string(level);
    down_[level] = make_double_conv(name, cin, ch);
    cin = ch;
  }
  for (std::size_t level = kDepth; level-- > 0;) {
    const std::size_t ch = b << level;
    const std::string name = "up" + std::to_string(level);
    const std::size_t k = config_.transpose_kernel;
    // fan-in of a stride-2 transposed convolution: cin * k * k / 4 contributions per output
    const double fan_in = static_cast<double>(2 * ch * k * k) / 4.0;
    Rng rng(mix_seed({config_.seed, hash_string(name + ".transpose")}));
    Tensor<T> w({2 * ch, ch, k, k});
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : w.data()) v = static_cast<T>(rng.normal(0.0, sd));
    up_[level].transpose = add_param(name + ".transpose.kernel", std::move(w));
    up_[level].convs = make_double_conv(name, 2 * ch, ch);
  }
  head_ = make_conv("head", b, config_.num_classes, 1, 1.0,
                    std::log(config_.head_prior / (1.0 - config_.head_prior)));
}

template <typename T>
std::size_t UNetModel<T>::add_param(const std::string& name, Tensor<T> value, bool trainable) {
  params_.emplace_back(name, std::move(value), trainable);
  return params_.size() - 1;
}

template <typename T>
typename UNetModel<T>::Conv UNetModel<T>::make_conv(const std::string& name, std::size_t cin, std::size_t cout,
                                                    std::size_t k, double gain, double bias) {
  // Variance scaling: sd = sqrt(gain / fan_in); gain 2 for ELU-activated layers.
  Rng rng(mix_seed({config_.seed, hash_string(name + ".kernel")}));
  Tensor<T> w({cout, cin, k, k});
  const double sd = std::sqrt(gain / static_cast<double>(cin * k * k));
  for (auto& v : w.data()) v = static_cast<T>(rng.normal(0.0, sd));
  Conv c;
  c.kernel = add_param(name + ".kernel", std::move(w));
  c.bias = add_param(name + ".bias", Tensor<T>({cout}, static_cast<T>(bias)));
  return c;
}

template <typename T>
typename UNetModel<T>::Norm UNetModel<T>::make_norm(const std::string& name, std::size_t channels) {
  Norm n;
  n.gamma = add_param(name + ".gamma", Tensor<T>({channels}, T{1}));
  n.beta = add_param(name + ".beta", Tensor<T>({channels}));
  n.mean = add_param(name + ".running_mean", Tensor<T>({channels}), false);
  n.var = add_param(name + ".running_var", Tensor<T>({channels}, T{1}), false);
  return n;
}

template <typename T>
typename UNetModel<T>::DoubleConv UNetModel<T>::make_double_conv(const std::string& name, std::size_t cin,
                                                                 std::size_t cout) {
  DoubleConv dc;
  dc.conv1 = make_conv(name + ".conv1", cin, cout, 3, 2.0);
  dc.norm1 = make_norm(name + ".norm1", cout);
  dc.conv2 = make_conv(name + ".conv2", cout, cout, 3, 2.0);
  dc.norm2 = make_norm(name + ".norm2", cout);
  return dc;
}

template <typename T>
Var<T> UNetModel<T>::run_double_conv(const DoubleConv& dc, const Var<T>& x, double rate, Mode mode,
                                     std::uint64_t seed, const Binder& bind) const {
  Var<T> h = ops::conv2d(x, bind(dc.conv1.kernel), bind(dc.conv1.bias));
  h = ops::elu(h);
  h = ops::batchnorm2d(h, bind(dc.norm1.gamma), bind(dc.norm1.beta), bind.stats(dc.norm1), mode);
  h = ops::dropout(h, rate, mode, seed);
  h = ops::conv2d(h, bind(dc.conv2.kernel), bind(dc.conv2.bias));
  h = ops::elu(h);
  return ops::batchnorm2d(h, bind(dc.norm2.gamma), bind(dc.norm2.beta), bind.stats(dc.norm2), mode);
}

template <typename T>
Var<T> UNetModel<T>::run_down(const Var<T>& x, std::size_t level, Mode mode, std::uint64_t seed,
                              const Binder& bind) const {
  if (level > kDepth) throw ConfigError("down_block level must be 0..4");
  const Var<T> in = level == 0 ? x : ops::maxpool2(x);
  return run_double_conv(down_[level], in, config_.dropout_schedule[level], mode, mix_seed({seed, level}), bind);
}

template <typename T>
Var<T> UNetModel<T>::run_up(const Var<T>& x, const Var<T>& skip, std::size_t level, Mode mode, std::uint64_t seed,
                            const Binder& bind) const {
  if (level >= kDepth) throw ConfigError("up_block level must be 0..3");
  require_rank4(x.value(), "up_block input");
  require_rank4(skip.value(), "up_block skip");
  if (skip.shape()[2] != 2 * x.shape()[2] || skip.shape()[3] != 2 * x.shape()[3]) {
    throw ShapeError("up_block: skip " + shape_to_string(skip.shape()) + " must be twice the spatial size of " +
                     shape_to_string(x.shape()));
  }
  const Up& u = up_[level];
  Var<T> up = ops::conv_transpose2d(x, bind(u.transpose));
  Var<T> merged = ops::concat_channels(up, skip);
  return run_double_conv(u.convs, merged, config_.dropout_schedule[level], mode, mix_seed({seed, 100 + level}),
                         bind);
}

template <typename T>
Var<T> UNetModel<T>::run(const Var<T>& input, Mode mode, std::uint64_t seed, const Binder& bind) const {
  check_input(input.value());
  std::array<Var<T>, kDepth> skips;
  Var<T> h = input;
  for (std::size_t level = 0; level < kDepth; ++level) {
    h = run_down(h, level, mode, seed, bind);
    skips[level] = h;
  }
  h = run_down(h, kDepth, mode, seed, bind);
  for (std::size_t level = kDepth; level-- > 0;) h = run_up(h, skips[level], level, mode, seed, bind);
  h = ops::conv2d(h, bind(head_.kernel), bind(head_.bias));
  return ops::sigmoid(h);
}

template <typename T>
void UNetModel<T>::check_input(const Tensor<T>& batch) const {
  require_rank4(batch, "UNet input");
  if (batch.dim(1) != 1 || batch.dim(2) != config_.input_height || batch.dim(3) != config_.input_width) {
    throw ShapeError("UNet input must be [B,1," + std::to_string(config_.input_height) + "," +
                     std::to_string(config_.input_width) + "], got " + shape_to_string(batch.shape()));
  }
}

template <typename T>
Var<T> UNetModel<T>::forward(const Var<T>& input, Mode mode, std::uint64_t dropout_seed) {
  Binder bind{&input.tape(), &params_, &params_};
  return run(input, mode, dropout_seed, bind);
}

template <typename T>
Tensor<T> UNetModel<T>::predict(const Tensor<T>& batch) const {
  Tape<T> tape;
  Binder bind{&tape, &params_, nullptr};
  return run(tape.constant_ref(batch), Mode::kInfer, 0, bind).value();
}

template <typename T>
Var<T> UNetModel<T>::down_block(const Var<T>& x, std::size_t level, Mode mode, std::uint64_t dropout_seed) {
  Binder bind{&x.tape(), &params_, &params_};
  return run_down(x, level, mode, dropout_seed, bind);
}

template <typename T>
Var<T> UNetModel<T>::up_block(const Var<T>& x, const Var<T>& skip, std::size_t level, Mode mode,
                              std::uint64_t dropout_seed) {
  Binder bind{&x.tape(), &params_, &params_};
  return run_up(x, skip, level, mode, dropout_seed, bind);
}

template <typename T>
std::size_t UNetModel<T>::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

template <typename T>
void UNetModel<T>::zero_grad() {
  for (auto& p : params_) {
    if (p.trainable) p.zero_grad();
  }
}

template <typename T>
void save_model(const std::filesystem::path& path, const UNetModel<T>& model) {
  detail::json meta;
  meta["model_config"] = detail::json::parse(model_config_to_json(model.config()));
  write_checkpoint<T>(path, model.parameters(), meta.dump());
}

template <typename T>
UNetModel<T> load_model(const std::filesystem::path& path) {
  auto contents = read_checkpoint<T>(path);
  const auto meta = detail::json::parse(contents.metadata_json);
  if (!meta.contains("model_config")) throw ParseError("checkpoint has no model_config metadata");
  UNetModel<T> model(detail::read_model_config(meta.at("model_config"), "/metadata/model_config"));
  std::map<std::string, Tensor<T>*> by_name;
  for (auto& p : model.parameters()) by_name[p.name] = &p.value;
  if (contents.tensors.size() != by_name.size()) throw ParseError("checkpoint tensor count does not match model");
  for (auto& [name, tensor] : contents.tensors) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint tensor '" + name + "' is not part of the model");
    if (it->second->shape() != tensor.shape()) throw ParseError("checkpoint tensor '" + name + "' has wrong shape");
    *it->second = std::move(tensor);
  }
  return model;
}

template class UNetModel<float>;
template class UNetModel<double>;
template void save_model<float>(const std::filesystem::path&, const UNetModel<float>&);
template void save_model<double>(const std::filesystem::path&, const UNetModel<double>&);
template UNetModel<float> load_model<float>(const std::filesystem::path&);
template UNetModel<double> load_model<double>(const std::filesystem::path&);

}  // namespace cardiseg
