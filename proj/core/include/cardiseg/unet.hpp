#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cardiseg/autodiff.hpp"

namespace cardiseg {

/// Architecture hyperparameters. Channel width doubles per depth:
/// base, 2*base, 4*base, 8*base and 16*base at the bottleneck.
struct ModelConfig {
  std::size_t input_height = 224;
  std::size_t input_width = 224;
  std::size_t base_channels = 32;
  std::size_t num_classes = 4;
  /// Dropout rate per depth 0..4 (depth 4 is the bottleneck).
  std::array<double, 5> dropout_schedule = {0.3, 0.37, 0.43, 0.5, 0.5};
  std::uint64_t seed = 0;
  /// Transposed-convolution kernel size (2, or 3 with output padding).
  std::size_t transpose_kernel = 2;
  /// Initial sigmoid output of the head: its bias starts at log(p / (1 - p)).
  double head_prior = 0.1;

  /// Throws ConfigError on sizes not divisible by 16, zero widths, or a
  /// decreasing/out-of-range dropout schedule.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string model_config_to_json(const ModelConfig& config);
/// Missing fields take defaults; unknown fields are rejected.
ModelConfig model_config_from_json(const std::string& json_text);

/// Four down-sampling blocks (the first without pooling), a bottleneck, four
/// up-sampling blocks and a 1x1 classifier head followed by a sigmoid. Every
/// convolution is followed by ELU and then batch normalisation.
template <typename T>
class UNetModel {
 public:
  static constexpr std::size_t kDepth = 4;

  /// Builds and initialises every parameter deterministically from config.seed.
  explicit UNetModel(const ModelConfig& config);

  const ModelConfig& config() const noexcept { return config_; }

  /// Probabilities [B,num_classes,H,W] for a [B,1,H,W] input. Parameters are
  /// bound to the tape, so a later backward pass accumulates into their grads.
  Var<T> forward(const Var<T>& input, Mode mode, std::uint64_t dropout_seed);

  /// Infer-mode forward that leaves the model untouched; safe to call from
  /// several threads on a shared model.
  Tensor<T> predict(const Tensor<T>& batch) const;

  /// Encoder block at `level` (0..4, 4 = bottleneck). Levels above 0 start
  /// with a 2x2 max pooling; the result feeds both the next block and the
  /// decoder skip connection.
  Var<T> down_block(const Var<T>& x, std::size_t level, Mode mode, std::uint64_t dropout_seed);

  /// Decoder block at `level` (3..0): transposed convolution of `x`, channel
  /// concatenation with `skip`, then the double convolution.
  Var<T> up_block(const Var<T>& x, const Var<T>& skip, std::size_t level, Mode mode, std::uint64_t dropout_seed);

  /// Trainable weights and non-trainable running statistics, in a fixed order.
  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }

  std::size_t trainable_parameter_count() const;
  void zero_grad();

 private:
  struct Conv {
    std::size_t kernel, bias;
  };
  struct Norm {
    std::size_t gamma, beta, mean, var;
  };
  struct DoubleConv {
    Conv conv1;
    Norm norm1;
    Conv conv2;
    Norm norm2;
  };
  struct Up {
    std::size_t transpose;
    DoubleConv convs;
  };

  // Either binds parameters for gradients or references them as constants.
  struct Binder;

  std::size_t add_param(const std::string& name, Tensor<T> value, bool trainable = true);
  Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, double gain,
                 double bias = 0.0);
  Norm make_norm(const std::string& name, std::size_t channels);
  DoubleConv make_double_conv(const std::string& name, std::size_t cin, std::size_t cout);

  Var<T> run(const Var<T>& input, Mode mode, std::uint64_t seed, const Binder& bind) const;
  Var<T> run_down(const Var<T>& x, std::size_t level, Mode mode, std::uint64_t seed, const Binder& bind) const;
  Var<T> run_up(const Var<T>& x, const Var<T>& skip, std::size_t level, Mode mode, std::uint64_t seed,
                const Binder& bind) const;
  Var<T> run_double_conv(const DoubleConv& dc, const Var<T>& x, double rate, Mode mode, std::uint64_t seed,
                         const Binder& bind) const;
  void check_input(const Tensor<T>& batch) const;

  ModelConfig config_;
  std::vector<Parameter<T>> params_;
  std::array<DoubleConv, kDepth + 1> down_{};
  std::array<Up, kDepth> up_{};
  Conv head_{};
};

/// Writes parameters and running statistics in the checkpoint container,
/// embedding the model config in the manifest.
template <typename T>
void save_model(const std::filesystem::path& path, const UNetModel<T>& model);

/// Rebuilds a model from a checkpoint of either precision.
template <typename T>
UNetModel<T> load_model(const std::filesystem::path& path);

}  // namespace cardiseg
