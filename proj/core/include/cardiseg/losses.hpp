#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cardiseg/autodiff.hpp"

namespace cardiseg {

enum class LossKind { kBCE, kWCE, kJDL, kSDL };

std::string to_string(LossKind kind);
/// Accepts "bce", "wce", "jdl", "sdl" (case-insensitive).
LossKind parse_loss_kind(const std::string& text);

/// Clamp applied to predictions inside the log-based losses.
inline constexpr double kLogClampEpsilon = 1e-7;

struct LossSpec {
  LossKind kind = LossKind::kSDL;
  /// One weight per class channel, background included (WCE only).
  std::vector<double> class_weights;
  double smooth = 1.0;
  bool ignore_background = true;

  /// Throws ConfigError if the spec cannot be applied to `num_classes` channels.
  void validate(std::size_t num_classes) const;
  /// Channel indices the loss is computed over.
  std::vector<std::size_t> included_channels(std::size_t num_classes) const;
};

// Single-channel formulas over flat voxel arrays.

/// Mean binary cross-entropy; predictions clamped to [eps, 1 - eps].
template <typename T>
double bce(std::span<const T> pred, std::span<const T> truth);

/// Cross-entropy with one class weight: weight * bce.
template <typename T>
double wce(std::span<const T> pred, std::span<const T> truth, double weight);

/// 1 - (sum g*p + s) / (sum g + sum p - sum g*p + s).
template <typename T>
double jdl(std::span<const T> pred, std::span<const T> truth, double smooth);

/// Soft Dice: (2 sum g*p + s) / (sum g + sum p + s).
template <typename T>
double dsc_class(std::span<const T> pred, std::span<const T> truth, double smooth);

/// 1 - mean of per-class soft dice values.
double sdl_from_dices(std::span<const double> dices);

/// Mean of foreground dice values (background already excluded by the caller).
double dsc_labels_from_dices(std::span<const double> foreground_dices);

// Channel-aware losses over [B,C,H,W] predictions and one-hot truth. Sums
// run over (B,H,W) per channel.

template <typename T>
struct LossEvaluation {
  double value = 0.0;
  Tensor<T> grad;  // d(loss)/d(pred)
};

template <typename T>
double loss_value(const LossSpec& spec, const Tensor<T>& pred, const Tensor<T>& truth);

template <typename T>
LossEvaluation<T> loss_value_and_grad(const LossSpec& spec, const Tensor<T>& pred, const Tensor<T>& truth);

/// Loss recorded on the prediction's tape as a [1] value.
template <typename T>
Var<T> loss(const LossSpec& spec, const Var<T>& pred, const Tensor<T>& truth);

/// Foreground probability a pixel needs before it leaves the background.
inline constexpr double kForegroundThreshold = 0.5;

/// Label map [B*H*W] of a [B,C,H,W] sigmoid output: the most probable
/// foreground channel (1..C-1) when its probability reaches
/// kForegroundThreshold, else background. The background channel's own
/// output is not consulted, so models trained without it decode correctly.
template <typename T>
void decode_prediction(const Tensor<T>& probs, std::span<std::uint8_t> labels);

/// Accumulates per-class binary dice of decoded predictions against the
/// argmax of one-hot truth. Feed every slice of one volume, then read `dices()`.
class DiceAccumulator {
 public:
  explicit DiceAccumulator(std::size_t num_classes, double smooth = 1.0);

  template <typename T>
  void add(const Tensor<T>& probs, const Tensor<T>& truth_onehot);

  /// Adds label maps directly (values in [0, num_classes)).
  void add_labels(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);

  /// One entry per class, background at index 0.
  std::vector<double> dices() const;
  std::vector<double> foreground_dices() const;

 private:
  std::size_t num_classes_;
  double smooth_;
  std::vector<double> intersection_, truth_sum_, pred_sum_;
};

/// Class-wise averaged foreground dice of a [B,C,H,W] prediction (decoded as above).
template <typename T>
double dsc_labels(const Tensor<T>& probs, const Tensor<T>& truth_onehot, double smooth = 1.0);

}  // namespace cardiseg
