#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cardiseg/dataset.hpp"
#include "cardiseg/losses.hpp"
#include "cardiseg/preprocess.hpp"
#include "cardiseg/unet.hpp"

namespace cardiseg {

struct TrainConfig {
  std::size_t batch_size = 32;
  double initial_lr = 1e-3;
  double lr_factor = 0.5;
  std::size_t lr_patience = 5;
  double min_lr = 1e-8;
  /// A monitored loss counts as an improvement only when it undercuts the
  /// best value by more than this.
  double min_delta = 1e-4;
  std::size_t early_stop_patience = 10;
  LossSpec loss;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// When positive, training ends once validation DSC_labels reaches it.
  double target_dsc = 0.0;

  void validate(std::size_t num_classes) const;
};

template <typename T>
struct TrainState {
  std::size_t epoch = 0;
  double current_lr = 0.0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improvement = 0;  // early-stopping counter
  std::size_t lr_wait = 0;                   // plateau counter, reset on every lr drop
  std::uint64_t step = 0;
  std::vector<Tensor<T>> adam_m;
  std::vector<Tensor<T>> adam_v;

  /// Fresh state at initial_lr with zero moments shaped like `params`.
  static TrainState initial(const TrainConfig& config, std::span<const Parameter<T>> params);
};

/// Bias-corrected Adam over the trainable parameters using their `grad`:
/// p -= lr * m_hat / (sqrt(v_hat) + eps). Throws NumericError on a
/// non-finite gradient before touching any parameter.
template <typename T>
void adam_step(std::span<Parameter<T>> params, TrainState<T>& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double epsilon = 1e-8);

/// Plateau schedule: after more than lr_patience epochs without improvement
/// lr <- max(lr * lr_factor, min_lr) and the plateau counter restarts.
template <typename T>
void lr_schedule_update(TrainState<T>& state, const TrainConfig& config, double monitored_loss);

enum class StopDecision { kContinue, kStop };

template <typename T>
StopDecision early_stop_check(const TrainState<T>& state, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation set
  double lr = 0.0;        // rate used during the epoch
  double dsc_rv = 0.0;
  double dsc_lv = 0.0;
  double dsc_myo = 0.0;
  double dsc_labels = 0.0;
};

struct History {
  std::vector<EpochRecord> epochs;
  /// Epoch whose weights the model holds after fit; -1 when no epoch ran.
  long best_epoch = -1;
  bool stopped_early = false;
  bool reached_target = false;

  /// Header: epoch,train_loss,val_loss,lr,dsc_rv,dsc_lv,dsc_myo,dsc_labels.
  std::string to_csv() const;
};

template <typename T>
struct FitOptions {
  /// Best-so-far weights are written here after every improving epoch, and
  /// the last good weights on a numeric failure.
  std::filesystem::path checkpoint_path;
  /// Continue from an existing optimiser state instead of a fresh one.
  const TrainState<T>* resume = nullptr;
  std::function<void(const EpochRecord&)> on_epoch;
};

template <typename T>
struct FitResult {
  History history;
  TrainState<T> state;
};

/// Epoch loop over all training slices in seeded random order. The monitored
/// loss is the validation loss, or the training loss when `val` is empty.
/// On return the model holds the weights of the best monitored epoch.
/// The pipeline's target size is taken from the model.
template <typename T>
FitResult<T> fit(UNetModel<T>& model, const DatasetIndex& train, const DatasetIndex& val, const TrainConfig& config,
                 const PipelineConfig& pipeline, const FitOptions<T>& options = {});

}  // namespace cardiseg
