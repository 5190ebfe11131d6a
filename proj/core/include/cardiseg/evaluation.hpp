#pragma once

#include <string>
#include <vector>

#include "cardiseg/dataset.hpp"
#include "cardiseg/losses.hpp"
#include "cardiseg/preprocess.hpp"
#include "cardiseg/unet.hpp"

namespace cardiseg {

/// One volume run through the inference pipeline, ready for the network.
template <typename T>
struct PreparedVolume {
  std::string patient_id;
  Phase phase = Phase::kED;
  Tensor<T> images;  // [S, 1, H, W]
  Tensor<T> truth;   // [S, C, H, W] one-hot
};

/// Infer-mode pipeline (no distortion) at the config's target size.
template <typename T>
std::vector<PreparedVolume<T>> prepare_volumes(const DatasetIndex& index, const PipelineConfig& pipeline,
                                               std::size_t num_classes);

struct VolumeScore {
  std::string patient_id;
  Phase phase = Phase::kED;
  std::vector<double> dices;  // per class, background at index 0
  double dsc_labels = 0.0;    // mean foreground dice
};

struct EvaluationRun {
  std::vector<VolumeScore> volumes;
  double loss = 0.0;  // slice-weighted mean over chunks; NaN when no loss was requested
};

/// Predicts every volume in chunks of at most `batch_size` slices and scores
/// it with decoded-label dice. With `loss_spec` set, also averages the loss.
template <typename T>
EvaluationRun evaluate_volumes(const UNetModel<T>& model, const std::vector<PreparedVolume<T>>& volumes,
                               std::size_t batch_size, const LossSpec* loss_spec = nullptr);

/// Mean of a per-volume statistic; label index 0 selects DSC_labels.
double mean_volume_dice(const std::vector<VolumeScore>& scores, std::size_t label);

}  // namespace cardiseg
