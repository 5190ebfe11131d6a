#include "cardiseg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cardiseg {

template <typename T>
std::vector<PreparedVolume<T>> prepare_volumes(const DatasetIndex& index, const PipelineConfig& pipeline,
                                               std::size_t num_classes) {
  PipelineConfig infer = pipeline;
  infer.train_mode = false;
  const std::size_t h = infer.target_height, w = infer.target_width, plane = h * w;
  std::vector<PreparedVolume<T>> out;
  out.reserve(index.size());
  for (const auto& sample : index.samples()) {
    PreparedVolume<T> v;
    v.patient_id = sample->patient_id;
    v.phase = sample->phase;
    const std::size_t s = sample->image.slices;
    v.images = Tensor<T>({s, 1, h, w});
    v.truth = Tensor<T>({s, num_classes, h, w});
    const double threshold = volume_clip_threshold(sample->image.voxels, infer.clip_quantile);
    for (std::size_t z = 0; z < s; ++z) {
      const PreparedSlice p = apply_pipeline(sample->image.slice(z), sample->mask.slice(z), threshold, infer, 0);
      std::copy(p.image.pixels.begin(), p.image.pixels.end(), v.images.raw() + z * plane);
      const Tensor<float> hot = one_hot_slice(p.labels, num_classes);
      std::copy(hot.raw(), hot.raw() + hot.size(), v.truth.raw() + z * num_classes * plane);
    }
    out.push_back(std::move(v));
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> slice_range(const Tensor<T>& t, std::size_t first, std::size_t count) {
  Shape shape = t.shape();
  const std::size_t per = t.size() / shape[0];
  shape[0] = count;
  std::vector<T> data(t.raw() + first * per, t.raw() + (first + count) * per);
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace

template <typename T>
EvaluationRun evaluate_volumes(const UNetModel<T>& model, const std::vector<PreparedVolume<T>>& volumes,
                               std::size_t batch_size, const LossSpec* loss_spec) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t classes = model.config().num_classes;
  EvaluationRun run;
  double loss_sum = 0.0;
  std::size_t loss_weight = 0;
  for (const auto& v : volumes) {
    DiceAccumulator acc(classes);
    const std::size_t slices = v.images.dim(0);
    for (std::size_t first = 0; first < slices; first += batch_size) {
      const std::size_t count = std::min(batch_size, slices - first);
      const Tensor<T> truth = slice_range(v.truth, first, count);
      const Tensor<T> probs = model.predict(slice_range(v.images, first, count));
      acc.add(probs, truth);
      if (loss_spec) {
        loss_sum += loss_value(*loss_spec, probs, truth) * static_cast<double>(count);
        loss_weight += count;
      }
    }
    VolumeScore score;
    score.patient_id = v.patient_id;
    score.phase = v.phase;
    score.dices = acc.dices();
    const auto fg = acc.foreground_dices();
    score.dsc_labels = dsc_labels_from_dices(fg);
    run.volumes.push_back(std::move(score));
  }
  run.loss = loss_weight > 0 ? loss_sum / static_cast<double>(loss_weight) : std::numeric_limits<double>::quiet_NaN();
  return run;
}

double mean_volume_dice(const std::vector<VolumeScore>& scores, std::size_t label) {
  if (scores.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const auto& s : scores) sum += label == 0 ? s.dsc_labels : s.dices.at(label);
  return sum / static_cast<double>(scores.size());
}

template std::vector<PreparedVolume<float>> prepare_volumes(const DatasetIndex&, const PipelineConfig&, std::size_t);
template std::vector<PreparedVolume<double>> prepare_volumes(const DatasetIndex&, const PipelineConfig&, std::size_t);
template EvaluationRun evaluate_volumes(const UNetModel<float>&, const std::vector<PreparedVolume<float>>&,
                                        std::size_t, const LossSpec*);
template EvaluationRun evaluate_volumes(const UNetModel<double>&, const std::vector<PreparedVolume<double>>&,
                                        std::size_t, const LossSpec*);

}  // namespace cardiseg
