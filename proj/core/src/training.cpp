#include "cardiseg/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cardiseg/evaluation.hpp"
#include "cardiseg/ops.hpp"
#include "cardiseg/random.hpp"

namespace cardiseg {

void TrainConfig::validate(std::size_t num_classes) const {
  if (batch_size == 0) throw ConfigError("must be at least 1", "/train/batch_size");
  if (!(initial_lr > 0.0)) throw ConfigError("must be positive", "/train/initial_lr");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("must lie in (0, 1)", "/train/lr_factor");
  if (!(min_lr > 0.0)) throw ConfigError("must be positive", "/train/min_lr");
  if (min_lr > initial_lr) throw ConfigError("must not exceed initial_lr", "/train/min_lr");
  if (!(min_delta >= 0.0)) throw ConfigError("must be non-negative", "/train/min_delta");
  if (lr_patience == 0) throw ConfigError("must be at least 1", "/train/lr_patience");
  if (early_stop_patience == 0) throw ConfigError("must be at least 1", "/train/early_stop_patience");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("must lie in [0, 1)", "/train/beta1");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("must lie in [0, 1)", "/train/beta2");
  if (!(adam_epsilon > 0.0)) throw ConfigError("must be positive", "/train/adam_epsilon");
  if (!(target_dsc >= 0.0 && target_dsc <= 1.0)) throw ConfigError("must lie in [0, 1]", "/train/target_dsc");
  try {
    loss.validate(num_classes);
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), "/train/loss");
  }
}

template <typename T>
TrainState<T> TrainState<T>::initial(const TrainConfig& config, std::span<const Parameter<T>> params) {
  TrainState s;
  s.current_lr = config.initial_lr;
  for (const auto& p : params) {
    s.adam_m.emplace_back(p.value.shape(), T{0});
    s.adam_v.emplace_back(p.value.shape(), T{0});
  }
  return s;
}

template <typename T>
void adam_step(std::span<Parameter<T>> params, TrainState<T>& state, double lr, double beta1, double beta2,
               double epsilon) {
  if (state.adam_m.size() != params.size() || state.adam_v.size() != params.size()) {
    throw ShapeError("optimiser state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (p.grad.shape() != p.value.shape() || state.adam_m[i].shape() != p.value.shape()) {
      throw ShapeError("gradient or moment shape differs from parameter " + p.name);
    }
    if (!p.trainable) continue;
    for (T g : p.grad.data()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    auto value = p.value.data();
    const auto grad = p.grad.data();
    auto m = state.adam_m[i].data();
    auto v = state.adam_v[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      const double mj = beta1 * m[j] + (1.0 - beta1) * g;
      const double vj = beta2 * v[j] + (1.0 - beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      value[j] = static_cast<T>(value[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + epsilon));
    }
  }
}

template <typename T>
void lr_schedule_update(TrainState<T>& state, const TrainConfig& config, double monitored_loss) {
  if (monitored_loss < state.best_loss - config.min_delta) {
    state.best_loss = monitored_loss;
    state.epochs_since_improvement = 0;
    state.lr_wait = 0;
    return;
  }
  ++state.epochs_since_improvement;
  ++state.lr_wait;
  if (state.lr_wait > config.lr_patience) {
    state.current_lr = std::max(state.current_lr * config.lr_factor, config.min_lr);
    state.lr_wait = 0;
  }
}

template <typename T>
StopDecision early_stop_check(const TrainState<T>& state, const TrainConfig& config) {
  return state.epochs_since_improvement > config.early_stop_patience ? StopDecision::kStop : StopDecision::kContinue;
}

std::string History::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,lr,dsc_rv,dsc_lv,dsc_myo,dsc_labels\n";
  char line[256];
  for (const auto& e : epochs) {
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6g,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss, e.val_loss,
                  e.lr, e.dsc_rv, e.dsc_lv, e.dsc_myo, e.dsc_labels);
    out += line;
  }
  return out;
}

namespace {

struct SliceRef {
  const VolumeSample* sample;
  std::size_t z;
  double clip_threshold;
};

template <typename T>
std::vector<Tensor<T>> snapshot(const UNetModel<T>& model) {
  std::vector<Tensor<T>> out;
  for (const auto& p : model.parameters()) out.push_back(p.value);
  return out;
}

template <typename T>
void restore(UNetModel<T>& model, const std::vector<Tensor<T>>& values) {
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = values[i];
}

}  // namespace

template <typename T>
FitResult<T> fit(UNetModel<T>& model, const DatasetIndex& train, const DatasetIndex& val, const TrainConfig& config,
                 const PipelineConfig& pipeline, const FitOptions<T>& options) {
  const ModelConfig& mc = model.config();
  config.validate(mc.num_classes);
  if (train.empty()) throw ConfigError("training set is empty", "/dataset");
  PipelineConfig train_pipe = pipeline;
  train_pipe.target_height = mc.input_height;
  train_pipe.target_width = mc.input_width;
  train_pipe.validate();
  train_pipe.train_mode = true;
  PipelineConfig val_pipe = train_pipe;
  val_pipe.train_mode = false;

  FitResult<T> result;
  result.state = options.resume ? *options.resume : TrainState<T>::initial(config, model.parameters());
  if (result.state.adam_m.size() != model.parameters().size()) {
    throw ConfigError("resumed optimiser state does not match the model");
  }
  if (config.max_epochs == 0) return result;

  std::vector<SliceRef> slices;
  for (const auto& s : train.samples()) {
    const double threshold = volume_clip_threshold(s->image.voxels, train_pipe.clip_quantile);
    for (std::size_t z = 0; z < s->image.slices; ++z) slices.push_back({s.get(), z, threshold});
  }
  const auto val_volumes = prepare_volumes<T>(val, val_pipe, mc.num_classes);

  const std::size_t h = mc.input_height, w = mc.input_width, plane = h * w, classes = mc.num_classes;
  std::vector<Tensor<T>> best = snapshot(model);
  double best_monitored = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const std::vector<Tensor<T>> epoch_start = snapshot(model);
    std::vector<std::size_t> order(slices.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed({config.seed, 0x73687566ULL, epoch}));
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      Tensor<T> images({count, 1, h, w});
      Tensor<T> truth({count, classes, h, w});
      for (std::size_t b = 0; b < count; ++b) {
        const SliceRef& ref = slices[order[first + b]];
        const std::uint64_t seed = mix_seed({config.seed, train_pipe.seed, hash_string(ref.sample->patient_id),
                                             static_cast<std::uint64_t>(ref.sample->phase), ref.z, epoch});
        const PreparedSlice p = apply_pipeline(ref.sample->image.slice(ref.z), ref.sample->mask.slice(ref.z),
                                               ref.clip_threshold, train_pipe, seed);
        std::copy(p.image.pixels.begin(), p.image.pixels.end(), images.raw() + b * plane);
        const Tensor<float> hot = one_hot_slice(p.labels, classes);
        std::copy(hot.raw(), hot.raw() + hot.size(), truth.raw() + b * classes * plane);
      }
      model.zero_grad();
      Tape<T> tape;
      const Var<T> probs =
          model.forward(tape.constant(std::move(images)), Mode::kTrain, mix_seed({config.seed, result.state.step}));
      const Var<T> l = loss(config.loss, probs, truth);
      const double value = static_cast<double>(l.value()[0]);
      try {
        if (!std::isfinite(value)) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
        tape.backward(l);
        adam_step<T>(model.parameters(), result.state, result.state.current_lr, config.beta1, config.beta2,
                     config.adam_epsilon);
      } catch (const NumericError&) {
        restore(model, epoch_start);
        if (!options.checkpoint_path.empty()) save_model(options.checkpoint_path, model);
        throw;
      }
      loss_sum += value * static_cast<double>(count);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.lr = result.state.current_lr;
    record.train_loss = loss_sum / static_cast<double>(slices.size());
    record.val_loss = std::numeric_limits<double>::quiet_NaN();
    record.dsc_rv = record.dsc_lv = record.dsc_myo = record.dsc_labels = std::numeric_limits<double>::quiet_NaN();
    if (!val_volumes.empty()) {
      const EvaluationRun run = evaluate_volumes(model, val_volumes, config.batch_size, &config.loss);
      record.val_loss = run.loss;
      record.dsc_labels = mean_volume_dice(run.volumes, 0);
      if (classes == kNumLabels) {
        record.dsc_rv = mean_volume_dice(run.volumes, kRV);
        record.dsc_lv = mean_volume_dice(run.volumes, kLV);
        record.dsc_myo = mean_volume_dice(run.volumes, kMYO);
      }
    }
    const double monitored = val_volumes.empty() ? record.train_loss : record.val_loss;
    if (!std::isfinite(monitored)) {
      restore(model, epoch_start);
      if (!options.checkpoint_path.empty()) save_model(options.checkpoint_path, model);
      throw NumericError("non-finite monitored loss at epoch " + std::to_string(epoch));
    }
    if (monitored < best_monitored) {
      best_monitored = monitored;
      best = snapshot(model);
      result.history.best_epoch = static_cast<long>(epoch);
      if (!options.checkpoint_path.empty()) save_model(options.checkpoint_path, model);
    }
    lr_schedule_update(result.state, config, monitored);
    result.state.epoch = epoch + 1;
    result.history.epochs.push_back(record);
    spdlog::debug("epoch {} train {:.4f} val {:.4f} dsc {:.4f} lr {:.3g}", epoch, record.train_loss, record.val_loss,
                  record.dsc_labels, record.lr);
    if (options.on_epoch) options.on_epoch(record);
    if (early_stop_check(result.state, config) == StopDecision::kStop) {
      result.history.stopped_early = true;
      break;
    }
    if (config.target_dsc > 0.0 && record.dsc_labels >= config.target_dsc) {
      result.history.reached_target = true;
      break;
    }
  }
  restore(model, best);
  return result;
}

#define CARDISEG_INSTANTIATE(T)                                                                                 \
  template struct TrainState<T>;                                                                                \
  template void adam_step<T>(std::span<Parameter<T>>, TrainState<T>&, double, double, double, double);        \
  template void lr_schedule_update<T>(TrainState<T>&, const TrainConfig&, double);                             \
  template StopDecision early_stop_check<T>(const TrainState<T>&, const TrainConfig&);                         \
  template FitResult<T> fit<T>(UNetModel<T>&, const DatasetIndex&, const DatasetIndex&, const TrainConfig&,    \
                               const PipelineConfig&, const FitOptions<T>&);

CARDISEG_INSTANTIATE(float)
CARDISEG_INSTANTIATE(double)
#undef CARDISEG_INSTANTIATE

}  // namespace cardiseg
