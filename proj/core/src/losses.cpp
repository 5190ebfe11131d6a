#include "cardiseg/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>

namespace cardiseg {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kBCE: return "bce";
    case LossKind::kWCE: return "wce";
    case LossKind::kJDL: return "jdl";
    case LossKind::kSDL: return "sdl";
  }
  return "unknown";
}

LossKind parse_loss_kind(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "bce") return LossKind::kBCE;
  if (t == "wce") return LossKind::kWCE;
  if (t == "jdl") return LossKind::kJDL;
  if (t == "sdl") return LossKind::kSDL;
  throw ConfigError("unknown loss kind '" + text + "' (expected bce, wce, jdl or sdl)");
}

void LossSpec::validate(std::size_t num_classes) const {
  if (!(smooth >= 0.0)) throw ConfigError("loss smooth must be non-negative");
  if (ignore_background && num_classes < 2) {
    throw ConfigError("loss needs at least one foreground class when the background channel is ignored");
  }
  if (num_classes < 1) throw ConfigError("loss needs at least one class");
  if (kind == LossKind::kWCE) {
    if (class_weights.size() != num_classes) {
      throw ConfigError("wce needs " + std::to_string(num_classes) + " class weights, got " +
                        std::to_string(class_weights.size()));
    }
    for (double w : class_weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("wce class weights must be finite and non-negative");
    }
  }
}

std::vector<std::size_t> LossSpec::included_channels(std::size_t num_classes) const {
  std::vector<std::size_t> out;
  for (std::size_t c = ignore_background ? 1 : 0; c < num_classes; ++c) out.push_back(c);
  return out;
}

namespace {

template <typename T>
void require_same_size(std::span<const T> a, std::span<const T> b, const char* what) {
  if (a.size() != b.size()) throw ShapeError(std::string(what) + ": prediction and truth sizes differ");
}

template <typename T>
void require_binary(std::span<const T> truth) {
  for (T g : truth) {
    if (g != T{0} && g != T{1}) throw ValidationError("cross-entropy truth must be binary {0,1}");
  }
}

inline double clamp_prob(double p) { return std::clamp(p, kLogClampEpsilon, 1.0 - kLogClampEpsilon); }

// Per-voxel cross-entropy term -(g log p + (1-g) log(1-p)).
inline double ce_term(double p, double g) {
  const double q = clamp_prob(p);
  return -(g * std::log(q) + (1.0 - g) * std::log(1.0 - q));
}

// d ce_term / dp; zero where the clamp is active.
inline double ce_grad(double p, double g) {
  if (p <= kLogClampEpsilon || p >= 1.0 - kLogClampEpsilon) return 0.0;
  return -(g / p - (1.0 - g) / (1.0 - p));
}

// Sum of w * ce_term over a span; bce and wce share this so unit weights agree bit-for-bit.
template <typename T>
double weighted_ce_sum(std::span<const T> pred, std::span<const T> truth, double weight) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += weight * ce_term(pred[i], truth[i]);
  return acc;
}

struct OverlapSums {
  double intersection = 0.0, truth = 0.0, pred = 0.0;
};

template <typename T>
OverlapSums overlap(std::span<const T> pred, std::span<const T> truth) {
  OverlapSums s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s.intersection += static_cast<double>(truth[i]) * pred[i];
    s.truth += truth[i];
    s.pred += pred[i];
  }
  return s;
}

double dice_from(const OverlapSums& s, double smooth) {
  return (2.0 * s.intersection + smooth) / (s.truth + s.pred + smooth);
}

double jaccard_from(const OverlapSums& s, double smooth) {
  return (s.intersection + smooth) / (s.truth + s.pred - s.intersection + smooth);
}

struct ChannelLayout {
  std::size_t batch, channels, plane;
};

template <typename T>
ChannelLayout layout_of(const Tensor<T>& pred, const Tensor<T>& truth) {
  require_rank4(pred, "loss prediction");
  if (pred.shape() != truth.shape()) {
    throw ShapeError("loss: prediction " + shape_to_string(pred.shape()) + " and truth " +
                     shape_to_string(truth.shape()) + " differ");
  }
  return {pred.dim(0), pred.dim(1), pred.dim(2) * pred.dim(3)};
}

// Gathers the (B,H,W) voxels of channel c into a contiguous buffer.
template <typename T>
std::vector<T> channel_values(const Tensor<T>& t, const ChannelLayout& l, std::size_t c) {
  std::vector<T> out(l.batch * l.plane);
  for (std::size_t b = 0; b < l.batch; ++b) {
    std::copy_n(t.raw() + (b * l.channels + c) * l.plane, l.plane, out.data() + b * l.plane);
  }
  return out;
}

template <typename T>
void scatter_channel_grad(Tensor<T>& grad, const ChannelLayout& l, std::size_t c, const std::vector<double>& g) {
  for (std::size_t b = 0; b < l.batch; ++b) {
    for (std::size_t i = 0; i < l.plane; ++i) {
      grad[(b * l.channels + c) * l.plane + i] = static_cast<T>(g[b * l.plane + i]);
    }
  }
}

template <typename T>
LossEvaluation<T> evaluate(const LossSpec& spec, const Tensor<T>& pred, const Tensor<T>& truth, bool with_grad) {
  const ChannelLayout l = layout_of(pred, truth);
  spec.validate(l.channels);
  const auto channels = spec.included_channels(l.channels);
  LossEvaluation<T> r;
  if (with_grad) r.grad = Tensor<T>(pred.shape());
  const std::size_t voxels = l.batch * l.plane;

  switch (spec.kind) {
    case LossKind::kBCE:
    case LossKind::kWCE: {
      const double n = static_cast<double>(voxels * channels.size());
      double acc = 0.0;
      for (auto c : channels) {
        const double w = spec.kind == LossKind::kWCE ? spec.class_weights[c] : 1.0;
        const auto p = channel_values(pred, l, c);
        const auto g = channel_values(truth, l, c);
        require_binary<T>(g);
        acc += weighted_ce_sum<T>(p, g, w);
        if (with_grad) {
          std::vector<double> dg(voxels);
          for (std::size_t i = 0; i < voxels; ++i) dg[i] = w * ce_grad(p[i], g[i]) / n;
          scatter_channel_grad(r.grad, l, c, dg);
        }
      }
      r.value = acc / n;
      break;
    }
    case LossKind::kJDL: {
      double acc = 0.0;
      for (auto c : channels) {
        const auto p = channel_values(pred, l, c);
        const auto g = channel_values(truth, l, c);
        const OverlapSums s = overlap<T>(p, g);
        acc += 1.0 - jaccard_from(s, spec.smooth);
        if (with_grad) {
          const double num = s.intersection + spec.smooth;
          const double den = s.truth + s.pred - s.intersection + spec.smooth;
          std::vector<double> dg(voxels);
          for (std::size_t i = 0; i < voxels; ++i) {
            dg[i] = -(g[i] * den - num * (1.0 - g[i])) / (den * den);
          }
          scatter_channel_grad(r.grad, l, c, dg);
        }
      }
      r.value = acc;
      break;
    }
    case LossKind::kSDL: {
      const double inv_c = 1.0 / static_cast<double>(channels.size());
      std::vector<double> dices;
      for (auto c : channels) {
        const auto p = channel_values(pred, l, c);
        const auto g = channel_values(truth, l, c);
        const OverlapSums s = overlap<T>(p, g);
        dices.push_back(dice_from(s, spec.smooth));
        if (with_grad) {
          const double num = 2.0 * s.intersection + spec.smooth;
          const double den = s.truth + s.pred + spec.smooth;
          std::vector<double> dg(voxels);
          for (std::size_t i = 0; i < voxels; ++i) dg[i] = -inv_c * (2.0 * g[i] * den - num) / (den * den);
          scatter_channel_grad(r.grad, l, c, dg);
        }
      }
      r.value = sdl_from_dices(dices);
      break;
    }
  }
  return r;
}

}  // namespace

template <typename T>
double bce(std::span<const T> pred, std::span<const T> truth) {
  require_same_size(pred, truth, "bce");
  require_binary(truth);
  if (pred.empty()) throw ShapeError("bce: empty input");
  return weighted_ce_sum(pred, truth, 1.0) / static_cast<double>(pred.size());
}

template <typename T>
double wce(std::span<const T> pred, std::span<const T> truth, double weight) {
  require_same_size(pred, truth, "wce");
  require_binary(truth);
  if (pred.empty()) throw ShapeError("wce: empty input");
  return weighted_ce_sum(pred, truth, weight) / static_cast<double>(pred.size());
}

template <typename T>
double jdl(std::span<const T> pred, std::span<const T> truth, double smooth) {
  require_same_size(pred, truth, "jdl");
  return 1.0 - jaccard_from(overlap(pred, truth), smooth);
}

template <typename T>
double dsc_class(std::span<const T> pred, std::span<const T> truth, double smooth) {
  require_same_size(pred, truth, "dsc_class");
  return dice_from(overlap(pred, truth), smooth);
}

double sdl_from_dices(std::span<const double> dices) {
  if (dices.empty()) throw ConfigError("soft dice loss needs at least one foreground class");
  double acc = 0.0;
  for (double d : dices) acc += d;
  return 1.0 - acc / static_cast<double>(dices.size());
}

double dsc_labels_from_dices(std::span<const double> foreground_dices) {
  if (foreground_dices.empty()) throw ConfigError("DSC_labels needs at least one foreground class");
  double acc = 0.0;
  for (double d : foreground_dices) acc += d;
  return acc / static_cast<double>(foreground_dices.size());
}

template <typename T>
double loss_value(const LossSpec& spec, const Tensor<T>& pred, const Tensor<T>& truth) {
  return evaluate(spec, pred, truth, false).value;
}

template <typename T>
LossEvaluation<T> loss_value_and_grad(const LossSpec& spec, const Tensor<T>& pred, const Tensor<T>& truth) {
  return evaluate(spec, pred, truth, true);
}

template <typename T>
Var<T> loss(const LossSpec& spec, const Var<T>& pred, const Tensor<T>& truth) {
  LossEvaluation<T> e = evaluate(spec, pred.value(), truth, pred.requires_grad());
  Tape<T>* tape = &pred.tape();
  const std::size_t pi = pred.index();
  return tape->record(Tensor<T>({1}, static_cast<T>(e.value)), {pred},
                      [tape, pi, g = std::move(e.grad)](const Tensor<T>& gout) {
                        Tensor<T>& gp = tape->grad_buffer(pi);
                        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * gout[0];
                      });
}

DiceAccumulator::DiceAccumulator(std::size_t num_classes, double smooth)
    : num_classes_(num_classes),
      smooth_(smooth),
      intersection_(num_classes, 0.0),
      truth_sum_(num_classes, 0.0),
      pred_sum_(num_classes, 0.0) {
  if (num_classes == 0) throw ConfigError("dice accumulator needs at least one class");
}

template <typename T>
void decode_prediction(const Tensor<T>& probs, std::span<std::uint8_t> labels) {
  require_rank4(probs, "decode_prediction");
  const std::size_t batch = probs.dim(0), channels = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
  if (labels.size() != batch * plane) throw ShapeError("decode_prediction: label buffer size mismatch");
  if (channels > 256) throw ShapeError("decode_prediction supports at most 256 channels");
  const auto p = probs.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = 0;
      T best_value = T(kForegroundThreshold);
      for (std::size_t c = 1; c < channels; ++c) {
        const T v = p[(b * channels + c) * plane + i];
        if (v > best_value || (best == 0 && v == best_value)) {
          best = c;
          best_value = v;
        }
      }
      labels[b * plane + i] = static_cast<std::uint8_t>(best);
    }
  }
}

template <typename T>
void DiceAccumulator::add(const Tensor<T>& probs, const Tensor<T>& truth_onehot) {
  const ChannelLayout l = layout_of(probs, truth_onehot);
  if (l.channels != num_classes_) throw ShapeError("dice accumulator: channel count mismatch");
  std::vector<std::uint8_t> predicted(l.batch * l.plane), truth(l.batch * l.plane);
  decode_prediction(probs, std::span<std::uint8_t>(predicted));
  for (std::size_t b = 0; b < l.batch; ++b) {
    for (std::size_t i = 0; i < l.plane; ++i) {
      std::size_t best_t = 0;
      for (std::size_t c = 1; c < l.channels; ++c) {
        if (truth_onehot[(b * l.channels + c) * l.plane + i] > truth_onehot[(b * l.channels + best_t) * l.plane + i]) {
          best_t = c;
        }
      }
      truth[b * l.plane + i] = static_cast<std::uint8_t>(best_t);
    }
  }
  add_labels(predicted, truth);
}

void DiceAccumulator::add_labels(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("dice accumulator: label map sizes differ");
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto p = predicted[i], t = truth[i];
    if (p >= num_classes_ || t >= num_classes_) throw ValidationError("dice accumulator: label out of range");
    pred_sum_[p] += 1.0;
    truth_sum_[t] += 1.0;
    if (p == t) intersection_[p] += 1.0;
  }
}

std::vector<double> DiceAccumulator::dices() const {
  std::vector<double> out(num_classes_);
  for (std::size_t c = 0; c < num_classes_; ++c) {
    out[c] = (2.0 * intersection_[c] + smooth_) / (truth_sum_[c] + pred_sum_[c] + smooth_);
  }
  return out;
}

std::vector<double> DiceAccumulator::foreground_dices() const {
  auto all = dices();
  return {all.begin() + 1, all.end()};
}

template <typename T>
double dsc_labels(const Tensor<T>& probs, const Tensor<T>& truth_onehot, double smooth) {
  require_rank4(probs, "dsc_labels");
  DiceAccumulator acc(probs.dim(1), smooth);
  acc.add(probs, truth_onehot);
  return dsc_labels_from_dices(acc.foreground_dices());
}

#define CARDISEG_INSTANTIATE_LOSSES(T)                                                                   \
  template double bce<T>(std::span<const T>, std::span<const T>);                                       \
  template double wce<T>(std::span<const T>, std::span<const T>, double);                               \
  template double jdl<T>(std::span<const T>, std::span<const T>, double);                               \
  template double dsc_class<T>(std::span<const T>, std::span<const T>, double);                         \
  template double loss_value<T>(const LossSpec&, const Tensor<T>&, const Tensor<T>&);                   \
  template LossEvaluation<T> loss_value_and_grad<T>(const LossSpec&, const Tensor<T>&, const Tensor<T>&); \
  template Var<T> loss<T>(const LossSpec&, const Var<T>&, const Tensor<T>&);                            \
  template void DiceAccumulator::add<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template void decode_prediction<T>(const Tensor<T>&, std::span<std::uint8_t>);                       \
  template double dsc_labels<T>(const Tensor<T>&, const Tensor<T>&, double);

CARDISEG_INSTANTIATE_LOSSES(float)
CARDISEG_INSTANTIATE_LOSSES(double)

#undef CARDISEG_INSTANTIATE_LOSSES

}  // namespace cardiseg
