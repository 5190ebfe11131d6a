#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cardiseg/dataset.hpp"
#include "cardiseg/error.hpp"
#include "cardiseg/losses.hpp"
#include "cardiseg/random.hpp"

using namespace cardiseg;

namespace {

using Vec = std::vector<double>;
std::span<const double> s(const Vec& v) { return {v.data(), v.size()}; }

// [1, C, 1, N] tensor from per-channel rows.
Tensor<double> channels(const std::vector<Vec>& rows) {
  Tensor<double> t({1, rows.size(), 1, rows.front().size()});
  for (std::size_t c = 0; c < rows.size(); ++c)
    for (std::size_t i = 0; i < rows[c].size(); ++i) t[c * rows[c].size() + i] = rows[c][i];
  return t;
}

Tensor<double> one_hot_of(const std::vector<int>& labels, std::size_t classes) {
  std::vector<Vec> rows(classes, Vec(labels.size(), 0.0));
  for (std::size_t i = 0; i < labels.size(); ++i) rows[labels[i]][i] = 1.0;
  return channels(rows);
}

}  // namespace

TEST(Bce, HandValues) {
  EXPECT_NEAR(bce<double>(s({0.5}), s({1.0})), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce<double>(s({0.9, 0.1}), s({1.0, 0.0})), -std::log(0.9), 1e-12);
  EXPECT_NEAR(bce<double>(s({0.9, 0.1}), s({1.0, 0.0})), 0.105361, 1e-6);
}

TEST(Bce, PerfectPredictionBoundedByClamp) {
  const double v = bce<double>(s({1.0, 0.0, 1.0}), s({1.0, 0.0, 1.0}));
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, -std::log(1.0 - kLogClampEpsilon) + 1e-15);
}

TEST(Bce, Errors) {
  EXPECT_ANY_THROW(bce<double>(s({0.5, 0.5}), s({1.0})));
  EXPECT_THROW(bce<double>(s({0.5}), s({0.3})), ValidationError);
}

TEST(Wce, UnitWeightEqualsBceBitForBit) {
  Rng rng(1);
  Vec p(50), g(50);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.uniform(0.01, 0.99);
    g[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
  }
  EXPECT_EQ(wce<double>(s(p), s(g), 1.0), bce<double>(s(p), s(g)));
  EXPECT_EQ(wce<double>(s(p), s(g), 2.0), 2.0 * bce<double>(s(p), s(g)));
  EXPECT_EQ(wce<double>(s(p), s(g), 0.0), 0.0);
}

TEST(Wce, ChannelLevelIdentities) {
  Rng rng(2);
  std::vector<int> labels(30);
  for (auto& l : labels) l = static_cast<int>(rng.below(4));
  const auto truth = one_hot_of(labels, 4);
  Tensor<double> pred(truth.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = rng.uniform(0.02, 0.98);

  const LossSpec b{LossKind::kBCE, {}, 1.0, true};
  const LossSpec w1{LossKind::kWCE, {1, 1, 1, 1}, 1.0, true};
  EXPECT_EQ(loss_value(w1, pred, truth), loss_value(b, pred, truth));

  // Zero weight on a channel: that channel's predictions no longer matter.
  const LossSpec w0{LossKind::kWCE, {1, 1, 0, 1}, 1.0, true};
  Tensor<double> altered = pred;
  for (std::size_t i = 0; i < 30; ++i) altered[2 * 30 + i] = 0.5;
  EXPECT_EQ(loss_value(w0, pred, truth), loss_value(w0, altered, truth));
  EXPECT_EQ(loss_value_and_grad(w0, pred, truth).grad[2 * 30 + 3], 0.0);

  const LossSpec wrong{LossKind::kWCE, {1, 1}, 1.0, true};
  EXPECT_THROW(loss_value(wrong, pred, truth), ConfigError);
}

TEST(Jdl, HandValues) {
  EXPECT_NEAR(jdl<double>(s({1, 0, 0, 1}), s({1, 1, 0, 0}), 1.0), 0.5, 1e-12);
  EXPECT_EQ(jdl<double>(s({1, 1, 0, 0}), s({1, 1, 0, 0}), 1.0), 0.0);
  EXPECT_EQ(jdl<double>(s({0, 0, 0}), s({0, 0, 0}), 1.0), 0.0);
}

TEST(DscClass, HandValues) {
  EXPECT_EQ(dsc_class<double>(s({0, 1, 1, 0}), s({0, 1, 1, 0}), 1.0), 1.0);
  EXPECT_NEAR(dsc_class<double>(s({1, 0, 0, 1}), s({1, 1, 0, 0}), 1.0), 0.6, 1e-12);
  EXPECT_NEAR(dsc_class<double>(s({0, 0, 1, 1}), s({1, 1, 0, 0}), 1.0), 0.2, 1e-12);
  EXPECT_ANY_THROW(dsc_class<double>(s({0, 0, 1}), s({1, 1, 0, 0}), 1.0));
}

TEST(DscClass, DiceJaccardRelationOnRandomMasks) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(64);
    Vec p(n), g(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.bernoulli(0.5);
      g[i] = rng.bernoulli(0.5);
      any |= p[i] + g[i] > 0;
    }
    if (!any) continue;
    const double j = 1.0 - jdl<double>(s(p), s(g), 0.0);
    const double d = dsc_class<double>(s(p), s(g), 0.0);
    EXPECT_NEAR(d, 2 * j / (1 + j), 1e-12);
    EXPECT_GE(d, j - 1e-15);
  }
}

TEST(Sdl, HandValues) {
  EXPECT_EQ(sdl_from_dices(std::vector<double>{1.0, 1.0, 1.0}), 0.0);
  EXPECT_NEAR(sdl_from_dices(std::vector<double>{0.6}), 0.4, 1e-15);
  EXPECT_NEAR(sdl_from_dices(std::vector<double>{1.0, 0.5, 0.7}), 1.0 - 2.2 / 3.0, 1e-15);
  EXPECT_NEAR(sdl_from_dices(std::vector<double>{1.0, 0.5, 0.7}), 0.2667, 1e-4);
}

TEST(Sdl, PerfectMultiClassPredictionIsZero) {
  const auto truth = one_hot_of({0, 1, 2, 3, 3, 1, 0, 2}, 4);
  EXPECT_EQ(loss_value(LossSpec{LossKind::kSDL, {}, 1.0, true}, truth, truth), 0.0);
  EXPECT_EQ(loss_value(LossSpec{LossKind::kJDL, {}, 1.0, true}, truth, truth), 0.0);
}

TEST(Sdl, BackgroundToggleChangesValueNotShape) {
  const auto truth = one_hot_of({0, 1, 2, 3, 3, 1, 0, 2}, 4);
  Tensor<double> pred(truth.shape(), 0.3);
  for (std::size_t i = 0; i < 8; ++i) pred[i] = 0.9;  // background channel
  const LossSpec fg{LossKind::kSDL, {}, 1.0, true};
  const LossSpec all{LossKind::kSDL, {}, 1.0, false};
  EXPECT_NE(loss_value(fg, pred, truth), loss_value(all, pred, truth));
  EXPECT_EQ(loss_value_and_grad(fg, pred, truth).grad.shape(), loss_value_and_grad(all, pred, truth).grad.shape());
  EXPECT_EQ(fg.included_channels(4), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(all.included_channels(4), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_THROW(fg.validate(1), ConfigError);
}

TEST(DscLabels, MeanOfForegroundDices) {
  const double v = dsc_labels_from_dices(std::vector<double>{0.916, 0.951, 0.883});
  EXPECT_NEAR(v, 0.91667, 1e-5);
  // Reported to three decimals as 0.917.
  EXPECT_NEAR(v, 0.917, 5e-4);
}

TEST(DscLabels, PerfectAndEmptyClassConventions) {
  const auto truth = one_hot_of({0, 1, 2, 3, 3, 1, 0, 2}, 4);
  EXPECT_EQ(dsc_labels(truth, truth), 1.0);
  // No MYO anywhere, predicted nowhere: counts as 1.
  DiceAccumulator acc(4, 1.0);
  const std::vector<std::uint8_t> labels = {0, 1, 3, 3, 1, 0};
  acc.add_labels(labels, labels);
  const auto d = acc.dices();
  EXPECT_EQ(d[kMYO], 1.0);
  EXPECT_EQ(acc.foreground_dices(), (std::vector<double>{1.0, 1.0, 1.0}));
}

TEST(DiceAccumulator, MatchesDirectCount) {
  Rng rng(4);
  std::vector<std::uint8_t> pred(400), truth(400);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = static_cast<std::uint8_t>(rng.below(4));
    truth[i] = static_cast<std::uint8_t>(rng.below(4));
  }
  DiceAccumulator acc(4, 1.0);
  acc.add_labels(std::span(pred).first(150), std::span(truth).first(150));
  acc.add_labels(std::span(pred).subspan(150), std::span(truth).subspan(150));
  const auto d = acc.dices();
  for (std::size_t c = 0; c < 4; ++c) {
    double inter = 0, np = 0, nt = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      inter += pred[i] == c && truth[i] == c;
      np += pred[i] == c;
      nt += truth[i] == c;
    }
    EXPECT_NEAR(d[c], (2 * inter + 1) / (np + nt + 1), 1e-15);
  }
}

TEST(Decode, ThresholdedForegroundRule) {
  // Per pixel channels: bg, RV, MYO, LV.
  const auto probs = channels({{0.9, 0.9, 0.1, 0.2, 0.9},
                               {0.6, 0.4, 0.5, 0.7, 0.5},
                               {0.2, 0.3, 0.5, 0.8, 0.1},
                               {0.55, 0.1, 0.2, 0.8, 0.49}});
  std::vector<std::uint8_t> labels(5);
  decode_prediction(probs, std::span<std::uint8_t>(labels));
  // Pixel 0: RV 0.6 beats LV 0.55 despite bg 0.9. Pixel 1: nothing reaches 0.5.
  // Pixel 2: tie at exactly 0.5 goes to the lower channel. Pixel 3: MYO/LV tie.
  EXPECT_EQ(labels, (std::vector<std::uint8_t>{1, 0, 1, 2, 1}));
}

TEST(Decode, OneHotTruthDecodesToItself) {
  Rng rng(5);
  std::vector<int> labels(64);
  for (auto& l : labels) l = static_cast<int>(rng.below(4));
  std::vector<std::uint8_t> out(64);
  decode_prediction(one_hot_of(labels, 4), std::span<std::uint8_t>(out));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(out[i], labels[i]);
}

TEST(LossVar, TapeValueMatchesDirectEvaluation) {
  Rng rng(6);
  std::vector<int> labels(20);
  for (auto& l : labels) l = static_cast<int>(rng.below(4));
  const auto truth = one_hot_of(labels, 4);
  Tensor<double> pred(truth.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = rng.uniform(0.05, 0.95);
  for (LossKind k : {LossKind::kBCE, LossKind::kWCE, LossKind::kJDL, LossKind::kSDL}) {
    LossSpec spec{k, k == LossKind::kWCE ? Vec{1, 1, 2, 1} : Vec{}, 1.0, true};
    Tape<double> tape;
    auto p = tape.input(pred);
    auto l = loss(spec, p, truth);
    EXPECT_EQ(l.value()[0], loss_value(spec, pred, truth)) << to_string(k);
    tape.backward(l);
    const auto ref = loss_value_and_grad(spec, pred, truth).grad;
    for (std::size_t i = 0; i < pred.size(); ++i) EXPECT_NEAR(p.grad()[i], ref[i], 1e-15);
  }
}

TEST(LossKind, ParseAndPrint) {
  for (LossKind k : {LossKind::kBCE, LossKind::kWCE, LossKind::kJDL, LossKind::kSDL})
    EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  EXPECT_EQ(parse_loss_kind("SDL"), LossKind::kSDL);
  EXPECT_ANY_THROW(parse_loss_kind("dice"));
}
