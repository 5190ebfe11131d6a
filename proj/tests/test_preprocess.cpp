#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cardiseg/error.hpp"
#include "cardiseg/preprocess.hpp"
#include "cardiseg/random.hpp"

using namespace cardiseg;

namespace {

Image2D<float> index_image(std::size_t h, std::size_t w) {
  Image2D<float> img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img.at(y, x) = static_cast<float>(y * 1000 + x);
  return img;
}

Image2D<float> random_image(std::size_t h, std::size_t w, Rng& rng, double scale = 1.0) {
  Image2D<float> img(h, w);
  for (auto& v : img.pixels) v = static_cast<float>(scale * rng.uniform());
  return img;
}

// Random blobs of a random subset of labels.
Image2D<std::uint8_t> random_mask(std::size_t h, std::size_t w, Rng& rng) {
  Image2D<std::uint8_t> m(h, w, 0);
  const int blobs = static_cast<int>(rng.below(4));
  for (int b = 0; b < blobs; ++b) {
    const auto label = static_cast<std::uint8_t>(1 + rng.below(3));
    const double cy = rng.uniform(0, h), cx = rng.uniform(0, w), r = rng.uniform(2, std::min(h, w) / 2.0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) < r * r) m.at(y, x) = label;
  }
  return m;
}

template <typename T>
std::set<T> value_set(const Image2D<T>& img) {
  return {img.pixels.begin(), img.pixels.end()};
}

double sorted_quantile(std::vector<float> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

TEST(Quantile, OutlierNeverSurvives) {
  std::vector<float> values;
  for (int i = 0; i < 1000; ++i) values.push_back(static_cast<float>(i));
  values.push_back(20000.0f);
  Rng rng(1);
  rng.shuffle(std::span<float>(values));
  const double q = quantile(values, 0.999);
  EXPECT_NEAR(q, sorted_quantile(values, 0.999), 1e-9);
  const Image2D<float> img(1, values.size(), values);
  const auto out = clip_quantile(img, 0.999);
  const float mx = *std::max_element(out.pixels.begin(), out.pixels.end());
  EXPECT_NEAR(mx, q, 1e-3);
  EXPECT_LT(mx, 20000.0f);
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] <= q) EXPECT_EQ(out.pixels[i], values[i]);
}

TEST(Quantile, MatchesSortOracleOnRandomData) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<float> v(1 + rng.below(300));
    for (auto& x : v) x = static_cast<float>(rng.normal(0, 100));
    const double q = rng.uniform();
    EXPECT_NEAR(quantile(v, q), sorted_quantile(v, q), 1e-3);
  }
}

TEST(Quantile, IdentityAndConstantCases) {
  Rng rng(3);
  const auto img = random_image(7, 9, rng, 50);
  EXPECT_EQ(clip_quantile(img, 1.0), img);
  const Image2D<float> flat(4, 4, 3.5f);
  EXPECT_EQ(clip_quantile(flat, 0.999), flat);
  EXPECT_ANY_THROW(quantile(std::span<const float>{}, 0.5));
  EXPECT_ANY_THROW(clip_quantile(Image2D<float>{}, 0.5));
}

TEST(MinMax, Values) {
  const auto out = minmax_normalize(Image2D<float>(1, 3, {2, 4, 6}));
  EXPECT_EQ(out.pixels, (std::vector<float>{0.0f, 0.5f, 1.0f}));
  const auto flat = minmax_normalize(Image2D<float>(3, 3, 7.0f));
  for (float v : flat.pixels) EXPECT_EQ(v, 0.0f);
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto n = minmax_normalize(random_image(5, 6, rng, 1000));
    EXPECT_EQ(*std::min_element(n.pixels.begin(), n.pixels.end()), 0.0f);
    EXPECT_EQ(*std::max_element(n.pixels.begin(), n.pixels.end()), 1.0f);
  }
}

TEST(Crop, TallInputCentred) {
  const auto out = crop_to_square(index_image(256, 224));
  ASSERT_EQ(out.height, 224u);
  ASSERT_EQ(out.width, 224u);
  EXPECT_EQ(out.at(0, 0), 16 * 1000.0f);
  EXPECT_EQ(out.at(223, 223), 239 * 1000.0f + 223);
}

TEST(Crop, OddMarginTakesBottomRow) {
  const auto out = crop_to_square(index_image(225, 224));
  EXPECT_EQ(out.at(0, 0), 0.0f);
  EXPECT_EQ(out.at(223, 0), 223 * 1000.0f);
  const auto wide = crop_to_square(index_image(10, 13));
  EXPECT_EQ(wide.at(0, 0), 1.0f);  // margins 1 left, 2 right
}

TEST(Crop, SquareIsIdentity) {
  const auto img = index_image(33, 33);
  EXPECT_EQ(crop_to_square(img), img);
}

TEST(Fit, LargerInputIsCentreCropped) {
  const auto out = fit_to_network(index_image(300, 300), 224, 224);
  ASSERT_EQ(out.height, 224u);
  EXPECT_EQ(out.at(0, 0), 38 * 1000.0f + 38);
}

TEST(Fit, SmallerInputIsResized) {
  Rng rng(5);
  const auto img = random_image(200, 200, rng);
  const auto out = fit_to_network(img, 224, 224);
  ASSERT_EQ(out.height, 224u);
  ASSERT_EQ(out.width, 224u);
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  for (float v : out.pixels) {
    EXPECT_GE(v, *lo - 1e-6f);
    EXPECT_LE(v, *hi + 1e-6f);
  }
  const auto mask = fit_to_network(random_mask(200, 200, rng), 224, 224);
  EXPECT_EQ(mask.height, 224u);
}

TEST(Fit, BilinearReproducesLinearRamp) {
  // Pixel-centre aligned upsampling reproduces an affine field away from the border.
  Image2D<float> ramp(16, 16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) ramp.at(y, x) = static_cast<float>(2 * x + 3 * y);
  const auto up = resize_bilinear(ramp, 32, 32, true);
  for (std::size_t y = 2; y < 30; ++y)
    for (std::size_t x = 2; x < 30; ++x) {
      const double sy = (y + 0.5) / 2.0 - 0.5, sx = (x + 0.5) / 2.0 - 0.5;
      EXPECT_NEAR(up.at(y, x), 2 * sx + 3 * sy, 1e-4);
    }
}

TEST(Fit, NearestCreatesNoNewLabels) {
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    const auto m = random_mask(10 + rng.below(50), 10 + rng.below(50), rng);
    const auto r = resize_nearest(m, 8 + rng.below(80), 8 + rng.below(80));
    const auto in = value_set(m);
    for (auto v : value_set(r)) EXPECT_TRUE(in.count(v));
  }
}

TEST(Distortion, MapIsMonotoneAndSpansAxis) {
  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    const std::size_t h = 8 + rng.below(100), w = 8 + rng.below(100);
    const auto map = sample_grid_distortion(h, w, 10, 0.3, rng.next_u64());
    ASSERT_EQ(map.source_y.size(), h);
    ASSERT_EQ(map.source_x.size(), w);
    for (const auto* axis : {&map.source_y, &map.source_x}) {
      const double last = static_cast<double>(axis->size() - 1);
      EXPECT_NEAR(axis->front(), 0.0, 1e-9);
      EXPECT_NEAR(axis->back(), last, 1e-9);
      for (std::size_t i = 1; i < axis->size(); ++i) EXPECT_GE((*axis)[i], (*axis)[i - 1]);
    }
  }
}

TEST(Distortion, ZeroLimitIsIdentityMap) {
  const auto map = sample_grid_distortion(20, 30, 10, 0.0, 5);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(map.source_y[i], static_cast<double>(i), 1e-9);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_NEAR(map.source_x[i], static_cast<double>(i), 1e-9);
}

TEST(Distortion, ProbabilityZeroPassesThrough) {
  Rng rng(8);
  PipelineConfig cfg;
  cfg.distortion_probability = 0.0;
  for (int t = 0; t < 50; ++t) {
    const auto img = random_image(30, 40, rng);
    const auto mask = random_mask(30, 40, rng);
    const auto [i2, m2] = grid_distort(img, mask, cfg, rng.next_u64());
    EXPECT_EQ(i2, img);
    EXPECT_EQ(m2, mask);
  }
}

TEST(Distortion, ConstantImageStaysConstant) {
  PipelineConfig cfg;
  cfg.distortion_probability = 1.0;
  const Image2D<float> flat(40, 40, 0.625f);
  const Image2D<std::uint8_t> mask(40, 40, 2);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto [img, m] = grid_distort(flat, mask, cfg, seed);
    for (float v : img.pixels) EXPECT_NEAR(v, 0.625f, 1e-6f);
    EXPECT_EQ(m, mask);
  }
}

TEST(Distortion, DeterministicAndLabelPreserving) {
  PipelineConfig cfg;
  cfg.distortion_probability = 1.0;
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const auto img = random_image(48, 48, rng);
    const auto mask = random_mask(48, 48, rng);
    const std::uint64_t seed = rng.next_u64();
    const auto a = grid_distort(img, mask, cfg, seed);
    const auto b = grid_distort(img, mask, cfg, seed);
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
    const auto in = value_set(mask);
    for (auto v : value_set(a.second)) EXPECT_TRUE(in.count(v));
  }
  EXPECT_ANY_THROW(grid_distort(random_image(8, 8, rng), Image2D<std::uint8_t>(8, 9), cfg, 1));
}

TEST(Distortion, ImageAndMaskShareTheMap) {
  // A mask equal to a thresholded image stays consistent with the distorted image.
  PipelineConfig cfg;
  cfg.distortion_probability = 1.0;
  Image2D<float> img(64, 64, 0.0f);
  Image2D<std::uint8_t> mask(64, 64, 0);
  for (std::size_t y = 20; y < 44; ++y)
    for (std::size_t x = 16; x < 40; ++x) {
      img.at(y, x) = 1.0f;
      mask.at(y, x) = 1;
    }
  const auto [di, dm] = grid_distort(img, mask, cfg, 77);
  std::size_t disagreements = 0;
  for (std::size_t i = 0; i < di.pixels.size(); ++i) {
    if (di.pixels[i] > 0.99f) disagreements += dm.pixels[i] != 1;
    if (di.pixels[i] < 0.01f) disagreements += dm.pixels[i] != 0;
  }
  EXPECT_EQ(disagreements, 0u);
}

TEST(PipelineConfig, Validation) {
  PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  c.distortion_probability = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PipelineConfig{};
  c.distortion_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PipelineConfig{};
  c.target_height = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Pipeline, PropertiesOverRandomCases) {
  Rng rng(10);
  const std::size_t targets[] = {16, 32, 48};
  std::size_t cases = 0;
  for (int t = 0; t < 1200; ++t) {
    const std::size_t h = 12 + rng.below(80), w = 12 + rng.below(80);
    Image2D<float> raw = random_image(h, w, rng, rng.uniform(1, 5000));
    if (rng.bernoulli(0.1)) raw.at(rng.below(h), rng.below(w)) = 20000.0f;
    if (rng.bernoulli(0.05)) std::fill(raw.pixels.begin(), raw.pixels.end(), 12.0f);
    const auto mask = random_mask(h, w, rng);
    PipelineConfig cfg;
    cfg.target_height = cfg.target_width = targets[rng.below(3)];
    cfg.train_mode = rng.bernoulli(0.7);
    cfg.distortion_probability = rng.bernoulli(0.2) ? 0.0 : rng.uniform();
    cfg.distortion_limit = rng.uniform(0.0, 0.5);
    cfg.distortion_steps = 1 + rng.below(12);
    const double threshold = volume_clip_threshold(raw.pixels, cfg.clip_quantile);
    const std::uint64_t seed = rng.next_u64();

    const auto out = apply_pipeline(raw, mask, threshold, cfg, seed);
    ASSERT_EQ(out.image.height, cfg.target_height);
    ASSERT_EQ(out.image.width, cfg.target_width);
    ASSERT_EQ(out.labels.height, cfg.target_height);
    ASSERT_EQ(out.labels.width, cfg.target_width);
    for (float v : out.image.pixels) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
    const auto in = value_set(mask);
    for (auto v : value_set(out.labels)) ASSERT_TRUE(in.count(v)) << int(v);
    const auto oh = one_hot_slice(out.labels, 4);
    const std::size_t plane = cfg.target_height * cfg.target_width;
    for (std::size_t i = 0; i < plane; ++i) {
      float sum = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        const float v = oh[c * plane + i];
        ASSERT_TRUE(v == 0.0f || v == 1.0f);
        sum += v;
      }
      ASSERT_EQ(sum, 1.0f);
    }
    const auto again = apply_pipeline(raw, mask, threshold, cfg, seed);
    ASSERT_EQ(again.image, out.image);
    ASSERT_EQ(again.labels, out.labels);

    if (!cfg.train_mode || cfg.distortion_probability == 0.0) {
      // No distortion applies, so the seed is irrelevant.
      const auto other = apply_pipeline(raw, mask, threshold, cfg, seed + 1);
      ASSERT_EQ(other.image, out.image);
    }
    ++cases;
  }
  EXPECT_GE(cases, 1000u);
}

TEST(Pipeline, NoSpacingResampling) {
  // Same anatomy drawn at two pixel scales stays at two scales after the pipeline.
  auto disk = [](std::size_t size, double radius) {
    Image2D<float> img(size, size, 0.0f);
    Image2D<std::uint8_t> m(size, size, 0);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = y + 0.5 - size / 2.0, dx = x + 0.5 - size / 2.0;
        if (dy * dy + dx * dx < radius * radius) {
          img.at(y, x) = 1.0f;
          m.at(y, x) = 3;
        }
      }
    return std::pair{img, m};
  };
  PipelineConfig cfg;
  cfg.target_height = cfg.target_width = 64;
  auto count = [](const Image2D<std::uint8_t>& m) { return std::count(m.pixels.begin(), m.pixels.end(), 3); };
  const auto [i1, m1] = disk(80, 10);
  const auto [i2, m2] = disk(80, 20);
  const auto a = apply_pipeline(i1, m1, 1.0, cfg, 0);
  const auto b = apply_pipeline(i2, m2, 1.0, cfg, 0);
  EXPECT_GT(count(b.labels), 3 * count(a.labels));
}
