#include "cardiseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cardiseg/random.hpp"

namespace cardiseg {

void PipelineConfig::validate() const {
  if (target_height == 0 || target_width == 0) throw ConfigError("target size must be positive", "/preprocess/target_size");
  if (!(clip_quantile > 0.0 && clip_quantile <= 1.0)) {
    throw ConfigError("clip quantile must lie in (0, 1]", "/preprocess/clip_quantile");
  }
  if (!(distortion_probability >= 0.0 && distortion_probability <= 1.0)) {
    throw ConfigError("probability must lie in [0, 1]", "/preprocess/distortion_probability");
  }
  if (distortion_steps == 0) throw ConfigError("distortion steps must be at least 1", "/preprocess/distortion_steps");
  if (!(distortion_limit >= 0.0 && distortion_limit < 1.0)) {
    throw ConfigError("distortion limit must lie in [0, 1)", "/preprocess/distortion_limit");
  }
}

double quantile(std::span<const float> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty array");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile must lie in [0, 1]");
  std::vector<float> sorted(values.begin(), values.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(lo), sorted.end());
  const double a = sorted[lo];
  if (hi == lo) return a;
  // The next order statistic is the minimum of the upper partition.
  const double b = *std::min_element(sorted.begin() + static_cast<std::ptrdiff_t>(hi), sorted.end());
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? a : a + frac * (b - a);
}

double volume_clip_threshold(std::span<const float> volume_voxels, double q) { return quantile(volume_voxels, q); }

Image2D<float> clip_above(const Image2D<float>& slice, double threshold) {
  if (slice.empty()) throw ValidationError("cannot clip an empty slice");
  Image2D<float> out = slice;
  const auto t = static_cast<float>(threshold);
  for (float& v : out.pixels) v = std::min(v, t);
  return out;
}

Image2D<float> clip_quantile(const Image2D<float>& slice, double q) {
  if (slice.empty()) throw ValidationError("cannot clip an empty slice");
  return clip_above(slice, quantile(slice.pixels, q));
}

Image2D<float> minmax_normalize(const Image2D<float>& slice) {
  Image2D<float> out(slice.height, slice.width, 0.0f);
  if (slice.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(slice.pixels.begin(), slice.pixels.end());
  const double lo = *lo_it;
  const double range = static_cast<double>(*hi_it) - lo;
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < slice.pixels.size(); ++i) {
    out.pixels[i] = static_cast<float>((slice.pixels[i] - lo) / range);
  }
  return out;
}

template <typename T>
Image2D<T> center_crop(const Image2D<T>& slice, std::size_t height, std::size_t width) {
  if (height > slice.height || width > slice.width) throw ShapeError("crop larger than the slice");
  const std::size_t top = (slice.height - height) / 2;
  const std::size_t left = (slice.width - width) / 2;
  Image2D<T> out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const auto row = slice.pixels.begin() + static_cast<std::ptrdiff_t>((top + y) * slice.width + left);
    std::copy(row, row + static_cast<std::ptrdiff_t>(width), out.pixels.begin() + static_cast<std::ptrdiff_t>(y * width));
  }
  return out;
}

template <typename T>
Image2D<T> crop_to_square(const Image2D<T>& slice) {
  const std::size_t s = std::min(slice.height, slice.width);
  return center_crop(slice, s, s);
}

namespace {

struct Tap {
  std::size_t index;
  double weight;
};

// Per output position: the source taps of a triangle filter whose support
// is max(1, scale) when antialiasing a downscale.
std::vector<std::vector<Tap>> resample_taps(std::size_t in, std::size_t out, bool antialias) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double support = antialias && scale > 1.0 ? scale : 1.0;
  std::vector<std::vector<Tap>> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double center = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const auto first = static_cast<long>(std::floor(center - support));
    const auto last = static_cast<long>(std::ceil(center + support));
    double total = 0.0;
    for (long j = first; j <= last; ++j) {
      const double w = 1.0 - std::abs(static_cast<double>(j) - center) / support;
      if (w <= 0.0) continue;
      const long clamped = std::clamp(j, 0L, static_cast<long>(in) - 1);
      taps[i].push_back({static_cast<std::size_t>(clamped), w});
      total += w;
    }
    for (auto& t : taps[i]) t.weight /= total;
  }
  return taps;
}

}  // namespace

Image2D<float> resize_bilinear(const Image2D<float>& slice, std::size_t height, std::size_t width, bool antialias) {
  if (slice.empty() || height == 0 || width == 0) throw ShapeError("resize needs non-empty extents");
  const auto row_taps = resample_taps(slice.height, height, antialias);
  const auto col_taps = resample_taps(slice.width, width, antialias);
  // Horizontal pass then vertical pass.
  std::vector<double> tmp(slice.height * width, 0.0);
  for (std::size_t y = 0; y < slice.height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double acc = 0.0;
      for (const auto& t : col_taps[x]) acc += t.weight * slice.at(y, t.index);
      tmp[y * width + x] = acc;
    }
  }
  Image2D<float> out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double acc = 0.0;
      for (const auto& t : row_taps[y]) acc += t.weight * tmp[t.index * width + x];
      out.at(y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

Image2D<std::uint8_t> resize_nearest(const Image2D<std::uint8_t>& slice, std::size_t height, std::size_t width) {
  if (slice.empty() || height == 0 || width == 0) throw ShapeError("resize needs non-empty extents");
  auto source = [](std::size_t i, std::size_t in, std::size_t out) {
    const auto s = static_cast<std::size_t>((static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                                            static_cast<double>(out));
    return std::min(s, in - 1);
  };
  Image2D<std::uint8_t> out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = source(y, slice.height, height);
    for (std::size_t x = 0; x < width; ++x) out.at(y, x) = slice.at(sy, source(x, slice.width, width));
  }
  return out;
}

Image2D<float> fit_to_network(const Image2D<float>& image, std::size_t height, std::size_t width) {
  if (image.height >= height && image.width >= width) return center_crop(image, height, width);
  return resize_bilinear(image, height, width, true);
}

Image2D<std::uint8_t> fit_to_network(const Image2D<std::uint8_t>& mask, std::size_t height, std::size_t width) {
  if (mask.height >= height && mask.width >= width) return center_crop(mask, height, width);
  return resize_nearest(mask, height, width);
}

namespace {

// Source coordinate of every destination pixel along one axis of length n.
std::vector<double> distort_axis(std::size_t n, std::size_t steps, double limit, Rng& rng) {
  std::vector<double> factors(steps);
  for (double& f : factors) f = rng.uniform(1.0 - limit, 1.0 + limit);
  const double span = static_cast<double>(n - 1);
  const double cell = span / static_cast<double>(steps);
  // Destination knots: cumulative scaled cell lengths, renormalised to span.
  std::vector<double> dst(steps + 1, 0.0);
  for (std::size_t i = 0; i < steps; ++i) dst[i + 1] = dst[i] + factors[i] * cell;
  const double total = dst[steps];
  for (double& d : dst) d = total > 0.0 ? d * span / total : 0.0;
  dst[steps] = span;

  std::vector<double> src(n);
  std::size_t k = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const double d = static_cast<double>(p);
    while (k + 1 < steps && d > dst[k + 1]) ++k;
    const double width = dst[k + 1] - dst[k];
    const double t = width > 0.0 ? (d - dst[k]) / width : 0.0;
    src[p] = std::clamp((static_cast<double>(k) + t) * cell, 0.0, span);
  }
  return src;
}

}  // namespace

DistortionMap sample_grid_distortion(std::size_t height, std::size_t width, std::size_t steps, double limit,
                                     std::uint64_t seed) {
  if (height == 0 || width == 0) throw ShapeError("distortion needs non-empty extents");
  if (steps == 0) throw ConfigError("distortion steps must be at least 1");
  Rng rng(seed);
  DistortionMap map;
  map.source_x = distort_axis(width, steps, limit, rng);
  map.source_y = distort_axis(height, steps, limit, rng);
  return map;
}

Image2D<float> remap_linear(const Image2D<float>& image, const DistortionMap& map) {
  if (map.source_y.size() != image.height || map.source_x.size() != image.width) {
    throw ShapeError("distortion map does not match the image");
  }
  Image2D<float> out(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    const double sy = map.source_y[y];
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const float ty = static_cast<float>(sy - static_cast<double>(y0));
    for (std::size_t x = 0; x < image.width; ++x) {
      const double sx = map.source_x[x];
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const float tx = static_cast<float>(sx - static_cast<double>(x0));
      // a + t (b - a) keeps constant fields exactly constant.
      const float top = image.at(y0, x0) + tx * (image.at(y0, x1) - image.at(y0, x0));
      const float bottom = image.at(y1, x0) + tx * (image.at(y1, x1) - image.at(y1, x0));
      out.at(y, x) = top + ty * (bottom - top);
    }
  }
  return out;
}

Image2D<std::uint8_t> remap_nearest(const Image2D<std::uint8_t>& mask, const DistortionMap& map) {
  if (map.source_y.size() != mask.height || map.source_x.size() != mask.width) {
    throw ShapeError("distortion map does not match the mask");
  }
  Image2D<std::uint8_t> out(mask.height, mask.width);
  for (std::size_t y = 0; y < mask.height; ++y) {
    const auto sy = std::min(static_cast<std::size_t>(std::lround(map.source_y[y])), mask.height - 1);
    for (std::size_t x = 0; x < mask.width; ++x) {
      const auto sx = std::min(static_cast<std::size_t>(std::lround(map.source_x[x])), mask.width - 1);
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

std::pair<Image2D<float>, Image2D<std::uint8_t>> grid_distort(const Image2D<float>& image,
                                                              const Image2D<std::uint8_t>& mask,
                                                              const PipelineConfig& config, std::uint64_t seed) {
  if (image.height != mask.height || image.width != mask.width) {
    throw ShapeError("image and mask extents differ");
  }
  Rng gate(mix_seed({seed, 0x67617465ULL}));
  if (config.distortion_probability <= 0.0 || !gate.bernoulli(config.distortion_probability) || image.empty()) {
    return {image, mask};
  }
  const auto map =
      sample_grid_distortion(image.height, image.width, config.distortion_steps, config.distortion_limit, seed);
  return {remap_linear(image, map), remap_nearest(mask, map)};
}

PreparedSlice apply_pipeline(const Image2D<float>& raw, const Image2D<std::uint8_t>& mask, double clip_threshold,
                             const PipelineConfig& config, std::uint64_t seed) {
  if (raw.height != mask.height || raw.width != mask.width) throw ShapeError("image and mask extents differ");
  Image2D<float> image = minmax_normalize(clip_above(raw, clip_threshold));
  Image2D<std::uint8_t> labels = mask;
  if (config.train_mode) std::tie(image, labels) = grid_distort(image, labels, config, seed);
  image = fit_to_network(crop_to_square(image), config.target_height, config.target_width);
  labels = fit_to_network(crop_to_square(labels), config.target_height, config.target_width);
  for (float& v : image.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return {std::move(image), std::move(labels)};
}

Tensor<float> one_hot_slice(const Image2D<std::uint8_t>& labels, std::size_t num_classes) {
  Tensor<float> out({num_classes, labels.height, labels.width}, 0.0f);
  auto data = out.data();
  const std::size_t plane = labels.height * labels.width;
  for (std::size_t i = 0; i < plane; ++i) {
    const std::size_t c = labels.pixels[i];
    if (c >= num_classes) throw ValidationError("label value " + std::to_string(c) + " out of range");
    data[c * plane + i] = 1.0f;
  }
  return out;
}

template Image2D<float> crop_to_square(const Image2D<float>&);
template Image2D<std::uint8_t> crop_to_square(const Image2D<std::uint8_t>&);
template Image2D<float> center_crop(const Image2D<float>&, std::size_t, std::size_t);
template Image2D<std::uint8_t> center_crop(const Image2D<std::uint8_t>&, std::size_t, std::size_t);

}  // namespace cardiseg
