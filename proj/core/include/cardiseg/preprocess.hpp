#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cardiseg/image.hpp"
#include "cardiseg/tensor.hpp"

namespace cardiseg {

struct PipelineConfig {
  std::size_t target_height = 224;
  std::size_t target_width = 224;
  double clip_quantile = 0.999;
  double distortion_probability = 0.8;
  std::size_t distortion_steps = 10;
  double distortion_limit = 0.3;
  bool train_mode = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Quantile with linear interpolation between order statistics:
/// position q * (n - 1) in the sorted values.
double quantile(std::span<const float> values, double q);

/// Clip threshold shared by every slice of one volume.
double volume_clip_threshold(std::span<const float> volume_voxels, double q);

/// Replaces values above `threshold` by `threshold`.
Image2D<float> clip_above(const Image2D<float>& slice, double threshold);

/// clip_above with the slice's own q-quantile.
Image2D<float> clip_quantile(const Image2D<float>& slice, double q);

/// (x - min) / (max - min); a constant slice maps to zeros.
Image2D<float> minmax_normalize(const Image2D<float>& slice);

/// Center crop to an s x s square, s = min(H, W). With an odd margin the
/// extra row/column is taken from the bottom/right.
template <typename T>
Image2D<T> crop_to_square(const Image2D<T>& slice);

/// Center crop with the same odd-margin rule as crop_to_square.
template <typename T>
Image2D<T> center_crop(const Image2D<T>& slice, std::size_t height, std::size_t width);

/// Bilinear resampling with pixel-centre alignment. With `antialias` a
/// downscale widens the triangle filter to the scale factor.
Image2D<float> resize_bilinear(const Image2D<float>& slice, std::size_t height, std::size_t width, bool antialias);

/// Nearest-neighbour resampling; never creates values absent from the input.
Image2D<std::uint8_t> resize_nearest(const Image2D<std::uint8_t>& slice, std::size_t height, std::size_t width);

/// Center crop if the slice is at least the target size in both axes, else
/// resize (bilinear + anti-aliasing for images, nearest for masks).
Image2D<float> fit_to_network(const Image2D<float>& image, std::size_t height, std::size_t width);
Image2D<std::uint8_t> fit_to_network(const Image2D<std::uint8_t>& mask, std::size_t height, std::size_t width);

/// Piecewise-linear source coordinates for every destination row/column.
struct DistortionMap {
  std::vector<double> source_y;
  std::vector<double> source_x;
};

/// Splits each axis into `steps` cells, scales every cell by an independent
/// factor from U[1 - limit, 1 + limit] and renormalises so the cells still
/// span the axis.
DistortionMap sample_grid_distortion(std::size_t height, std::size_t width, std::size_t steps, double limit,
                                     std::uint64_t seed);

Image2D<float> remap_linear(const Image2D<float>& image, const DistortionMap& map);
Image2D<std::uint8_t> remap_nearest(const Image2D<std::uint8_t>& mask, const DistortionMap& map);

/// Applies one shared distortion map to image (linear) and mask (nearest)
/// with probability config.distortion_probability.
std::pair<Image2D<float>, Image2D<std::uint8_t>> grid_distort(const Image2D<float>& image,
                                                              const Image2D<std::uint8_t>& mask,
                                                              const PipelineConfig& config, std::uint64_t seed);

struct PreparedSlice {
  Image2D<float> image;           // target size, values in [0, 1]
  Image2D<std::uint8_t> labels;   // target size
};

/// clip -> min/max normalise -> grid distortion (train mode only) ->
/// crop to square -> fit to network. Pixel spacing is never resampled.
PreparedSlice apply_pipeline(const Image2D<float>& raw, const Image2D<std::uint8_t>& mask, double clip_threshold,
                             const PipelineConfig& config, std::uint64_t seed);

/// [num_classes, H, W] indicator planes of a label map.
Tensor<float> one_hot_slice(const Image2D<std::uint8_t>& labels, std::size_t num_classes);

}  // namespace cardiseg
