#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "cardiseg/error.hpp"

namespace cardiseg {

/// Row-major single-channel 2D array.
template <typename T>
struct Image2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> pixels;

  Image2D() = default;
  Image2D(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), pixels(h * w, fill) {}
  Image2D(std::size_t h, std::size_t w, std::vector<T> values) : height(h), width(w), pixels(std::move(values)) {
    if (pixels.size() != h * w) throw ShapeError("image data length does not match its extents");
  }

  T& at(std::size_t y, std::size_t x) noexcept { return pixels[y * width + x]; }
  const T& at(std::size_t y, std::size_t x) const noexcept { return pixels[y * width + x]; }
  bool empty() const noexcept { return pixels.empty(); }

  friend bool operator==(const Image2D&, const Image2D&) = default;
};

/// Slices x rows x columns, slice-major.
template <typename T>
struct Volume3D {
  std::size_t slices = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> voxels;

  Volume3D() = default;
  Volume3D(std::size_t s, std::size_t h, std::size_t w, T fill = T{})
      : slices(s), height(h), width(w), voxels(s * h * w, fill) {}

  std::size_t plane() const noexcept { return height * width; }

  T& at(std::size_t s, std::size_t y, std::size_t x) noexcept { return voxels[(s * height + y) * width + x]; }
  const T& at(std::size_t s, std::size_t y, std::size_t x) const noexcept {
    return voxels[(s * height + y) * width + x];
  }

  Image2D<T> slice(std::size_t s) const {
    if (s >= slices) throw ShapeError("slice index out of range");
    const auto first = voxels.begin() + static_cast<std::ptrdiff_t>(s * plane());
    return Image2D<T>(height, width, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(plane())));
  }

  void set_slice(std::size_t s, const Image2D<T>& img) {
    if (s >= slices || img.height != height || img.width != width) throw ShapeError("slice does not fit volume");
    std::copy(img.pixels.begin(), img.pixels.end(), voxels.begin() + static_cast<std::ptrdiff_t>(s * plane()));
  }

  bool same_extents(std::size_t s, std::size_t h, std::size_t w) const noexcept {
    return slices == s && height == h && width == w;
  }

  friend bool operator==(const Volume3D&, const Volume3D&) = default;
};

}  // namespace cardiseg
