#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cardiseg/autodiff.hpp"

namespace cardiseg {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
};

/// Relative error of one coordinate. The denominator is floored at
/// `kGradCheckFloor` times the largest gradient magnitude seen in the check,
/// so coordinates whose true derivative is ~0 are judged against the scale
/// of the whole gradient instead of against rounding noise.
inline constexpr double kGradCheckFloor = 1e-3;

/// Compares the tape gradient of a scalar function of `input` with central
/// differences (f(x+h) - f(x-h)) / 2h. `f` receives the input leaf and must
/// return a [1] value built on the same tape. When `coords` is empty every
/// coordinate is checked.
template <typename T>
GradCheckResult grad_check(const std::function<Var<T>(const Var<T>&)>& f, const Tensor<T>& input, double h,
                           const std::vector<std::size_t>& coords = {});

/// Same check for a persistent parameter consumed by `f` through
/// `tape.parameter(param)`. Overwrites param.grad.
template <typename T>
GradCheckResult grad_check_parameter(const std::function<Var<T>(Tape<T>&)>& f, Parameter<T>& param, double h,
                                     const std::vector<std::size_t>& coords = {});

struct GradCheckEntry {
  std::string name;
  GradCheckResult result;
};

/// Finite-difference check of every differentiable op (with respect to each
/// of its inputs) and of a 32x32, base-4 U-Net trained under each loss. U-Net
/// entries sample a few coordinates of every trainable tensor plus the input.
template <typename T>
std::vector<GradCheckEntry> gradcheck_suite(double h, std::uint64_t seed);

}  // namespace cardiseg
