#include "cardiseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cardiseg {
namespace {

std::vector<std::size_t> all_or(const std::vector<std::size_t>& coords, std::size_t n) {
  if (!coords.empty()) return coords;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

template <typename T>
void require_scalar(const Var<T>& v) {
  if (v.value().size() != 1) {
    throw ShapeError("grad_check: function must return a scalar, got " + shape_to_string(v.shape()));
  }
}

GradCheckResult compare(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  const double floor = std::max(kGradCheckFloor * scale, 1e-300);
  GradCheckResult r;
  r.coordinates = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    r.max_abs_error = std::max(r.max_abs_error, diff);
    r.max_rel_error = std::max(r.max_rel_error, diff / denom);
  }
  return r;
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const std::function<Var<T>(const Var<T>&)>& f, const Tensor<T>& input, double h,
                           const std::vector<std::size_t>& coords) {
  const auto idx = all_or(coords, input.size());
  std::vector<double> analytic, numeric;
  {
    Tape<T> tape;
    Var<T> x = tape.input(input);
    Var<T> y = f(x);
    require_scalar(y);
    tape.backward(y);
    const Tensor<T>& g = x.grad();
    for (auto i : idx) analytic.push_back(g.empty() ? 0.0 : static_cast<double>(g[i]));
  }
  auto eval = [&](const Tensor<T>& point) {
    Tape<T> tape;
    return static_cast<double>(f(tape.constant(point)).value()[0]);
  };
  Tensor<T> probe = input;
  for (auto i : idx) {
    const T original = probe[i];
    probe[i] = static_cast<T>(original + h);
    const double up = eval(probe);
    probe[i] = static_cast<T>(original - h);
    const double down = eval(probe);
    probe[i] = original;
    numeric.push_back((up - down) / (2.0 * h));
  }
  return compare(analytic, numeric);
}

template <typename T>
GradCheckResult grad_check_parameter(const std::function<Var<T>(Tape<T>&)>& f, Parameter<T>& param, double h,
                                     const std::vector<std::size_t>& coords) {
  const auto idx = all_or(coords, param.value.size());
  std::vector<double> analytic, numeric;
  param.grad = Tensor<T>(param.value.shape());
  {
    Tape<T> tape;
    Var<T> y = f(tape);
    require_scalar(y);
    tape.backward(y);
    for (auto i : idx) analytic.push_back(static_cast<double>(param.grad[i]));
  }
  auto eval = [&]() {
    Tape<T> tape;
    return static_cast<double>(f(tape).value()[0]);
  };
  for (auto i : idx) {
    const T original = param.value[i];
    param.value[i] = static_cast<T>(original + h);
    const double up = eval();
    param.value[i] = static_cast<T>(original - h);
    const double down = eval();
    param.value[i] = original;
    numeric.push_back((up - down) / (2.0 * h));
  }
  return compare(analytic, numeric);
}

template GradCheckResult grad_check<float>(const std::function<Var<float>(const Var<float>&)>&, const Tensor<float>&,
                                           double, const std::vector<std::size_t>&);
template GradCheckResult grad_check<double>(const std::function<Var<double>(const Var<double>&)>&,
                                            const Tensor<double>&, double, const std::vector<std::size_t>&);
template GradCheckResult grad_check_parameter<float>(const std::function<Var<float>(Tape<float>&)>&,
                                                     Parameter<float>&, double, const std::vector<std::size_t>&);
template GradCheckResult grad_check_parameter<double>(const std::function<Var<double>(Tape<double>&)>&,
                                                      Parameter<double>&, double, const std::vector<std::size_t>&);

}  // namespace cardiseg
