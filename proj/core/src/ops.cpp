#include "cardiseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "cardiseg/random.hpp"

namespace cardiseg {

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct Dims4 {
  std::size_t b, c, h, w;
};

template <typename T>
Dims4 dims_of(const Tensor<T>& t, const char* what) {
  require_rank4(t, what);
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

// Unfolds one [C,H,W] image into a [C*k*k, H*W] matrix for a stride-1 'same' convolution.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width, std::size_t k,
            T* cols) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = image + c * height * width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * height * width;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x_begin = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_end = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          T* dst = row + y * w;
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= h || x_begin >= x_end) {
            std::fill(dst, dst + w, T{0});
            continue;
          }
          std::fill(dst, dst + x_begin, T{0});
          std::copy(plane + sy * w + x_begin + dx, plane + sy * w + x_end + dx, dst + x_begin);
          std::fill(dst + x_end, dst + w, T{0});
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates a [C*k*k, H*W] matrix back into [C,H,W].
template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t height, std::size_t width, std::size_t k,
                T* image) {
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = image + c * height * width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * height * width;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const std::ptrdiff_t x_begin = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_end = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const T* src = row + y * w;
          T* dst = plane + sy * w + dx;
          for (std::ptrdiff_t x = x_begin; x < x_end; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& wt = kernel.value();
  const Tensor<T>& bs = bias.value();
  const Dims4 d = dims_of(x, "conv2d input");
  const Dims4 kd = dims_of(wt, "conv2d kernel");
  if (kd.c != d.c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kd.c) + " input channels, input has " +
                     std::to_string(d.c));
  }
  if (kd.h != kd.w || kd.h % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd size");
  if (bs.size() != kd.b) throw ShapeError("conv2d: bias length must equal output channels");

  const std::size_t cout = kd.b, k = kd.h, hw = d.h * d.w, depth = d.c * k * k;
  const bool pointwise = (k == 1);
  Tensor<T> out({d.b, cout, d.h, d.w});
  AlignedVector<T> cols;
  if (!pointwise) cols.resize(d.b * depth * hw);

  ConstMatMap<T> wmat(wt.raw(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(depth));
  for (std::size_t b = 0; b < d.b; ++b) {
    const T* image = x.raw() + b * d.c * hw;
    const T* col_ptr = image;
    if (!pointwise) {
      T* dst = cols.data() + b * depth * hw;
      im2col(image, d.c, d.h, d.w, k, dst);
      col_ptr = dst;
    }
    ConstMatMap<T> cmat(col_ptr, static_cast<Eigen::Index>(depth), static_cast<Eigen::Index>(hw));
    MatMap<T> omat(out.raw() + b * cout * hw, static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw));
    omat.noalias() = wmat * cmat;
    for (std::size_t c = 0; c < cout; ++c) omat.row(static_cast<Eigen::Index>(c)).array() += bs[c];
  }

  Tape<T>* tape = &input.tape();
  const std::size_t xi = input.index(), wi = kernel.index(), bi = bias.index();
  return tape->record(
      std::move(out), {input, kernel, bias},
      [tape, xi, wi, bi, d, cout, k, hw, depth, pointwise, cols = std::move(cols)](const Tensor<T>& gout) {
        const Tensor<T>& xv = tape->value(xi);
        const Tensor<T>& wv = tape->value(wi);
        const bool need_x = tape->requires_grad(xi);
        const bool need_w = tape->requires_grad(wi);
        const bool need_b = tape->requires_grad(bi);
        ConstMatMap<T> wmat(wv.raw(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(depth));
        RowMat<T> dcols;
        for (std::size_t b = 0; b < d.b; ++b) {
          ConstMatMap<T> gmat(gout.raw() + b * cout * hw, static_cast<Eigen::Index>(cout),
                              static_cast<Eigen::Index>(hw));
          if (need_b) {
            Tensor<T>& gb = tape->grad_buffer(bi);
            for (std::size_t c = 0; c < cout; ++c) gb[c] += gmat.row(static_cast<Eigen::Index>(c)).sum();
          }
          if (need_w) {
            const T* col_ptr = pointwise ? xv.raw() + b * d.c * hw : cols.data() + b * depth * hw;
            ConstMatMap<T> cmat(col_ptr, static_cast<Eigen::Index>(depth), static_cast<Eigen::Index>(hw));
            MatMap<T> gw(tape->grad_buffer(wi).raw(), static_cast<Eigen::Index>(cout),
                         static_cast<Eigen::Index>(depth));
            gw.noalias() += gmat * cmat.transpose();
          }
          if (need_x) {
            T* gx = tape->grad_buffer(xi).raw() + b * d.c * hw;
            if (pointwise) {
              MatMap<T> gxm(gx, static_cast<Eigen::Index>(d.c), static_cast<Eigen::Index>(hw));
              gxm.noalias() += wmat.transpose() * gmat;
            } else {
              dcols.noalias() = wmat.transpose() * gmat;
              col2im_add(dcols.data(), d.c, d.h, d.w, k, gx);
            }
          }
        }
      });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& kernel) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& wt = kernel.value();
  const Dims4 d = dims_of(x, "conv_transpose2d input");
  const Dims4 kd = dims_of(wt, "conv_transpose2d kernel");
  if (kd.b != d.c) {
    throw ShapeError("conv_transpose2d: kernel expects " + std::to_string(kd.b) + " input channels, input has " +
                     std::to_string(d.c));
  }
  if (kd.h != kd.w || kd.h < 2) throw ShapeError("conv_transpose2d: kernel must be square with size >= 2");

  const std::size_t cout = kd.c, k = kd.h, hw = d.h * d.w, depth = cout * k * k;
  const std::size_t oh = 2 * d.h, ow = 2 * d.w;
  const auto pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  Tensor<T> out({d.b, cout, oh, ow});

  // Scatter/gather between [Cout*k*k, H*W] columns and the [Cout, 2H, 2W] output.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t row = (co * k + ky) * k + kx;
          for (std::size_t iy = 0; iy < d.h; ++iy) {
            const std::ptrdiff_t oy = 2 * static_cast<std::ptrdiff_t>(iy) - pad + static_cast<std::ptrdiff_t>(ky);
            if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh)) continue;
            for (std::size_t ix = 0; ix < d.w; ++ix) {
              const std::ptrdiff_t ox =
                  2 * static_cast<std::ptrdiff_t>(ix) - pad + static_cast<std::ptrdiff_t>(kx);
              if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow)) continue;
              fn(row * hw + iy * d.w + ix, (co * oh + static_cast<std::size_t>(oy)) * ow + static_cast<std::size_t>(ox));
            }
          }
        }
      }
    }
  };

  ConstMatMap<T> wmat(wt.raw(), static_cast<Eigen::Index>(d.c), static_cast<Eigen::Index>(depth));
  RowMat<T> cols;
  for (std::size_t b = 0; b < d.b; ++b) {
    ConstMatMap<T> xmat(x.raw() + b * d.c * hw, static_cast<Eigen::Index>(d.c), static_cast<Eigen::Index>(hw));
    cols.noalias() = wmat.transpose() * xmat;
    T* dst = out.raw() + b * cout * oh * ow;
    const T* src = cols.data();
    for_each_tap([&](std::size_t c, std::size_t o) { dst[o] += src[c]; });
  }

  Tape<T>* tape = &input.tape();
  const std::size_t xi = input.index(), wi = kernel.index();
  return tape->record(std::move(out), {input, kernel}, [tape, xi, wi, d, cout, hw, depth, oh, ow, for_each_tap](
                                                          const Tensor<T>& gout) {
    const Tensor<T>& xv = tape->value(xi);
    const Tensor<T>& wv = tape->value(wi);
    const bool need_x = tape->requires_grad(xi);
    const bool need_w = tape->requires_grad(wi);
    ConstMatMap<T> wmat(wv.raw(), static_cast<Eigen::Index>(d.c), static_cast<Eigen::Index>(depth));
    RowMat<T> dcols(static_cast<Eigen::Index>(depth), static_cast<Eigen::Index>(hw));
    for (std::size_t b = 0; b < d.b; ++b) {
      dcols.setZero();
      const T* src = gout.raw() + b * cout * oh * ow;
      T* dc = dcols.data();
      for_each_tap([&](std::size_t c, std::size_t o) { dc[c] = src[o]; });
      if (need_x) {
        MatMap<T> gx(tape->grad_buffer(xi).raw() + b * d.c * hw, static_cast<Eigen::Index>(d.c),
                     static_cast<Eigen::Index>(hw));
        gx.noalias() += wmat * dcols;
      }
      if (need_w) {
        ConstMatMap<T> xmat(xv.raw() + b * d.c * hw, static_cast<Eigen::Index>(d.c), static_cast<Eigen::Index>(hw));
        MatMap<T> gw(tape->grad_buffer(wi).raw(), static_cast<Eigen::Index>(d.c), static_cast<Eigen::Index>(depth));
        gw.noalias() += xmat * dcols.transpose();
      }
    }
  });
}

template <typename T>
Var<T> maxpool2(const Var<T>& input) {
  const Tensor<T>& x = input.value();
  const Dims4 d = dims_of(x, "maxpool2");
  if (d.h % 2 != 0 || d.w % 2 != 0) {
    throw ShapeError("maxpool2: spatial extents must be even, got " + shape_to_string(x.shape()));
  }
  const std::size_t oh = d.h / 2, ow = d.w / 2;
  Tensor<T> out({d.b, d.c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < d.b * d.c; ++plane) {
    const std::size_t base = plane * d.h * d.w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        const std::size_t top = base + 2 * oy * d.w + 2 * ox;
        const std::size_t candidates[4] = {top, top + 1, top + d.w, top + d.w + 1};
        std::size_t best = candidates[0];
        for (std::size_t i = 1; i < 4; ++i) {
          if (x[candidates[i]] > x[best]) best = candidates[i];
        }
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  Tape<T>* tape = &input.tape();
  const std::size_t xi = input.index();
  return tape->record(std::move(out), {input}, [tape, xi, argmax = std::move(argmax)](const Tensor<T>& gout) {
    Tensor<T>& gx = tape->grad_buffer(xi);
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += gout[i];
  });
}

template <typename T>
Var<T> batchnorm2d(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T> stats,
                   Mode mode) {
  const Tensor<T>& x = input.value();
  const Dims4 d = dims_of(x, "batchnorm2d");
  if (gamma.value().size() != d.c || beta.value().size() != d.c) {
    throw ShapeError("batchnorm2d: gamma/beta length must equal channel count");
  }
  if (stats.running_mean == nullptr || stats.running_var == nullptr || stats.running_mean->size() != d.c ||
      stats.running_var->size() != d.c) {
    throw ShapeError("batchnorm2d: running statistics must hold one value per channel");
  }
  const std::size_t hw = d.h * d.w;
  const std::size_t count = d.b * hw;
  if (mode == Mode::kTrain && count < 2) {
    throw ShapeError("batchnorm2d: degenerate batch, B*H*W must be at least 2 in train mode");
  }

  const Tensor<T>& g = gamma.value();
  const Tensor<T>& bt = beta.value();
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(d.c);
  for (std::size_t c = 0; c < d.c; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::kTrain) {
      for (std::size_t b = 0; b < d.b; ++b) {
        const T* p = x.raw() + (b * d.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) mean += p[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t b = 0; b < d.b; ++b) {
        const T* p = x.raw() + (b * d.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double dv = p[i] - mean;
          var += dv * dv;
        }
      }
      var /= static_cast<double>(count);
      T& rm = (*stats.running_mean)[c];
      T& rv = (*stats.running_var)[c];
      rm = static_cast<T>(kBatchNormMomentum * rm + (1.0 - kBatchNormMomentum) * mean);
      rv = static_cast<T>(kBatchNormMomentum * rv + (1.0 - kBatchNormMomentum) * var);
    } else {
      mean = (*stats.running_mean)[c];
      var = (*stats.running_var)[c];
    }
    const double istd = 1.0 / std::sqrt(var + kBatchNormEpsilon);
    inv_std[c] = static_cast<T>(istd);
    for (std::size_t b = 0; b < d.b; ++b) {
      const std::size_t off = (b * d.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = static_cast<T>((x[off + i] - mean) * istd);
        xhat[off + i] = xh;
        out[off + i] = g[c] * xh + bt[c];
      }
    }
  }

  Tape<T>* tape = &input.tape();
  const std::size_t xi = input.index(), gi = gamma.index(), bi = beta.index();
  return tape->record(
      std::move(out), {input, gamma, beta},
      [tape, xi, gi, bi, d, hw, count, mode, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Tensor<T>& gout) {
        const Tensor<T>& gv = tape->value(gi);
        for (std::size_t c = 0; c < d.c; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < d.b; ++b) {
            const std::size_t off = (b * d.c + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy += gout[off + i];
              sum_dy_xhat += static_cast<double>(gout[off + i]) * xhat[off + i];
            }
          }
          if (tape->requires_grad(gi)) tape->grad_buffer(gi)[c] += static_cast<T>(sum_dy_xhat);
          if (tape->requires_grad(bi)) tape->grad_buffer(bi)[c] += static_cast<T>(sum_dy);
          if (!tape->requires_grad(xi)) continue;
          Tensor<T>& gx = tape->grad_buffer(xi);
          const double scale = static_cast<double>(gv[c]) * inv_std[c];
          const double n = static_cast<double>(count);
          for (std::size_t b = 0; b < d.b; ++b) {
            const std::size_t off = (b * d.c + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (mode == Mode::kTrain) {
                gx[off + i] += static_cast<T>(scale * (gout[off + i] - sum_dy / n - xhat[off + i] * sum_dy_xhat / n));
              } else {
                gx[off + i] += static_cast<T>(scale * gout[off + i]);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> elu(const Var<T>& input) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : std::expm1(x[i]);
  Tape<T>* tape = &input.tape();
  const std::size_t xi = input.index();
  return tape->record(std::move(out), {input}, [tape, xi](const Tensor<T>& gout) {
    const Tensor<T>& xv = tape->value(xi);
    Tensor<T>& gx = tape->grad_buffer(xi);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += xv[i] >= T{0} ? gout[i] : gout[i] * std::exp(xv[i]);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& input) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    if (v >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T{1} + e);
    }
  }
  Tape<T>* tape = &input.tape();
  const std::size_t xi = input.index();
  Tensor<T> saved = out;
  return tape->record(std::move(out), {input}, [tape, xi, s = std::move(saved)](const Tensor<T>& gout) {
    Tensor<T>& gx = tape->grad_buffer(xi);
    for (std::size_t i = 0; i < s.size(); ++i) gx[i] += gout[i] * s[i] * (T{1} - s[i]);
  });
}

template <typename T>
Var<T> dropout(const Var<T>& input, double rate, Mode mode, std::uint64_t seed) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::kInfer || rate == 0.0) return input;
  const Tensor<T>& x = input.value();
  Rng rng(seed);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < rate ? T{0} : scale;
    out[i] = x[i] * mask[i];
  }
  Tape<T>* tape = &input.tape();
  const std::size_t xi = input.index();
  return tape->record(std::move(out), {input}, [tape, xi, mask = std::move(mask)](const Tensor<T>& gout) {
    Tensor<T>& gx = tape->grad_buffer(xi);
    for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += gout[i] * mask[i];
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Dims4 da = dims_of(av, "concat_channels");
  const Dims4 db = dims_of(bv, "concat_channels");
  if (da.b != db.b || da.h != db.h || da.w != db.w) {
    throw ShapeError("concat_channels: mismatched batch/spatial extents " + shape_to_string(av.shape()) + " vs " +
                     shape_to_string(bv.shape()));
  }
  const std::size_t hw = da.h * da.w, ca = da.c * hw, cb = db.c * hw;
  Tensor<T> out({da.b, da.c + db.c, da.h, da.w});
  for (std::size_t n = 0; n < da.b; ++n) {
    std::copy_n(av.raw() + n * ca, ca, out.raw() + n * (ca + cb));
    std::copy_n(bv.raw() + n * cb, cb, out.raw() + n * (ca + cb) + ca);
  }
  Tape<T>* tape = &a.tape();
  const std::size_t ai = a.index(), bi = b.index();
  const std::size_t batch = da.b;
  return tape->record(std::move(out), {a, b}, [tape, ai, bi, batch, ca, cb](const Tensor<T>& gout) {
    for (std::size_t n = 0; n < batch; ++n) {
      const T* src = gout.raw() + n * (ca + cb);
      if (tape->requires_grad(ai)) {
        T* dst = tape->grad_buffer(ai).raw() + n * ca;
        for (std::size_t i = 0; i < ca; ++i) dst[i] += src[i];
      }
      if (tape->requires_grad(bi)) {
        T* dst = tape->grad_buffer(bi).raw() + n * cb;
        for (std::size_t i = 0; i < cb; ++i) dst[i] += src[ca + i];
      }
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& input, std::size_t begin, std::size_t count) {
  const Tensor<T>& x = input.value();
  const Dims4 d = dims_of(x, "slice_channels");
  if (count == 0 || begin + count > d.c) throw ShapeError("slice_channels: channel range out of bounds");
  const std::size_t hw = d.h * d.w;
  Tensor<T> out({d.b, count, d.h, d.w});
  for (std::size_t n = 0; n < d.b; ++n) {
    std::copy_n(x.raw() + (n * d.c + begin) * hw, count * hw, out.raw() + n * count * hw);
  }
  Tape<T>* tape = &input.tape();
  const std::size_t xi = input.index();
  return tape->record(std::move(out), {input}, [tape, xi, d, hw, begin, count](const Tensor<T>& gout) {
    Tensor<T>& gx = tape->grad_buffer(xi);
    for (std::size_t n = 0; n < d.b; ++n) {
      T* dst = gx.raw() + (n * d.c + begin) * hw;
      const T* src = gout.raw() + n * count * hw;
      for (std::size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& input) {
  const Tensor<T>& x = input.value();
  double acc = 0.0;
  for (auto v : x.data()) acc += v;
  Tape<T>* tape = &input.tape();
  const std::size_t xi = input.index();
  return tape->record(Tensor<T>({1}, static_cast<T>(acc)), {input}, [tape, xi](const Tensor<T>& gout) {
    Tensor<T>& gx = tape->grad_buffer(xi);
    for (auto& g : gx.data()) g += gout[0];
  });
}

template <typename T>
Var<T> sum_squares(const Var<T>& input) {
  const Tensor<T>& x = input.value();
  double acc = 0.0;
  for (auto v : x.data()) acc += static_cast<double>(v) * v;
  Tape<T>* tape = &input.tape();
  const std::size_t xi = input.index();
  return tape->record(Tensor<T>({1}, static_cast<T>(acc)), {input}, [tape, xi](const Tensor<T>& gout) {
    const Tensor<T>& xv = tape->value(xi);
    Tensor<T>& gx = tape->grad_buffer(xi);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += T{2} * xv[i] * gout[0];
  });
}

template <typename T>
Var<T> mul_constant(const Var<T>& input, const Tensor<T>& weights) {
  const Tensor<T>& x = input.value();
  if (weights.shape() != x.shape()) throw ShapeError("mul_constant: shape mismatch");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * weights[i];
  Tape<T>* tape = &input.tape();
  const std::size_t xi = input.index();
  return tape->record(std::move(out), {input}, [tape, xi, weights](const Tensor<T>& gout) {
    Tensor<T>& gx = tape->grad_buffer(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * weights[i];
  });
}

#define CARDISEG_INSTANTIATE_OPS(T)                                                                           \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&);                                       \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&);                                            \
  template Var<T> maxpool2(const Var<T>&);                                                                   \
  template Var<T> batchnorm2d(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>, Mode);         \
  template Var<T> elu(const Var<T>&);                                                                        \
  template Var<T> sigmoid(const Var<T>&);                                                                    \
  template Var<T> dropout(const Var<T>&, double, Mode, std::uint64_t);                                       \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                             \
  template Var<T> slice_channels(const Var<T>&, std::size_t, std::size_t);                                   \
  template Var<T> sum(const Var<T>&);                                                                        \
  template Var<T> sum_squares(const Var<T>&);                                                                \
  template Var<T> mul_constant(const Var<T>&, const Tensor<T>&);

CARDISEG_INSTANTIATE_OPS(float)
CARDISEG_INSTANTIATE_OPS(double)

#undef CARDISEG_INSTANTIATE_OPS

}  // namespace ops
}  // namespace cardiseg
