#include "pneumanet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pneumanet::ops {
namespace {

template <typename T>
inline void axpy(std::size_t n, T a, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline void axpy_strided(std::size_t n, T a, const T* x, std::size_t x_stride, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i * x_stride];
}

// Eight independent partial sums, reduced in a fixed order.
template <typename T>
inline T dot(std::size_t n, const T* a, const T* b) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  for (std::size_t k = 0; i < n; ++i, ++k) acc[k] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// y[i] += w[0]*x[i+off[0]]; y[i] += w[1]*x[i+off[1]]; ... in tap order,
// keeping the running sum in a register between taps.
template <typename T, std::size_t Taps>
inline void accumulate_taps_fixed(std::size_t n, const T* w, const std::size_t* off, const T* x,
                                  T* y) {
  for (std::size_t i = 0; i < n; ++i) {
    T acc = y[i];
    for (std::size_t t = 0; t < Taps; ++t) acc += w[t] * x[i + off[t]];
    y[i] = acc;
  }
}

template <typename T>
inline void accumulate_taps(std::size_t n, std::size_t taps, const T* w, const std::size_t* off,
                            const T* x, T* y) {
  switch (taps) {
    case 1: accumulate_taps_fixed<T, 1>(n, w, off, x, y); return;
    case 4: accumulate_taps_fixed<T, 4>(n, w, off, x, y); return;
    case 9: accumulate_taps_fixed<T, 9>(n, w, off, x, y); return;
    case 16: accumulate_taps_fixed<T, 16>(n, w, off, x, y); return;
    default:
      for (std::size_t t = 0; t < taps; ++t) axpy(n, w[t], x + off[t], y);
  }
}

template <typename T>
inline void correlate_taps(std::size_t n, std::size_t taps, const T* g, const std::size_t* off,
                           const T* x, T* out) {
  for (std::size_t t = 0; t < taps; ++t) out[t] += dot(n, g, x + off[t]);
}

template <typename T>
inline T dot_strided(std::size_t n, const T* a, const T* b, std::size_t b_stride) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i * b_stride];
  return acc;
}

void require_rank(const Shape& shape, std::size_t rank, const std::string& what) {
  if (shape.size() != rank) {
    throw ShapeError(what + ": expected rank " + std::to_string(rank) +
                     " but got shape " + to_string(shape));
  }
}

template <typename T>
Tensor<T> pad_spatial(const Tensor<T>& input, std::size_t padding) {
  if (padding == 0) return input;
  const auto& s = input.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  const std::size_t hp = h + 2 * padding, wp = w + 2 * padding;
  Tensor<T> out({s[0], s[1], hp, wp});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = input.data() + p * h * w;
    T* dst = out.data() + p * hp * wp + padding * wp + padding;
    for (std::size_t y = 0; y < h; ++y) {
      std::copy(src + y * w, src + (y + 1) * w, dst + y * wp);
    }
  }
  return out;
}

template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& padded, std::size_t padding) {
  if (padding == 0) return padded;
  const auto& s = padded.shape();
  const std::size_t planes = s[0] * s[1], hp = s[2], wp = s[3];
  const std::size_t h = hp - 2 * padding, w = wp - 2 * padding;
  Tensor<T> out({s[0], s[1], h, w});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = padded.data() + p * hp * wp + padding * wp + padding;
    T* dst = out.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      std::copy(src + y * wp, src + y * wp + w, dst + y * w);
    }
  }
  return out;
}

struct ConvDims {
  std::size_t n, c, h, w, o, kh, kw, hp, wp, oh, ow;
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                   std::size_t padding) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(kernels.shape(), 4, "conv2d kernels");
  if (stride == 0) throw InvalidArgument("conv2d: stride must be positive");
  ConvDims d{};
  d.n = input.dim(0);
  d.c = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.o = kernels.dim(0);
  d.kh = kernels.dim(2);
  d.kw = kernels.dim(3);
  if (kernels.dim(1) != d.c) {
    throw ShapeError("conv2d: shape mismatch, input " + to_string(input.shape()) +
                     " has " + std::to_string(d.c) + " channels but kernels " +
                     to_string(kernels.shape()) + " expect " +
                     std::to_string(kernels.dim(1)));
  }
  d.hp = d.h + 2 * padding;
  d.wp = d.w + 2 * padding;
  if (d.hp < d.kh || d.wp < d.kw) {
    throw ShapeError("conv2d: shape mismatch, padded input " + to_string(input.shape()) +
                     " is smaller than kernels " + to_string(kernels.shape()));
  }
  d.oh = (d.hp - d.kh) / stride + 1;
  d.ow = (d.wp - d.kw) / stride + 1;
  return d;
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels,
                         const Tensor<T>& bias, std::size_t stride, std::size_t padding) {
  const ConvDims d = conv_dims(input, kernels, stride, padding);
  require_same_shape(Shape{d.o}, bias.shape(), "conv2d bias");
  const Tensor<T> padded = pad_spatial(input, padding);
  Tensor<T> out({d.n, d.o, d.oh, d.ow});
  const std::size_t in_plane = d.hp * d.wp, out_plane = d.oh * d.ow;

  // Each output element accumulates over (c, kh, kw) in row-major order,
  // then adds the bias. With stride 1 the plane is processed as one "wide"
  // run of padded rows; columns past ow are scratch and dropped afterwards.
  const std::size_t wide_len = (d.oh - 1) * d.wp + d.ow;
  std::vector<T> wide(stride == 1 ? wide_len : 0);
  const std::size_t taps = d.kh * d.kw;
  std::vector<std::size_t> tap_off(taps);
  for (std::size_t t = 0; t < taps; ++t) tap_off[t] = (t / d.kw) * d.wp + t % d.kw;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      T* op = out.data() + (n * d.o + o) * out_plane;
      if (stride == 1) std::fill(wide.begin(), wide.end(), T(0));
      for (std::size_t c = 0; c < d.c; ++c) {
        const T* ip = padded.data() + (n * d.c + c) * in_plane;
        const T* kp = kernels.data() + (o * d.c + c) * d.kh * d.kw;
        if (stride == 1) {
          accumulate_taps(wide_len, taps, kp, tap_off.data(), ip, wide.data());
          continue;
        }
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            const T wgt = kp[ky * d.kw + kx];
            for (std::size_t oy = 0; oy < d.oh; ++oy) {
              const T* irow = ip + (oy * stride + ky) * d.wp + kx;
              axpy_strided(d.ow, wgt, irow, stride, op + oy * d.ow);
            }
          }
        }
      }
      if (stride == 1) {
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          std::copy(wide.data() + oy * d.wp, wide.data() + oy * d.wp + d.ow, op + oy * d.ow);
        }
      }
      const T b = bias[o];
      for (std::size_t i = 0; i < out_plane; ++i) op[i] += b;
    }
  }
  return out;
}

template <typename T>
LayerGrad<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                             const Tensor<T>& upstream, std::size_t stride,
                             std::size_t padding, bool want_input_grad) {
  const ConvDims d = conv_dims(input, kernels, stride, padding);
  require_same_shape(Shape{d.n, d.o, d.oh, d.ow}, upstream.shape(), "conv2d upstream grad");
  const Tensor<T> padded = pad_spatial(input, padding);
  const std::size_t in_plane = d.hp * d.wp, out_plane = d.oh * d.ow;

  Tensor<T> dk(kernels.shape());
  Tensor<T> db({d.o});
  Tensor<T> dxp;
  if (want_input_grad) dxp = Tensor<T>({d.n, d.c, d.hp, d.wp});

  // Stride 1: upstream rows laid out at the padded width with zeros in the
  // scratch columns, so each (c, ky, kx) tap is one long dot/axpy.
  const std::size_t wide_len = (d.oh - 1) * d.wp + d.ow;
  // The input gradient is gathered from these rows shifted right by
  // max_off, so dx[j] sums w[t] * g[j - off[t]] without bounds checks.
  const std::size_t taps = d.kh * d.kw;
  std::vector<std::size_t> tap_off(taps), gather_off(taps);
  for (std::size_t t = 0; t < taps; ++t) tap_off[t] = (t / d.kw) * d.wp + t % d.kw;
  const std::size_t max_off = tap_off.back();
  for (std::size_t t = 0; t < taps; ++t) gather_off[t] = max_off - tap_off[t];
  const std::size_t gpad_len = max_off + in_plane;
  std::vector<T> gpads(stride == 1 ? d.o * gpad_len : 0);

  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      const T* gp = upstream.data() + (n * d.o + o) * out_plane;
      T bsum = 0;
      for (std::size_t i = 0; i < out_plane; ++i) bsum += gp[i];
      db[o] += bsum;
      T* gwide = stride == 1 ? gpads.data() + o * gpad_len + max_off : nullptr;
      if (gwide) {
        std::fill(gwide - max_off, gwide + in_plane, T(0));
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          std::copy(gp + oy * d.ow, gp + (oy + 1) * d.ow, gwide + oy * d.wp);
        }
      }
      for (std::size_t c = 0; c < d.c; ++c) {
        const T* ip = padded.data() + (n * d.c + c) * in_plane;
        const std::size_t kbase = (o * d.c + c) * d.kh * d.kw;
        T* dxplane = want_input_grad ? dxp.data() + (n * d.c + c) * in_plane : nullptr;
        if (gwide) {
          correlate_taps(wide_len, taps, gwide, tap_off.data(), ip, dk.data() + kbase);
          continue;
        }
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            const T wgt = kernels[kbase + ky * d.kw + kx];
            T acc = 0;
            for (std::size_t oy = 0; oy < d.oh; ++oy) {
              const std::size_t in_off = (oy * stride + ky) * d.wp + kx;
              const T* grow = gp + oy * d.ow;
              acc += dot_strided(d.ow, grow, ip + in_off, stride);
              if (dxplane) {
                T* dst = dxplane + in_off;
                for (std::size_t ox = 0; ox < d.ow; ++ox) dst[ox * stride] += wgt * grow[ox];
              }
            }
            dk[kbase + ky * d.kw + kx] += acc;
          }
        }
      }
    }
    if (stride == 1 && want_input_grad) {
      for (std::size_t c = 0; c < d.c; ++c) {
        T* dxplane = dxp.data() + (n * d.c + c) * in_plane;
        for (std::size_t o = 0; o < d.o; ++o) {
          accumulate_taps(in_plane, taps, kernels.data() + (o * d.c + c) * taps,
                          gather_off.data(), gpads.data() + o * gpad_len, dxplane);
        }
      }
    }
  }

  LayerGrad<T> grad;
  grad.param_grads.push_back(std::move(dk));
  grad.param_grads.push_back(std::move(db));
  if (want_input_grad) grad.input_grad = crop_spatial(dxp, padding);
  return grad;
}

namespace {

struct DeconvDims {
  std::size_t n, c, h, w, o, kh, kw, full_h, full_w, oh, ow;
};

template <typename T>
DeconvDims deconv_dims(const Tensor<T>& input, const Tensor<T>& kernels,
                       std::size_t stride, std::size_t padding) {
  require_rank(input.shape(), 4, "conv_transpose2d input");
  require_rank(kernels.shape(), 4, "conv_transpose2d kernels");
  if (stride == 0) throw InvalidArgument("conv_transpose2d: stride must be positive");
  DeconvDims d{};
  d.n = input.dim(0);
  d.c = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  if (kernels.dim(0) != d.c) {
    throw ShapeError("conv_transpose2d: shape mismatch, input " + to_string(input.shape()) +
                     " vs kernels " + to_string(kernels.shape()));
  }
  d.o = kernels.dim(1);
  d.kh = kernels.dim(2);
  d.kw = kernels.dim(3);
  d.full_h = (d.h - 1) * stride + d.kh;
  d.full_w = (d.w - 1) * stride + d.kw;
  if (d.full_h <= 2 * padding || d.full_w <= 2 * padding) {
    throw ShapeError("conv_transpose2d: padding consumes the whole output for input " +
                     to_string(input.shape()));
  }
  d.oh = d.full_h - 2 * padding;
  d.ow = d.full_w - 2 * padding;
  return d;
}

}  // namespace

template <typename T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& input, const Tensor<T>& kernels,
                                   const Tensor<T>& bias, std::size_t stride,
                                   std::size_t padding) {
  const DeconvDims d = deconv_dims(input, kernels, stride, padding);
  require_same_shape(Shape{d.o}, bias.shape(), "conv_transpose2d bias");
  Tensor<T> full({d.n, d.o, d.full_h, d.full_w});
  const std::size_t in_plane = d.h * d.w, full_plane = d.full_h * d.full_w;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const T* ip = input.data() + (n * d.c + c) * in_plane;
      for (std::size_t o = 0; o < d.o; ++o) {
        T* fp = full.data() + (n * d.o + o) * full_plane;
        const T* kp = kernels.data() + (c * d.o + o) * d.kh * d.kw;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            const T wgt = kp[ky * d.kw + kx];
            for (std::size_t iy = 0; iy < d.h; ++iy) {
              const T* irow = ip + iy * d.w;
              T* dst = fp + (iy * stride + ky) * d.full_w + kx;
              for (std::size_t ix = 0; ix < d.w; ++ix) dst[ix * stride] += wgt * irow[ix];
            }
          }
        }
      }
    }
  }
  Tensor<T> out = crop_spatial(full, padding);
  const std::size_t out_plane = d.oh * d.ow;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      T* op = out.data() + (n * d.o + o) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) op[i] += bias[o];
    }
  }
  return out;
}

template <typename T>
LayerGrad<T> conv_transpose2d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                                       const Tensor<T>& upstream, std::size_t stride,
                                       std::size_t padding, bool want_input_grad) {
  const DeconvDims d = deconv_dims(input, kernels, stride, padding);
  require_same_shape(Shape{d.n, d.o, d.oh, d.ow}, upstream.shape(),
                     "conv_transpose2d upstream grad");
  const Tensor<T> gfull = pad_spatial(upstream, padding);
  const std::size_t in_plane = d.h * d.w, full_plane = d.full_h * d.full_w;

  Tensor<T> dk(kernels.shape());
  Tensor<T> db({d.o});
  Tensor<T> dx;
  if (want_input_grad) dx = Tensor<T>(input.shape());

  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.o; ++o) {
      const T* gp = upstream.data() + (n * d.o + o) * d.oh * d.ow;
      T bsum = 0;
      for (std::size_t i = 0; i < d.oh * d.ow; ++i) bsum += gp[i];
      db[o] += bsum;
    }
    for (std::size_t c = 0; c < d.c; ++c) {
      const T* ip = input.data() + (n * d.c + c) * in_plane;
      T* dxp = want_input_grad ? dx.data() + (n * d.c + c) * in_plane : nullptr;
      for (std::size_t o = 0; o < d.o; ++o) {
        const T* gp = gfull.data() + (n * d.o + o) * full_plane;
        const std::size_t kbase = (c * d.o + o) * d.kh * d.kw;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            const T wgt = kernels[kbase + ky * d.kw + kx];
            T acc = 0;
            for (std::size_t iy = 0; iy < d.h; ++iy) {
              const T* grow = gp + (iy * stride + ky) * d.full_w + kx;
              const T* irow = ip + iy * d.w;
              acc += dot_strided(d.w, irow, grow, stride);
              if (dxp) {
                T* drow = dxp + iy * d.w;
                for (std::size_t ix = 0; ix < d.w; ++ix) drow[ix] += wgt * grow[ix * stride];
              }
            }
            dk[kbase + ky * d.kw + kx] += acc;
          }
        }
      }
    }
  }

  LayerGrad<T> grad;
  grad.param_grads.push_back(std::move(dk));
  grad.param_grads.push_back(std::move(db));
  if (want_input_grad) grad.input_grad = std::move(dx);
  return grad;
}

template <typename T>
MaxPoolResult<T> maxpool2d_forward(const Tensor<T>& input, std::size_t window,
                                   std::size_t stride) {
  require_rank(input.shape(), 4, "maxpool2d input");
  if (window == 0 || stride == 0) {
    throw InvalidArgument("maxpool2d: window and stride must be positive");
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < window || w < window) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) +
                     " larger than input " + to_string(input.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  MaxPoolResult<T> res{Tensor<T>({n, c, oh, ow}), {}};
  res.argmax.resize(n * c * oh * ow);
  std::size_t out_i = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++out_i) {
        std::size_t best = base + (oy * stride) * w + ox * stride;
        T best_v = input[best];
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = base + (oy * stride + ky) * w + ox * stride + kx;
            if (input[idx] > best_v) {
              best_v = input[idx];
              best = idx;
            }
          }
        }
        res.output[out_i] = best_v;
        res.argmax[out_i] = best;
      }
    }
  }
  return res;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                             const Tensor<T>& upstream) {
  if (argmax.size() != upstream.size()) {
    throw ShapeError("maxpool2d backward: upstream " + to_string(upstream.shape()) +
                     " does not match " + std::to_string(argmax.size()) + " routed outputs");
  }
  Tensor<T> dx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += upstream[i];
  return dx;
}

namespace {

struct FeatureLayout {
  std::size_t batch, features, inner;
};

template <typename T>
FeatureLayout feature_layout(const Tensor<T>& input, const Tensor<T>& gamma,
                             const Tensor<T>& beta) {
  if (input.rank() != 2 && input.rank() != 4) {
    throw ShapeError("batchnorm: expected [N,F] or [N,C,H,W] input, got " +
                     to_string(input.shape()));
  }
  FeatureLayout l{input.dim(0), input.dim(1), 1};
  if (input.rank() == 4) l.inner = input.dim(2) * input.dim(3);
  require_same_shape(Shape{l.features}, gamma.shape(), "batchnorm gamma");
  require_same_shape(Shape{l.features}, beta.shape(), "batchnorm beta");
  return l;
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& input, const Tensor<T>& gamma,
                          const Tensor<T>& beta, double eps, double momentum,
                          RunningStats<T>& stats, BatchNormCache<T>* cache) {
  const FeatureLayout l = feature_layout(input, gamma, beta);
  if (l.batch < 2) {
    throw InvalidArgument("batchnorm: train mode needs a batch of at least 2, got " +
                          std::to_string(l.batch));
  }
  require_same_shape(Shape{l.features}, stats.mean.shape(), "batchnorm running mean");
  require_same_shape(Shape{l.features}, stats.var.shape(), "batchnorm running var");
  const double m = static_cast<double>(l.batch * l.inner);
  Tensor<T> out(input.shape());
  Tensor<T> normalized(input.shape());
  std::vector<T> inv_std(l.features);
  for (std::size_t f = 0; f < l.features; ++f) {
    double sum = 0;
    for (std::size_t n = 0; n < l.batch; ++n) {
      const T* p = input.data() + (n * l.features + f) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) sum += p[i];
    }
    const double mean = sum / m;
    double sq = 0;
    for (std::size_t n = 0; n < l.batch; ++n) {
      const T* p = input.data() + (n * l.features + f) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        const double dv = p[i] - mean;
        sq += dv * dv;
      }
    }
    const double var = sq / m;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[f] = static_cast<T>(istd);
    for (std::size_t n = 0; n < l.batch; ++n) {
      const std::size_t off = (n * l.features + f) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        const T xhat = static_cast<T>((input[off + i] - mean) * istd);
        normalized[off + i] = xhat;
        out[off + i] = gamma[f] * xhat + beta[f];
      }
    }
    const double unbiased = m > 1 ? var * m / (m - 1) : var;
    stats.mean[f] = static_cast<T>(momentum * stats.mean[f] + (1 - momentum) * mean);
    stats.var[f] = static_cast<T>(momentum * stats.var[f] + (1 - momentum) * unbiased);
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& input, const Tensor<T>& gamma,
                          const Tensor<T>& beta, double eps, const RunningStats<T>& stats) {
  const FeatureLayout l = feature_layout(input, gamma, beta);
  require_same_shape(Shape{l.features}, stats.mean.shape(), "batchnorm running mean");
  require_same_shape(Shape{l.features}, stats.var.shape(), "batchnorm running var");
  Tensor<T> out(input.shape());
  for (std::size_t f = 0; f < l.features; ++f) {
    const T istd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[f]) + eps));
    const T mean = stats.mean[f];
    for (std::size_t n = 0; n < l.batch; ++n) {
      const std::size_t off = (n * l.features + f) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        out[off + i] = gamma[f] * ((input[off + i] - mean) * istd) + beta[f];
      }
    }
  }
  return out;
}

template <typename T>
LayerGrad<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                                const Tensor<T>& upstream) {
  require_same_shape(cache.normalized.shape(), upstream.shape(), "batchnorm upstream grad");
  const Tensor<T>& xhat = cache.normalized;
  const FeatureLayout l = feature_layout(upstream, gamma, gamma);
  const double m = static_cast<double>(l.batch * l.inner);
  Tensor<T> dgamma({l.features});
  Tensor<T> dbeta({l.features});
  Tensor<T> dx(upstream.shape());
  for (std::size_t f = 0; f < l.features; ++f) {
    double sum_g = 0, sum_gx = 0;
    for (std::size_t n = 0; n < l.batch; ++n) {
      const std::size_t off = (n * l.features + f) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        sum_g += upstream[off + i];
        sum_gx += static_cast<double>(upstream[off + i]) * xhat[off + i];
      }
    }
    dgamma[f] = static_cast<T>(sum_gx);
    dbeta[f] = static_cast<T>(sum_g);
    const double scale = static_cast<double>(gamma[f]) * cache.inv_std[f] / m;
    for (std::size_t n = 0; n < l.batch; ++n) {
      const std::size_t off = (n * l.features + f) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        dx[off + i] = static_cast<T>(
            scale * (m * upstream[off + i] - sum_g - xhat[off + i] * sum_gx));
      }
    }
  }
  LayerGrad<T> grad;
  grad.param_grads.push_back(std::move(dgamma));
  grad.param_grads.push_back(std::move(dbeta));
  grad.input_grad = std::move(dx);
  return grad;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weights,
                        const Tensor<T>& bias) {
  require_rank(input.shape(), 2, "dense input");
  require_rank(weights.shape(), 2, "dense weights");
  const std::size_t n = input.dim(0), in = input.dim(1), out_f = weights.dim(1);
  if (weights.dim(0) != in) {
    throw ShapeError("dense: shape mismatch, input " + to_string(input.shape()) +
                     " vs weights " + to_string(weights.shape()));
  }
  require_same_shape(Shape{out_f}, bias.shape(), "dense bias");
  Tensor<T> out({n, out_f});
  for (std::size_t b = 0; b < n; ++b) {
    T* orow = out.data() + b * out_f;
    const T* x = input.data() + b * in;
    if (out_f == 1) {
      orow[0] = dot(in, x, weights.data());
    } else {
      for (std::size_t i = 0; i < in; ++i) axpy(out_f, x[i], weights.data() + i * out_f, orow);
    }
    for (std::size_t o = 0; o < out_f; ++o) orow[o] += bias[o];
  }
  return out;
}

template <typename T>
LayerGrad<T> dense_backward(const Tensor<T>& input, const Tensor<T>& weights,
                            const Tensor<T>& upstream, bool want_input_grad) {
  require_rank(input.shape(), 2, "dense input");
  const std::size_t n = input.dim(0), in = input.dim(1), out_f = weights.dim(1);
  require_same_shape(Shape{in, out_f}, weights.shape(), "dense weights");
  require_same_shape(Shape{n, out_f}, upstream.shape(), "dense upstream grad");
  Tensor<T> dw(weights.shape());
  Tensor<T> db({out_f});
  Tensor<T> dx;
  if (want_input_grad) dx = Tensor<T>(input.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const T* x = input.data() + b * in;
    const T* g = upstream.data() + b * out_f;
    for (std::size_t o = 0; o < out_f; ++o) db[o] += g[o];
    if (out_f == 1) {
      axpy(in, g[0], x, dw.data());
      if (want_input_grad) axpy(in, g[0], weights.data(), dx.data() + b * in);
    } else {
      for (std::size_t i = 0; i < in; ++i) {
        axpy(out_f, x[i], g, dw.data() + i * out_f);
        if (want_input_grad) dx[b * in + i] = dot(out_f, weights.data() + i * out_f, g);
      }
    }
  }
  LayerGrad<T> grad;
  grad.param_grads.push_back(std::move(dw));
  grad.param_grads.push_back(std::move(db));
  if (want_input_grad) grad.input_grad = std::move(dx);
  return grad;
}

std::string activation_name(Activation::Kind kind) {
  switch (kind) {
    case Activation::Kind::relu: return "relu";
    case Activation::Kind::leaky_relu: return "leaky_relu";
    case Activation::Kind::sigmoid: return "sigmoid";
    case Activation::Kind::tanh: return "tanh";
  }
  return "unknown";
}

Activation::Kind activation_kind_from_string(const std::string& name) {
  if (name == "relu") return Activation::Kind::relu;
  if (name == "leaky_relu") return Activation::Kind::leaky_relu;
  if (name == "sigmoid") return Activation::Kind::sigmoid;
  if (name == "tanh") return Activation::Kind::tanh;
  throw InvalidArgument("unknown activation '" + name + "'");
}

template <typename T>
T sigmoid(T x) {
  T y;
  if (x >= 0) {
    y = T(1) / (T(1) + std::exp(-x));
  } else {
    const T e = std::exp(x);
    y = e / (T(1) + e);
  }
  return std::clamp(y, std::numeric_limits<T>::min(), std::nextafter(T(1), T(0)));
}

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& input, Activation act) {
  Tensor<T> out(input.shape());
  const std::size_t n = input.size();
  const T* x = input.data();
  T* y = out.data();
  switch (act.kind) {
    case Activation::Kind::relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0 ? x[i] : T(0);
      break;
    case Activation::Kind::leaky_relu: {
      const T a = static_cast<T>(act.alpha);
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0 ? x[i] : a * x[i];
      break;
    }
    case Activation::Kind::sigmoid:
      for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid(x[i]);
      break;
    case Activation::Kind::tanh:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
      break;
  }
  return out;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& input, const Tensor<T>& output,
                              const Tensor<T>& upstream, Activation act) {
  require_same_shape(input.shape(), upstream.shape(), "activation upstream grad");
  require_same_shape(input.shape(), output.shape(), "activation output");
  Tensor<T> dx(input.shape());
  const std::size_t n = input.size();
  const T* x = input.data();
  const T* y = output.data();
  const T* g = upstream.data();
  T* d = dx.data();
  switch (act.kind) {
    case Activation::Kind::relu:
      for (std::size_t i = 0; i < n; ++i) d[i] = x[i] > 0 ? g[i] : T(0);
      break;
    case Activation::Kind::leaky_relu: {
      const T a = static_cast<T>(act.alpha);
      for (std::size_t i = 0; i < n; ++i) d[i] = x[i] > 0 ? g[i] : a * g[i];
      break;
    }
    case Activation::Kind::sigmoid:
      for (std::size_t i = 0; i < n; ++i) d[i] = g[i] * y[i] * (T(1) - y[i]);
      break;
    case Activation::Kind::tanh:
      for (std::size_t i = 0; i < n; ++i) d[i] = g[i] * (T(1) - y[i] * y[i]);
      break;
  }
  return dx;
}

#define PNEUMANET_INSTANTIATE_OPS(T)                                                        \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                    std::size_t, std::size_t);                              \
  template LayerGrad<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&,                 \
                                        const Tensor<T>&, std::size_t, std::size_t, bool);  \
  template Tensor<T> conv_transpose2d_forward(const Tensor<T>&, const Tensor<T>&,          \
                                              const Tensor<T>&, std::size_t, std::size_t); \
  template LayerGrad<T> conv_transpose2d_backward(const Tensor<T>&, const Tensor<T>&,       \
                                                  const Tensor<T>&, std::size_t,            \
                                                  std::size_t, bool);                       \
  template MaxPoolResult<T> maxpool2d_forward(const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> maxpool2d_backward(const Shape&, const std::vector<std::size_t>&,     \
                                        const Tensor<T>&);                                  \
  template Tensor<T> batchnorm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                     double, double, RunningStats<T>&, BatchNormCache<T>*); \
  template Tensor<T> batchnorm_infer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                     double, const RunningStats<T>&);                       \
  template LayerGrad<T> batchnorm_backward(const BatchNormCache<T>&, const Tensor<T>&,     \
                                           const Tensor<T>&);                               \
  template Tensor<T> dense_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template LayerGrad<T> dense_backward(const Tensor<T>&, const Tensor<T>&,                  \
                                       const Tensor<T>&, bool);                             \
  template T sigmoid(T);                                                                    \
  template Tensor<T> activation_forward(const Tensor<T>&, Activation);                     \
  template Tensor<T> activation_backward(const Tensor<T>&, const Tensor<T>&,               \
                                         const Tensor<T>&, Activation);

PNEUMANET_INSTANTIATE_OPS(float)
PNEUMANET_INSTANTIATE_OPS(double)

#undef PNEUMANET_INSTANTIATE_OPS

}  // namespace pneumanet::ops
