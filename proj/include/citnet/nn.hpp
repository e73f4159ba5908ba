#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "citnet/tensor.hpp"

// Neural-network kernels on top of the tensor engine. Convolution uses
// cross-correlation semantics (no kernel flip) with zero padding; pooling
// treats padding as -inf; dropout is inverted (scaled at train time).

namespace citnet {

namespace detail {

// He-normal initialization for ReLU stacks: std = sqrt(2 / fan_in).
template <typename T>
Tensor<T> he_normal(Shape shape, int64_t fan_in, Rng& rng) {
  return Tensor<T>::randn(
      std::move(shape), rng,
      static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in))));
}

}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const int64_t n = x.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* px = x.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = px[i] > T(0) ? px[i] : T(0);
  auto xn = x.node();
  auto bwd = [xn, n](typename Tensor<T>::Node& self) {
    if (!xn->requires_grad) return;
    const T* px = xn->data.data();
    const T* g = self.grad.data();
    T* gx = xn->grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      if (px[i] > T(0)) gx[i] += g[i];
    }
  };
  return detail::make_result<T>(x.shape(), std::move(out), {xn},
                                std::move(bwd), "relu");
}

// Exact GELU: x * Phi(x) via the error function, evaluated in the tensor's
// own precision.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const int64_t n = x.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* px = x.data().data();
  const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  const T half = static_cast<T>(0.5);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const T v = px[i];
    out[i] = v * half * (T(1) + std::erf(v * inv_sqrt2));
  }
  auto xn = x.node();
  auto bwd = [xn, n, inv_sqrt2, half](typename Tensor<T>::Node& self) {
    if (!xn->requires_grad) return;
    const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
    const T* px = xn->data.data();
    const T* g = self.grad.data();
    T* gx = xn->grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      const T v = px[i];
      const T phi = half * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(-half * v * v);
      gx[i] += g[i] * (phi + v * pdf);
    }
  };
  return detail::make_result<T>(x.shape(), std::move(out), {xn},
                                std::move(bwd), "gelu");
}

// Stabilized softmax along an axis. Rows sum to 1 up to roundoff.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int ax = detail::normalize_axis(axis, x.ndim(), "softmax");
  int64_t outer = 0, len = 0, inner = 0;
  detail::split_at_axis(x.shape(), ax, outer, len, inner);
  std::vector<T> out(static_cast<size_t>(x.numel()));
  const T* px = x.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      T mx = px[base];
      for (int64_t k = 1; k < len; ++k) mx = std::max(mx, px[base + k * inner]);
      T denom = T(0);
      for (int64_t k = 0; k < len; ++k) {
        const T e = std::exp(px[base + k * inner] - mx);
        out[base + k * inner] = e;
        denom += e;
      }
      const T inv = T(1) / denom;
      for (int64_t k = 0; k < len; ++k) out[base + k * inner] *= inv;
    }
  }
  auto xn = x.node();
  auto out_copy = std::make_shared<std::vector<T>>(out);
  auto bwd = [xn, out_copy, outer, len, inner](typename Tensor<T>::Node& self) {
    if (!xn->requires_grad) return;
    const T* y = out_copy->data();
    const T* g = self.grad.data();
    T* gx = xn->grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * len * inner + in;
        T dot = T(0);
        for (int64_t k = 0; k < len; ++k) {
          dot += g[base + k * inner] * y[base + k * inner];
        }
        for (int64_t k = 0; k < len; ++k) {
          const int64_t at = base + k * inner;
          gx[at] += y[at] * (g[at] - dot);
        }
      }
    }
  };
  return detail::make_result<T>(x.shape(), std::move(out), {xn},
                                std::move(bwd), "softmax");
}

// Inverted dropout: keeps with probability 1-rate and scales by 1/(1-rate)
// so inference is the identity. rate 0 and eval mode skip the RNG stream.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0,1)");
  }
  if (mode == Mode::kEval || rate == 0.0) return x;
  if (rng == nullptr) {
    throw std::invalid_argument("dropout: training mode needs an rng");
  }
  const int64_t n = x.numel();
  auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < n; ++i) {
    (*mask)[i] = rng->uniform() >= rate ? keep_scale : T(0);
  }
  std::vector<T> out(static_cast<size_t>(n));
  const T* px = x.data().data();
  for (int64_t i = 0; i < n; ++i) out[i] = px[i] * (*mask)[i];
  auto xn = x.node();
  auto bwd = [xn, mask, n](typename Tensor<T>::Node& self) {
    if (!xn->requires_grad) return;
    const T* g = self.grad.data();
    T* gx = xn->grad.data();
    for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * (*mask)[i];
  };
  return detail::make_result<T>(x.shape(), std::move(out), {xn},
                                std::move(bwd), "dropout");
}

// x[..., D_in] * w[D_in, D_out] + b[D_out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.ndim() != 2) throw std::invalid_argument("linear: weight must be 2-d");
  if (b.ndim() != 1 || b.dim(0) != w.dim(1)) {
    throw std::invalid_argument("linear: bias shape " + shape_str(b.shape()) +
                                " does not match weight " +
                                shape_str(w.shape()));
  }
  if (x.dim(-1) != w.dim(0)) {
    throw std::invalid_argument("linear: input width " +
                                std::to_string(x.dim(-1)) +
                                " != weight rows " + std::to_string(w.dim(0)));
  }
  Tensor<T> y = x.ndim() == 2 ? matmul(x, w)
                              : reshape(matmul(reshape(x, {-1, x.dim(-1)}), w),
                                        [&] {
                                          Shape s = x.shape();
                                          s.back() = w.dim(1);
                                          return s;
                                        }());
  return add(y, b);
}

namespace detail {

inline int64_t conv_out_extent(int64_t n, int64_t k, int64_t stride,
                               int64_t pad, const char* op) {
  const int64_t out = (n + 2 * pad - k) / stride + 1;
  if (n + 2 * pad < k || out <= 0) {
    throw std::invalid_argument(std::string(op) + ": output extent " +
                                std::to_string(out) + " not positive (n=" +
                                std::to_string(n) + ", k=" + std::to_string(k) +
                                ", s=" + std::to_string(stride) + ", p=" +
                                std::to_string(pad) + ")");
  }
  return out;
}

// Unpack one sample's receptive fields into the batch column matrix
// [C_in*kh*kw, N*H_out*W_out]; this sample occupies columns
// [n*HW, (n+1)*HW). Batching every sample into one matrix keeps the GEMM's
// inner axis wide even at tiny spatial extents.
template <typename T>
void im2col(const T* x, int64_t c_in, int64_t h, int64_t w, int64_t kh,
            int64_t kw, int64_t stride, int64_t pad, int64_t ho, int64_t wo,
            int64_t col_stride, T* cols) {
  for (int64_t c = 0; c < c_in; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * col_stride;
        for (int64_t oi = 0; oi < ho; ++oi) {
          const int64_t ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= h) {
            for (int64_t oj = 0; oj < wo; ++oj) row[oi * wo + oj] = T(0);
            continue;
          }
          const T* src = x + (c * h + ii) * w;
          for (int64_t oj = 0; oj < wo; ++oj) {
            const int64_t jj = oj * stride - pad + kj;
            row[oi * wo + oj] = (jj < 0 || jj >= w) ? T(0) : src[jj];
          }
        }
      }
    }
  }
}

// Scatter-add of one sample's column gradients back into its input gradient.
template <typename T>
void col2im_acc(const T* cols, int64_t c_in, int64_t h, int64_t w, int64_t kh,
                int64_t kw, int64_t stride, int64_t pad, int64_t ho, int64_t wo,
                int64_t col_stride, T* gx) {
  for (int64_t c = 0; c < c_in; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * col_stride;
        for (int64_t oi = 0; oi < ho; ++oi) {
          const int64_t ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= h) continue;
          T* dst = gx + (c * h + ii) * w;
          for (int64_t oj = 0; oj < wo; ++oj) {
            const int64_t jj = oj * stride - pad + kj;
            if (jj >= 0 && jj < w) dst[jj] += row[oi * wo + oj];
          }
        }
      }
    }
  }
}

// [C, N*HW] block-of-columns view <-> [N, C, HW] tensor layout.
template <typename T>
void scatter_columns(const T* y, int64_t nb, int64_t c, int64_t hw, T* out) {
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < nb; ++n) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* src = y + ch * nb * hw + n * hw;
      T* dst = out + (n * c + ch) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i];
    }
  }
}

template <typename T>
void gather_columns(const T* x, int64_t nb, int64_t c, int64_t hw, T* y) {
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < nb; ++n) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* src = x + (n * c + ch) * hw;
      T* dst = y + ch * nb * hw + n * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i];
    }
  }
}

}  // namespace detail

// 2-d cross-correlation: x[N,C_in,H,W] * w[C_out,C_in,kH,kW] (+ b[C_out]).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                 const std::optional<Tensor<T>>& b, int64_t stride,
                 int64_t pad) {
  if (x.ndim() != 4 || w.ndim() != 4) {
    throw std::invalid_argument("conv2d: x and w must be rank 4");
  }
  if (stride < 1 || pad < 0) {
    throw std::invalid_argument("conv2d: stride must be >= 1 and pad >= 0");
  }
  const int64_t nb = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c_in) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(c_in) +
                                " channels but kernel expects " +
                                std::to_string(w.dim(1)));
  }
  if (b && (b->ndim() != 1 || b->dim(0) != c_out)) {
    throw std::invalid_argument("conv2d: bias must be [C_out]");
  }
  const int64_t ho = detail::conv_out_extent(h, kh, stride, pad, "conv2d");
  const int64_t wo = detail::conv_out_extent(wd, kw, stride, pad, "conv2d");
  const int64_t k = c_in * kh * kw;
  const int64_t hw = ho * wo;
  const int64_t cols_n = nb * hw;  // one batched column matrix [k, cols_n]

  auto cols = std::make_shared<std::vector<T>>(static_cast<size_t>(k * cols_n));
  const T* px = x.data().data();
  const T* pw = w.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t s = 0; s < nb; ++s) {
    detail::im2col(px + s * c_in * h * wd, c_in, h, wd, kh, kw, stride, pad,
                   ho, wo, cols_n, cols->data() + s * hw);
  }
  std::vector<T> packed(static_cast<size_t>(c_out * cols_n), T(0));
  detail::gemm_acc(pw, cols->data(), packed.data(), c_out, k, cols_n);
  std::vector<T> out(static_cast<size_t>(nb * c_out * hw));
  detail::scatter_columns(packed.data(), nb, c_out, hw, out.data());
  if (b) {
    const T* pb = b->data().data();
    for (int64_t s = 0; s < nb; ++s) {
      for (int64_t c = 0; c < c_out; ++c) {
        T* dst = out.data() + (s * c_out + c) * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] += pb[c];
      }
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents = {xn, wn};
  std::shared_ptr<typename Tensor<T>::Node> bn;
  if (b) {
    bn = b->node();
    parents.push_back(bn);
  }
  auto bwd = [xn, wn, bn, cols, nb, c_in, h, wd, c_out, kh, kw, stride, pad,
              ho, wo, k, hw, cols_n](typename Tensor<T>::Node& self) {
    const T* g = self.grad.data();
    if (bn && bn->requires_grad) {
      T* gb = bn->grad.data();
      for (int64_t s = 0; s < nb; ++s) {
        for (int64_t c = 0; c < c_out; ++c) {
          const T* src = g + (s * c_out + c) * hw;
          T acc = T(0);
          for (int64_t i = 0; i < hw; ++i) acc += src[i];
          gb[c] += acc;
        }
      }
    }
    std::vector<T> gpacked(static_cast<size_t>(c_out * cols_n));
    detail::gather_columns(g, nb, c_out, hw, gpacked.data());
    if (wn->requires_grad) {
      // dW = dY_packed * cols^T
      std::vector<T> colt(static_cast<size_t>(cols_n * k));
      detail::transpose2d(cols->data(), colt.data(), k, cols_n);
      detail::gemm_acc(gpacked.data(), colt.data(), wn->grad.data(), c_out,
                       cols_n, k);
    }
    if (xn->requires_grad) {
      // dcols = W^T * dY_packed, then scatter back per sample
      std::vector<T> wt(static_cast<size_t>(k * c_out));
      detail::transpose2d(wn->data.data(), wt.data(), c_out, k);
      std::vector<T> dcols(static_cast<size_t>(k * cols_n), T(0));
      detail::gemm_acc(wt.data(), gpacked.data(), dcols.data(), k, c_out,
                       cols_n);
      T* gx = xn->grad.data();
#pragma omp parallel for schedule(static)
      for (int64_t s = 0; s < nb; ++s) {
        detail::col2im_acc(dcols.data() + s * hw, c_in, h, wd, kh, kw, stride,
                           pad, ho, wo, cols_n, gx + s * c_in * h * wd);
      }
    }
  };
  return detail::make_result<T>({nb, c_out, ho, wo}, std::move(out),
                                std::move(parents), std::move(bwd), "conv2d");
}

// Max pooling. Padding cells participate as -inf and are never selected;
// backward routes the gradient to the argmax cell (first index on ties).
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int64_t kernel, int64_t stride,
                    int64_t pad) {
  if (x.ndim() != 4) throw std::invalid_argument("maxpool2d: x must be rank 4");
  if (kernel < 1 || stride < 1 || pad < 0 || pad >= kernel) {
    throw std::invalid_argument(
        "maxpool2d: need kernel >= 1, stride >= 1, 0 <= pad < kernel");
  }
  const int64_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t ho = detail::conv_out_extent(h, kernel, stride, pad, "maxpool2d");
  const int64_t wo = detail::conv_out_extent(w, kernel, stride, pad, "maxpool2d");
  const int64_t planes = nb * c;
  std::vector<T> out(static_cast<size_t>(planes * ho * wo));
  auto argmax = std::make_shared<std::vector<int32_t>>(
      static_cast<size_t>(planes * ho * wo));
  const T* px = x.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const T* plane = px + p * h * w;
    for (int64_t oi = 0; oi < ho; ++oi) {
      for (int64_t oj = 0; oj < wo; ++oj) {
        T best = -std::numeric_limits<T>::infinity();
        int32_t best_idx = -1;
        for (int64_t ki = 0; ki < kernel; ++ki) {
          const int64_t ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= h) continue;
          for (int64_t kj = 0; kj < kernel; ++kj) {
            const int64_t jj = oj * stride - pad + kj;
            if (jj < 0 || jj >= w) continue;
            const T v = plane[ii * w + jj];
            if (v > best) {
              best = v;
              best_idx = static_cast<int32_t>(ii * w + jj);
            }
          }
        }
        out[(p * ho + oi) * wo + oj] = best;
        (*argmax)[(p * ho + oi) * wo + oj] = best_idx;
      }
    }
  }
  auto xn = x.node();
  auto bwd = [xn, argmax, planes, h, w, ho, wo](typename Tensor<T>::Node& self) {
    if (!xn->requires_grad) return;
    const T* g = self.grad.data();
    T* gx = xn->grad.data();
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
      T* plane = gx + p * h * w;
      const int64_t base = p * ho * wo;
      for (int64_t i = 0; i < ho * wo; ++i) {
        plane[(*argmax)[base + i]] += g[base + i];
      }
    }
  };
  return detail::make_result<T>({nb, c, ho, wo}, std::move(out), {xn},
                                std::move(bwd), "maxpool2d");
}

// Per-channel batch normalization over [N,C,h,w]. Training mode uses batch
// statistics (biased variance) and updates the running tensors in place
// with the given momentum; eval mode uses the running statistics.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, Tensor<T>& running_mean,
                      Tensor<T>& running_var, double momentum, double eps,
                      Mode mode) {
  if (x.ndim() != 4) throw std::invalid_argument("batchnorm2d: x must be rank 4");
  const int64_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto check_param = [c](const Tensor<T>& p, const char* name) {
    if (p.ndim() != 1 || p.dim(0) != c) {
      throw std::invalid_argument(std::string("batchnorm2d: ") + name +
                                  " must be [C]");
    }
  };
  check_param(gamma, "gamma");
  check_param(beta, "beta");
  check_param(running_mean, "running_mean");
  check_param(running_var, "running_var");
  const int64_t m = nb * h * w;  // elements per channel
  if (mode == Mode::kTrain && m < 2) {
    throw std::invalid_argument(
        "batchnorm2d: training mode needs >= 2 elements per channel");
  }

  const T* px = x.data().data();
  const T* pg = gamma.data().data();
  const T* pb = beta.data().data();
  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
  auto var = std::make_shared<std::vector<T>>(static_cast<size_t>(c));
  const int64_t hw = h * w;
  if (mode == Mode::kTrain) {
#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < c; ++ch) {
      T acc = T(0);
      for (int64_t s = 0; s < nb; ++s) {
        const T* src = px + (s * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) acc += src[i];
      }
      const T mu = acc / static_cast<T>(m);
      T vacc = T(0);
      for (int64_t s = 0; s < nb; ++s) {
        const T* src = px + (s * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const T d = src[i] - mu;
          vacc += d * d;
        }
      }
      (*mean)[ch] = mu;
      (*var)[ch] = vacc / static_cast<T>(m);
    }
    T* rm = running_mean.mutable_data().data();
    T* rv = running_var.mutable_data().data();
    const T mom = static_cast<T>(momentum);
    for (int64_t ch = 0; ch < c; ++ch) {
      rm[ch] = (T(1) - mom) * rm[ch] + mom * (*mean)[ch];
      rv[ch] = (T(1) - mom) * rv[ch] + mom * (*var)[ch];
    }
  } else {
    std::copy_n(running_mean.data().data(), c, mean->data());
    std::copy_n(running_var.data().data(), c, var->data());
  }

  std::vector<T> out(static_cast<size_t>(x.numel()));
  std::vector<T> inv_std(static_cast<size_t>(c));
  for (int64_t ch = 0; ch < c; ++ch) {
    inv_std[ch] = T(1) / std::sqrt((*var)[ch] + static_cast<T>(eps));
  }
#pragma omp parallel for schedule(static)
  for (int64_t s = 0; s < nb; ++s) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* src = px + (s * c + ch) * hw;
      T* dst = out.data() + (s * c + ch) * hw;
      const T a = pg[ch] * inv_std[ch];
      const T b2 = pb[ch] - a * (*mean)[ch];
      for (int64_t i = 0; i < hw; ++i) dst[i] = a * src[i] + b2;
    }
  }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  const bool train = mode == Mode::kTrain;
  auto inv_std_sp = std::make_shared<std::vector<T>>(std::move(inv_std));
  auto bwd = [xn, gn, bn, mean, inv_std_sp, nb, c, hw,
              m, train](typename Tensor<T>::Node& self) {
    const T* g = self.grad.data();
    const T* px = xn->data.data();
    const T* pg = gn->data.data();
    // channels are independent: per-channel stats and disjoint grad planes
#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T mu = (*mean)[ch];
      const T istd = (*inv_std_sp)[ch];
      T sum_g = T(0), sum_gx = T(0);
      for (int64_t s = 0; s < nb; ++s) {
        const T* gs = g + (s * c + ch) * hw;
        const T* xs = px + (s * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          sum_g += gs[i];
          sum_gx += gs[i] * (xs[i] - mu) * istd;
        }
      }
      if (gn->requires_grad) gn->grad[ch] += sum_gx;
      if (bn->requires_grad) bn->grad[ch] += sum_g;
      if (!xn->requires_grad) continue;
      const T inv_m = T(1) / static_cast<T>(m);
      for (int64_t s = 0; s < nb; ++s) {
        const T* gs = g + (s * c + ch) * hw;
        const T* xs = px + (s * c + ch) * hw;
        T* dst = xn->grad.data() + (s * c + ch) * hw;
        if (train) {
          for (int64_t i = 0; i < hw; ++i) {
            const T xhat = (xs[i] - mu) * istd;
            dst[i] += pg[ch] * istd *
                      (gs[i] - sum_g * inv_m - xhat * sum_gx * inv_m);
          }
        } else {
          for (int64_t i = 0; i < hw; ++i) dst[i] += pg[ch] * istd * gs[i];
        }
      }
    }
  };
  return detail::make_result<T>(x.shape(), std::move(out), {xn, gn, bn},
                                std::move(bwd), "batchnorm2d");
}

// Layer normalization over the last axis (biased variance).
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, double eps) {
  if (x.ndim() < 1) throw std::invalid_argument("layernorm: need rank >= 1");
  const int64_t d = x.dim(-1);
  if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 ||
      beta.dim(0) != d) {
    throw std::invalid_argument("layernorm: gamma/beta must be [" +
                                std::to_string(d) + "]");
  }
  const int64_t rows = x.numel() / d;
  std::vector<T> out(static_cast<size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const T* px = x.data().data();
  const T* pg = gamma.data().data();
  const T* pb = beta.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = px + r * d;
    T mu = T(0);
    for (int64_t i = 0; i < d; ++i) mu += src[i];
    mu /= static_cast<T>(d);
    T v = T(0);
    for (int64_t i = 0; i < d; ++i) {
      const T dx = src[i] - mu;
      v += dx * dx;
    }
    v /= static_cast<T>(d);
    const T istd = T(1) / std::sqrt(v + static_cast<T>(eps));
    (*mean)[r] = mu;
    (*inv_std)[r] = istd;
    T* dst = out.data() + r * d;
    for (int64_t i = 0; i < d; ++i) {
      dst[i] = pg[i] * (src[i] - mu) * istd + pb[i];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto bwd = [xn, gn, bn, mean, inv_std, rows, d](typename Tensor<T>::Node& self) {
    const T* g = self.grad.data();
    const T* px = xn->data.data();
    const T* pg = gn->data.data();
    if (gn->requires_grad || bn->requires_grad) {
      // accumulate over rows per channel; channels are independent
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < d; ++i) {
        T dgamma = T(0), dbeta = T(0);
        for (int64_t r = 0; r < rows; ++r) {
          const T xhat = (px[r * d + i] - (*mean)[r]) * (*inv_std)[r];
          dgamma += g[r * d + i] * xhat;
          dbeta += g[r * d + i];
        }
        if (gn->requires_grad) gn->grad[i] += dgamma;
        if (bn->requires_grad) bn->grad[i] += dbeta;
      }
    }
    if (!xn->requires_grad) return;
    const T inv_d = T(1) / static_cast<T>(d);
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
      const T mu = (*mean)[r];
      const T istd = (*inv_std)[r];
      const T* gs = g + r * d;
      const T* xs = px + r * d;
      T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
      for (int64_t i = 0; i < d; ++i) {
        const T xhat = (xs[i] - mu) * istd;
        const T dxhat = gs[i] * pg[i];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
      }
      T* dst = xn->grad.data() + r * d;
      for (int64_t i = 0; i < d; ++i) {
        const T xhat = (xs[i] - mu) * istd;
        const T dxhat = gs[i] * pg[i];
        dst[i] += istd * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
      }
    }
  };
  return detail::make_result<T>(x.shape(), std::move(out), {xn, gn, bn},
                                std::move(bwd), "layernorm");
}

// Scaled dot-product attention: Softmax(Q K^T / sqrt(d_k)) V.
// Q[N,n_q,d_k], K[N,n_k,d_k], V[N,n_k,d_v]. Optionally exposes the
// attention weights (detached) through `probs_out`.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    Tensor<T>* probs_out = nullptr) {
  if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3) {
    throw std::invalid_argument("attention: q, k, v must be rank 3");
  }
  if (q.dim(0) != k.dim(0) || q.dim(0) != v.dim(0)) {
    throw std::invalid_argument("attention: batch dims differ");
  }
  if (q.dim(2) != k.dim(2)) {
    throw std::invalid_argument("attention: d_k of Q and K differ");
  }
  if (k.dim(1) != v.dim(1)) {
    throw std::invalid_argument("attention: n_k of K and V differ");
  }
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.dim(2))));
  Tensor<T> scores = scale(matmul(q, transpose_last2(k)), inv_sqrt_dk);
  Tensor<T> probs = softmax(scores, -1);
  if (probs_out != nullptr) *probs_out = probs.clone_detached();
  return matmul(probs, v);
}

// Multi-head self-attention (Q=K=V=x). Head projections are stored fused:
// wq/wk/wv are [D, D] with head i occupying columns [i*d_h, (i+1)*d_h), and
// wo is [D, D]. No projection biases.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const Tensor<T>& wq,
                               const Tensor<T>& wk, const Tensor<T>& wv,
                               const Tensor<T>& wo, int64_t heads,
                               Tensor<T>* probs_out = nullptr) {
  if (x.ndim() != 3) throw std::invalid_argument("mha: x must be [N,L,D]");
  const int64_t nb = x.dim(0), l = x.dim(1), d = x.dim(2);
  if (d % heads != 0) {
    throw std::invalid_argument("mha: D=" + std::to_string(d) +
                                " not divisible by heads=" +
                                std::to_string(heads));
  }
  for (const auto* m : {&wq, &wk, &wv, &wo}) {
    if (m->ndim() != 2 || m->dim(0) != d || m->dim(1) != d) {
      throw std::invalid_argument("mha: projection matrices must be [D,D]");
    }
  }
  const int64_t dh = d / heads;
  auto split_heads = [&](const Tensor<T>& proj) {
    // [N,L,D] -> [N*heads, L, d_h]
    return reshape(permute(reshape(proj, {nb, l, heads, dh}), {0, 2, 1, 3}),
                   {nb * heads, l, dh});
  };
  Tensor<T> qh = split_heads(matmul(x, wq));
  Tensor<T> kh = split_heads(matmul(x, wk));
  Tensor<T> vh = split_heads(matmul(x, wv));
  Tensor<T> oh = attention(qh, kh, vh, probs_out);
  // [N*heads, L, d_h] -> [N,L,D]
  Tensor<T> merged =
      reshape(permute(reshape(oh, {nb, heads, l, dh}), {0, 2, 1, 3}),
              {nb, l, d});
  return matmul(merged, wo);
}

// Two-layer MLP with GELU and two inverted dropouts:
// Dropout(Dropout(GELU(x W1 + b1)) W2 + b2).
template <typename T>
Tensor<T> mlp_block(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1,
                    const Tensor<T>& w2, const Tensor<T>& b2, double rate,
                    Mode mode, Rng* rng) {
  Tensor<T> h = dropout(gelu(linear(x, w1, b1)), rate, mode, rng);
  return dropout(linear(h, w2, b2), rate, mode, rng);
}

// Mean over the batch of -log softmax(logits)[label], with a fused
// log-sum-exp for stability.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<int64_t>& labels) {
  if (logits.ndim() != 2) {
    throw std::invalid_argument("cross_entropy: logits must be [N,K]");
  }
  const int64_t nb = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != nb) {
    throw std::invalid_argument("cross_entropy: got " +
                                std::to_string(labels.size()) +
                                " labels for batch " + std::to_string(nb));
  }
  for (int64_t lab : labels) {
    if (lab < 0 || lab >= k) {
      throw std::invalid_argument("cross_entropy: label " +
                                  std::to_string(lab) + " out of range [0," +
                                  std::to_string(k) + ")");
    }
  }
  const T* pz = logits.data().data();
  T loss = T(0);
  for (int64_t i = 0; i < nb; ++i) {
    const T* row = pz + i * k;
    T mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    loss += std::log(denom) + mx - row[labels[static_cast<size_t>(i)]];
  }
  loss /= static_cast<T>(nb);

  auto zn = logits.node();
  auto labs = std::make_shared<std::vector<int64_t>>(labels);
  auto bwd = [zn, labs, nb, k](typename Tensor<T>::Node& self) {
    if (!zn->requires_grad) return;
    const T g = self.grad[0] / static_cast<T>(nb);
    const T* pz = zn->data.data();
    T* gz = zn->grad.data();
    for (int64_t i = 0; i < nb; ++i) {
      const T* row = pz + i * k;
      T mx = row[0];
      for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      T denom = T(0);
      for (int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
      const T inv = T(1) / denom;
      for (int64_t j = 0; j < k; ++j) {
        T p = std::exp(row[j] - mx) * inv;
        if (j == (*labs)[static_cast<size_t>(i)]) p -= T(1);
        gz[i * k + j] += g * p;
      }
    }
  };
  return detail::make_result<T>({}, {loss}, {zn}, std::move(bwd),
                                "cross_entropy");
}

// Fraction of rows whose argmax equals the label.
template <typename T>
double accuracy(const Tensor<T>& logits, const std::vector<int64_t>& labels) {
  if (logits.ndim() != 2 ||
      logits.dim(0) != static_cast<int64_t>(labels.size())) {
    throw std::invalid_argument("accuracy: logits/labels mismatch");
  }
  const int64_t nb = logits.dim(0), k = logits.dim(1);
  const T* pz = logits.data().data();
  int64_t hits = 0;
  for (int64_t i = 0; i < nb; ++i) {
    const T* row = pz + i * k;
    int64_t best = 0;
    for (int64_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == labels[static_cast<size_t>(i)]) ++hits;
  }
  return nb == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(nb);
}

}  // namespace citnet
