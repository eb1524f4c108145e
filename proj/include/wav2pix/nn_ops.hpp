#pragma once

// Neural-net building blocks on top of the autograd tape: dense layers,
// strided (transposed) convolutions via im2col + GEMM, batch normalization,
// and spectral weight normalization.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <vector>

#include "wav2pix/autograd.hpp"
#include "wav2pix/parallel.hpp"

namespace wav2pix::ag {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

inline int64_t conv_output_length(int64_t len, int kernel, int stride, int padding) {
  return (len + 2 * static_cast<int64_t>(padding) - kernel) / stride + 1;
}

// Patch-extraction geometry shared by convolution forward/backward and the
// transposed convolution (whose scatter is the exact adjoint of the gather).
struct ConvGeom {
  int64_t channels, height, width;  // dense image side
  int kh, kw, sh, sw, ph, pw;
  int64_t grid_h, grid_w;  // patch grid side

  static ConvGeom make(int64_t c, int64_t h, int64_t w, int kh, int kw, int sh, int sw, int ph,
                       int pw) {
    ConvGeom g{c, h, w, kh, kw, sh, sw, ph, pw, 0, 0};
    g.grid_h = conv_output_length(h, kh, sh, ph);
    g.grid_w = conv_output_length(w, kw, sw, pw);
    require(g.grid_h >= 1 && g.grid_w >= 1, "conv: output size would be < 1");
    return g;
  }
  int64_t rows() const { return channels * kh * kw; }
  int64_t cols() const { return grid_h * grid_w; }
};

// Gather image patches into a {C*kh*kw, grid_h*grid_w} column matrix.
template <typename T>
void im2col(const T* img, const ConvGeom& g, T* col) {
  for (int64_t c = 0; c < g.channels; ++c) {
    const T* plane = img + c * g.height * g.width;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.cols();
        for (int64_t oh = 0; oh < g.grid_h; ++oh) {
          int64_t ih = oh * g.sh - g.ph + ki;
          T* dst = row + oh * g.grid_w;
          if (ih < 0 || ih >= g.height) {
            for (int64_t ow = 0; ow < g.grid_w; ++ow) dst[ow] = T(0);
            continue;
          }
          const T* src = plane + ih * g.width;
          for (int64_t ow = 0; ow < g.grid_w; ++ow) {
            int64_t iw = ow * g.sw - g.pw + kj;
            dst[ow] = (iw < 0 || iw >= g.width) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

// Scatter-add the adjoint of im2col. `img` must be zero-initialized.
template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* img) {
  for (int64_t c = 0; c < g.channels; ++c) {
    T* plane = img + c * g.height * g.width;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.cols();
        for (int64_t oh = 0; oh < g.grid_h; ++oh) {
          int64_t ih = oh * g.sh - g.ph + ki;
          if (ih < 0 || ih >= g.height) continue;
          T* dst = plane + ih * g.width;
          const T* src = row + oh * g.grid_w;
          for (int64_t ow = 0; ow < g.grid_w; ++ow) {
            int64_t iw = ow * g.sw - g.pw + kj;
            if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

namespace detail {

// Deterministic batched reduction: contiguous per-thread partials summed in
// thread order on the calling thread.
template <typename T, typename Fn>
Tensor<T> reduce_over_batch(int64_t batch, const std::vector<int64_t>& shape, Fn&& accumulate) {
  int nthreads = max_threads();
  std::vector<Tensor<T>> partials;
  partials.reserve(static_cast<size_t>(nthreads));
  for (int p = 0; p < nthreads; ++p) partials.emplace_back(shape);
  parallel_for(nthreads, [&](int64_t p) {
    int64_t lo = batch * p / nthreads;
    int64_t hi = batch * (p + 1) / nthreads;
    for (int64_t b = lo; b < hi; ++b) accumulate(b, partials[static_cast<size_t>(p)]);
  });
  Tensor<T> total(shape);
  for (int p = 0; p < nthreads; ++p) {
    const T* src = partials[static_cast<size_t>(p)].data();
    T* dst = total.data();
    for (int64_t i = 0; i < total.numel(); ++i) dst[i] += src[i];
  }
  return total;
}

}  // namespace detail

// Dense layer: x {B,I} * w {O,I}^T + b {O}.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = b.value();
  require(xv.ndim() == 2 && wv.ndim() == 2, "linear: expected 2-d input and weight");
  require(xv.dim(1) == wv.dim(1), "linear: input dim " + xv.shape_str() +
                                      " does not match weight " + wv.shape_str());
  require(bv.numel() == wv.dim(0), "linear: bias size mismatch");
  int64_t B = xv.dim(0), I = xv.dim(1), O = wv.dim(0);
  Tensor<T> out({B, O});
  ConstMatMap<T> X(xv.data(), B, I), W(wv.data(), O, I);
  MatMap<T> Y(out.data(), B, O);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += ConstVecMap<T>(bv.data(), O).transpose();
  bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  int32_t ix = x.id, iw = w.id, ib = b.id;
  Tensor<T> xs = xv, ws = wv;
  return x.tape->make(std::move(out), rg,
                      [ix, iw, ib, xs, ws, B, I, O](Tape<T>& t, const Tensor<T>& g) {
                        ConstMatMap<T> G(g.data(), B, O);
                        if (t.requires_grad(ix)) {
                          Tensor<T> gx({B, I});
                          MatMap<T>(gx.data(), B, I).noalias() =
                              G * ConstMatMap<T>(ws.data(), O, I);
                          t.accumulate(ix, gx);
                        }
                        if (t.requires_grad(iw)) {
                          Tensor<T> gw({O, I});
                          MatMap<T>(gw.data(), O, I).noalias() =
                              G.transpose() * ConstMatMap<T>(xs.data(), B, I);
                          t.accumulate(iw, gw);
                        }
                        if (t.requires_grad(ib)) {
                          Tensor<T> gb({O});
                          VecMap<T>(gb.data(), O) = G.colwise().sum().transpose();
                          t.accumulate(ib, gb);
                        }
                      });
}

// Strided 2-d convolution: x {B,C,H,W}, w {Co,C,kh,kw}, b {Co}.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::array<int, 2> stride, std::array<int, 2> pad) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  require(xv.ndim() == 4 && wv.ndim() == 4, "conv2d: expected 4-d tensors");
  require(xv.dim(1) == wv.dim(1), "conv2d: channel mismatch, input " + xv.shape_str() +
                                      " weight " + wv.shape_str());
  require(b.value().numel() == wv.dim(0), "conv2d: bias size mismatch");
  int64_t B = xv.dim(0), Co = wv.dim(0);
  ConvGeom geom = ConvGeom::make(xv.dim(1), xv.dim(2), xv.dim(3), static_cast<int>(wv.dim(2)),
                                 static_cast<int>(wv.dim(3)), stride[0], stride[1], pad[0],
                                 pad[1]);
  Tensor<T> out({B, Co, geom.grid_h, geom.grid_w});
  Tensor<T> cols({B, geom.rows(), geom.cols()});
  const Tensor<T>& bv = b.value();
  parallel_for(B, [&](int64_t n) {
    T* col = cols.data() + n * geom.rows() * geom.cols();
    im2col(xv.data() + n * geom.channels * geom.height * geom.width, geom, col);
    MatMap<T> Y(out.data() + n * Co * geom.cols(), Co, geom.cols());
    Y.noalias() = ConstMatMap<T>(wv.data(), Co, geom.rows()) *
                  ConstMatMap<T>(col, geom.rows(), geom.cols());
    Y.colwise() += ConstVecMap<T>(bv.data(), Co);
  });
  bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  if (!rg) return x.tape->make(std::move(out), false, nullptr);

  int32_t ix = x.id, iw = w.id, ib = b.id;
  Tensor<T> xs = xv, ws = wv;
  return x.tape->make(
      std::move(out), true,
      [ix, iw, ib, xs, ws, cols, geom, B, Co](Tape<T>& t, const Tensor<T>& g) {
        int64_t span = geom.cols();
        if (t.requires_grad(iw)) {
          Tensor<T> gw = detail::reduce_over_batch<T>(
              B, ws.shape(), [&](int64_t n, Tensor<T>& acc) {
                MatMap<T>(acc.data(), Co, geom.rows()).noalias() +=
                    ConstMatMap<T>(g.data() + n * Co * span, Co, span) *
                    ConstMatMap<T>(cols.data() + n * geom.rows() * span, geom.rows(), span)
                        .transpose();
              });
          t.accumulate(iw, gw);
        }
        if (t.requires_grad(ib)) {
          Tensor<T> gb({Co});
          for (int64_t n = 0; n < B; ++n)
            for (int64_t c = 0; c < Co; ++c) {
              const T* src = g.data() + (n * Co + c) * span;
              T s = T(0);
              for (int64_t i = 0; i < span; ++i) s += src[i];
              gb[c] += s;
            }
          t.accumulate(ib, gb);
        }
        if (t.requires_grad(ix)) {
          Tensor<T> gx(xs.shape());
          parallel_for(B, [&](int64_t n) {
            Tensor<T> dcol({geom.rows(), span});
            MatMap<T>(dcol.data(), geom.rows(), span).noalias() =
                ConstMatMap<T>(ws.data(), Co, geom.rows()).transpose() *
                ConstMatMap<T>(g.data() + n * Co * span, Co, span);
            col2im_add(dcol.data(), geom,
                       gx.data() + n * geom.channels * geom.height * geom.width);
          });
          t.accumulate(ix, gx);
        }
      });
}

// Transposed 2-d convolution: x {B,Ci,H,W}, w {Ci,Co,kh,kw}, b {Co}.
// Output spatial size is (H-1)*stride - 2*pad + kernel.
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> b, std::array<int, 2> stride,
                        std::array<int, 2> pad) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  require(xv.ndim() == 4 && wv.ndim() == 4, "conv_transpose2d: expected 4-d tensors");
  require(xv.dim(1) == wv.dim(0), "conv_transpose2d: channel mismatch, input " + xv.shape_str() +
                                      " weight " + wv.shape_str());
  int64_t B = xv.dim(0), Ci = xv.dim(1), Co = wv.dim(1);
  int kh = static_cast<int>(wv.dim(2)), kw = static_cast<int>(wv.dim(3));
  require(b.value().numel() == Co, "conv_transpose2d: bias size mismatch");
  int64_t Ho = (xv.dim(2) - 1) * stride[0] - 2 * pad[0] + kh;
  int64_t Wo = (xv.dim(3) - 1) * stride[1] - 2 * pad[1] + kw;
  ConvGeom geom = ConvGeom::make(Co, Ho, Wo, kh, kw, stride[0], stride[1], pad[0], pad[1]);
  require(geom.grid_h == xv.dim(2) && geom.grid_w == xv.dim(3),
          "conv_transpose2d: inconsistent geometry");
  int64_t span = geom.cols();  // == H*W of the input
  Tensor<T> out({B, Co, Ho, Wo});
  const Tensor<T>& bv = b.value();
  parallel_for(B, [&](int64_t n) {
    Tensor<T> cols({geom.rows(), span});
    MatMap<T>(cols.data(), geom.rows(), span).noalias() =
        ConstMatMap<T>(wv.data(), Ci, geom.rows()).transpose() *
        ConstMatMap<T>(xv.data() + n * Ci * span, Ci, span);
    T* dst = out.data() + n * Co * Ho * Wo;
    col2im_add(cols.data(), geom, dst);
    for (int64_t c = 0; c < Co; ++c) {
      T bias = bv[c];
      T* plane = dst + c * Ho * Wo;
      for (int64_t i = 0; i < Ho * Wo; ++i) plane[i] += bias;
    }
  });
  bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  if (!rg) return x.tape->make(std::move(out), false, nullptr);

  int32_t ix = x.id, iw = w.id, ib = b.id;
  Tensor<T> xs = xv, ws = wv;
  return x.tape->make(
      std::move(out), true,
      [ix, iw, ib, xs, ws, geom, B, Ci, Co, Ho, Wo, span](Tape<T>& t, const Tensor<T>& g) {
        bool need_x = t.requires_grad(ix);
        bool need_w = t.requires_grad(iw);
        Tensor<T> gx;
        if (need_x) gx = Tensor<T>(xs.shape());
        Tensor<T> gw;
        if (need_w || need_x) {
          // One pass over the batch computes the patch gather of the upstream
          // gradient and feeds both the input and the weight gradients.
          int nthreads = max_threads();
          std::vector<Tensor<T>> partials;
          if (need_w)
            for (int p = 0; p < nthreads; ++p) partials.emplace_back(ws.shape());
          parallel_for(nthreads, [&](int64_t p) {
            Tensor<T> dcols({geom.rows(), span});
            int64_t lo = B * p / nthreads, hi = B * (p + 1) / nthreads;
            for (int64_t n = lo; n < hi; ++n) {
              im2col(g.data() + n * Co * Ho * Wo, geom, dcols.data());
              if (need_x)
                MatMap<T>(gx.data() + n * Ci * span, Ci, span).noalias() =
                    ConstMatMap<T>(ws.data(), Ci, geom.rows()) *
                    ConstMatMap<T>(dcols.data(), geom.rows(), span);
              if (need_w)
                MatMap<T>(partials[static_cast<size_t>(p)].data(), Ci, geom.rows()).noalias() +=
                    ConstMatMap<T>(xs.data() + n * Ci * span, Ci, span) *
                    ConstMatMap<T>(dcols.data(), geom.rows(), span).transpose();
            }
          });
          if (need_w) {
            gw = Tensor<T>(ws.shape());
            for (int p = 0; p < nthreads; ++p) {
              const T* src = partials[static_cast<size_t>(p)].data();
              for (int64_t i = 0; i < gw.numel(); ++i) gw[i] += src[i];
            }
            t.accumulate(iw, gw);
          }
          if (need_x) t.accumulate(ix, gx);
        }
        if (t.requires_grad(ib)) {
          Tensor<T> gb({Co});
          for (int64_t n = 0; n < B; ++n)
            for (int64_t c = 0; c < Co; ++c) {
              const T* src = g.data() + (n * Co + c) * Ho * Wo;
              T s = T(0);
              for (int64_t i = 0; i < Ho * Wo; ++i) s += src[i];
              gb[c] += s;
            }
          t.accumulate(ib, gb);
        }
      });
}

// 1-d convolution on {B,C,L}, lowered onto the 2-d path with height 1.
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  require(xv.ndim() == 3 && wv.ndim() == 3, "conv1d: expected 3-d tensors");
  Var<T> x4 = reshape(x, {xv.dim(0), xv.dim(1), 1, xv.dim(2)});
  Var<T> w4 = reshape(w, {wv.dim(0), wv.dim(1), 1, wv.dim(2)});
  Var<T> y = conv2d(x4, w4, b, {1, stride}, {0, pad});
  const Tensor<T>& yv = y.value();
  return reshape(y, {yv.dim(0), yv.dim(1), yv.dim(3)});
}

// Batch normalization over {B,C,H,W}. With use_batch_stats the activation is
// normalized by the batch moments (biased variance) and, when requested, the
// running moments advance with momentum `mom` (unbiased variance, as is
// conventional). Otherwise the stored running moments are used as constants.
template <typename T>
Var<T> batch_norm2d(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                    Tensor<T>& running_var, bool use_batch_stats, bool update_running, T mom,
                    T eps) {
  const Tensor<T>& xv = x.value();
  require(xv.ndim() == 4, "batch_norm2d: expected {B,C,H,W}");
  int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
  require(gamma.value().numel() == C && beta.value().numel() == C &&
              running_mean.numel() == C && running_var.numel() == C,
          "batch_norm2d: channel parameter size mismatch");
  int64_t n = B * HW;
  require(!use_batch_stats || n > 1, "batch_norm2d: batch statistics need more than one value");

  Tensor<T> mean({C}), var({C});
  if (use_batch_stats) {
    parallel_for(C, [&](int64_t c) {
      T s = T(0);
      for (int64_t b = 0; b < B; ++b) {
        const T* p = xv.data() + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) s += p[i];
      }
      T m = s / static_cast<T>(n);
      T v = T(0);
      for (int64_t b = 0; b < B; ++b) {
        const T* p = xv.data() + (b * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) v += (p[i] - m) * (p[i] - m);
      }
      mean[c] = m;
      var[c] = v / static_cast<T>(n);
    });
    if (update_running) {
      for (int64_t c = 0; c < C; ++c) {
        running_mean[c] = (T(1) - mom) * running_mean[c] + mom * mean[c];
        T unbiased = var[c] * static_cast<T>(n) / static_cast<T>(n - 1);
        running_var[c] = (T(1) - mom) * running_var[c] + mom * unbiased;
      }
    }
  } else {
    mean = running_mean.clone();
    var = running_var.clone();
  }

  Tensor<T> inv_std({C});
  for (int64_t c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + eps);
  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  parallel_for(B, [&](int64_t b) {
    for (int64_t c = 0; c < C; ++c) {
      const T* p = xv.data() + (b * C + c) * HW;
      T* xh = xhat.data() + (b * C + c) * HW;
      T* o = out.data() + (b * C + c) * HW;
      T m = mean[c], is = inv_std[c], ga = gv[c], be = bv[c];
      for (int64_t i = 0; i < HW; ++i) {
        xh[i] = (p[i] - m) * is;
        o[i] = ga * xh[i] + be;
      }
    }
  });

  bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  if (!rg) return x.tape->make(std::move(out), false, nullptr);

  int32_t ix = x.id, ig = gamma.id, ibt = beta.id;
  Tensor<T> gs = gv;
  return x.tape->make(
      std::move(out), true,
      [ix, ig, ibt, xhat, inv_std, gs, B, C, HW, n, use_batch_stats](Tape<T>& t,
                                                                     const Tensor<T>& g) {
        Tensor<T> dgamma({C}), dbeta({C});
        parallel_for(C, [&](int64_t c) {
          T sg = T(0), sgx = T(0);
          for (int64_t b = 0; b < B; ++b) {
            const T* gp = g.data() + (b * C + c) * HW;
            const T* xh = xhat.data() + (b * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) {
              sg += gp[i];
              sgx += gp[i] * xh[i];
            }
          }
          dgamma[c] = sgx;
          dbeta[c] = sg;
        });
        if (t.requires_grad(ig)) t.accumulate(ig, dgamma);
        if (t.requires_grad(ibt)) t.accumulate(ibt, dbeta);
        if (t.requires_grad(ix)) {
          Tensor<T> gx(xhat.shape());
          T invn = T(1) / static_cast<T>(n);
          parallel_for(B, [&](int64_t b) {
            for (int64_t c = 0; c < C; ++c) {
              const T* gp = g.data() + (b * C + c) * HW;
              const T* xh = xhat.data() + (b * C + c) * HW;
              T* o = gx.data() + (b * C + c) * HW;
              T scale = gs[c] * inv_std[c];
              if (use_batch_stats) {
                T mg = dbeta[c] * invn, mgx = dgamma[c] * invn;
                for (int64_t i = 0; i < HW; ++i)
                  o[i] = scale * (gp[i] - mg - xh[i] * mgx);
              } else {
                for (int64_t i = 0; i < HW; ++i) o[i] = scale * gp[i];
              }
            }
          });
          t.accumulate(ix, gx);
        }
      });
}

// ---------------------------------------------------------------------------
// Spectral normalization

template <typename T>
struct SpectralNormResult {
  Tensor<T> normalized;
  Tensor<T> v;
  T sigma;  // estimate before the 1e-12 guard
};

// One power-iteration estimate of the top singular value of the weight viewed
// as {dim0, rest}. With update=true the persistent u vector advances first
// (training); with update=false the stored u is used as-is so the result is a
// pure function of the weight (evaluation, gradient checks).
template <typename T>
SpectralNormResult<T> spectral_normalize(const Tensor<T>& w, Tensor<T>& u, bool update,
                                         T guard = T(1e-12)) {
  require(w.ndim() >= 2, "spectral_normalize: weight must have rank >= 2");
  int64_t rows = w.dim(0);
  int64_t cols = w.numel() / rows;
  require(u.numel() == rows, "spectral_normalize: u size mismatch");
  ConstMatMap<T> W(w.data(), rows, cols);

  auto normalize = [](VecMap<T> vec) {
    T nrm = vec.norm();
    if (nrm > T(1e-12))
      vec /= nrm;
    else
      vec.setZero();
  };

  Tensor<T> v({cols});
  VecMap<T> vm(v.data(), cols);
  VecMap<T> um(u.data(), rows);
  vm.noalias() = W.transpose() * um;
  normalize(vm);
  if (update) {
    Eigen::Matrix<T, Eigen::Dynamic, 1> wu = W * vm;
    T nrm = wu.norm();
    if (nrm > T(1e-12)) um = wu / nrm;  // keep the previous u when Wv vanishes
  }
  T sigma = um.dot(W * vm);
  T sg = std::max(sigma, guard);
  Tensor<T> normalized = w.clone();
  T* p = normalized.data();
  for (int64_t i = 0; i < normalized.numel(); ++i) p[i] /= sg;
  return {std::move(normalized), std::move(v), sigma};
}

// Tape wrapper. u and v are treated as constants in the backward pass, the
// standard spectral-norm gradient.
template <typename T>
Var<T> spectral_norm(Var<T> w, Tensor<T>& u_state, bool update) {
  Tensor<T> u_snapshot;  // value of u used by this evaluation (post-update)
  SpectralNormResult<T> res = spectral_normalize(w.value(), u_state, update);
  u_snapshot = u_state.clone();
  T sg = std::max(res.sigma, T(1e-12));
  Tensor<T> out = res.normalized;
  Tensor<T> saved_out = out;
  Tensor<T> v = res.v;
  int32_t iw = w.id;
  int64_t rows = w.value().dim(0);
  int64_t cols = w.value().numel() / rows;
  return w.tape->make(std::move(out), w.requires_grad(),
                      [iw, saved_out, u_snapshot, v, sg, rows, cols](Tape<T>& t,
                                                                     const Tensor<T>& g) {
                        // d(W/sigma)/dW = I/sigma - (g . out)/sigma * u v^T
                        T gdot = T(0);
                        const T* gp = g.data();
                        const T* op = saved_out.data();
                        for (int64_t i = 0; i < saved_out.numel(); ++i) gdot += gp[i] * op[i];
                        Tensor<T> gw(saved_out.shape());
                        MatMap<T> GW(gw.data(), rows, cols);
                        GW = ConstMatMap<T>(gp, rows, cols) / sg;
                        GW.noalias() -= (gdot / sg) * (ConstVecMap<T>(u_snapshot.data(), rows) *
                                                       ConstVecMap<T>(v.data(), cols).transpose());
                        t.accumulate(iw, gw);
                      });
}

}  // namespace wav2pix::ag
