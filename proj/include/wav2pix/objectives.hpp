#pragma once

// Least-squares GAN objectives and the weighted auxiliary identity loss.
// The plain functions are the single source of truth for the values; the ag::
// wrappers attach the hand-derived gradients for training.

#include <cmath>
#include <span>
#include <vector>

#include "wav2pix/autograd.hpp"

namespace wav2pix::loss {

struct LossBreakdown {
  double d_loss = 0.0;
  double g_adv = 0.0;
  double g_identity = 0.0;
  double g_total = 0.0;
  double lambda = 0.0;
};

// 1/2 mean((real-1)^2) + 1/2 mean(fake^2): real scores are pushed to 1, fakes to 0.
template <typename T>
T lsgan_d_loss(std::span<const T> real_scores, std::span<const T> fake_scores) {
  require(!real_scores.empty() && !fake_scores.empty(), "lsgan_d_loss: empty score batch");
  T sr = T(0), sf = T(0);
  for (T r : real_scores) {
    require(std::isfinite(static_cast<double>(r)), "lsgan_d_loss: non-finite score");
    sr += (r - T(1)) * (r - T(1));
  }
  for (T f : fake_scores) {
    require(std::isfinite(static_cast<double>(f)), "lsgan_d_loss: non-finite score");
    sf += f * f;
  }
  return sr / (T(2) * static_cast<T>(real_scores.size())) +
         sf / (T(2) * static_cast<T>(fake_scores.size()));
}

// 1/2 mean((fake-1)^2): the generator drives fake scores to 1.
template <typename T>
T lsgan_g_loss(std::span<const T> fake_scores) {
  require(!fake_scores.empty(), "lsgan_g_loss: empty score batch");
  T s = T(0);
  for (T f : fake_scores) {
    require(std::isfinite(static_cast<double>(f)), "lsgan_g_loss: non-finite score");
    s += (f - T(1)) * (f - T(1));
  }
  return s / (T(2) * static_cast<T>(fake_scores.size()));
}

// Mean softmax cross-entropy (natural log) over logits {B,K}.
template <typename T>
T identity_ce_loss(const Tensor<T>& logits, std::span<const int> labels) {
  require(logits.ndim() == 2, "identity_ce_loss: expected {B,K} logits");
  int64_t B = logits.dim(0), K = logits.dim(1);
  require(K >= 2, "identity_ce_loss: need at least 2 classes");
  require(static_cast<int64_t>(labels.size()) == B, "identity_ce_loss: label count mismatch");
  T total = T(0);
  for (int64_t b = 0; b < B; ++b) {
    require(labels[static_cast<size_t>(b)] >= 0 && labels[static_cast<size_t>(b)] < K,
            "identity_ce_loss: label out of range");
    const T* row = logits.data() + b * K;
    T mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    T lse = T(0);
    for (int64_t k = 0; k < K; ++k) lse += std::exp(row[k] - mx);
    lse = std::log(lse) + mx;
    total += lse - row[labels[static_cast<size_t>(b)]];
  }
  return total / static_cast<T>(B);
}

template <typename T>
T generator_total_loss(T g_adv, T g_identity, T lambda) {
  require(lambda >= T(0), "generator_total_loss: lambda must be nonnegative");
  return g_adv + lambda * g_identity;
}

}  // namespace wav2pix::loss

namespace wav2pix::ag {

// Scalar node: 1/2 mean((real-1)^2) + 1/2 mean(fake^2).
template <typename T>
Var<T> lsgan_d(Var<T> real_scores, Var<T> fake_scores) {
  const Tensor<T>& rv = real_scores.value();
  const Tensor<T>& fv = fake_scores.value();
  require(rv.ndim() == 1 && fv.ndim() == 1, "lsgan_d: expected 1-d score batches");
  T val = loss::lsgan_d_loss(std::span<const T>(rv.data(), static_cast<size_t>(rv.numel())),
                             std::span<const T>(fv.data(), static_cast<size_t>(fv.numel())));
  bool rg = real_scores.requires_grad() || fake_scores.requires_grad();
  int32_t ir = real_scores.id, iff = fake_scores.id;
  Tensor<T> rs = rv, fs = fv;
  return real_scores.tape->make(Tensor<T>::scalar(val), rg,
                                [ir, iff, rs, fs](Tape<T>& t, const Tensor<T>& g) {
                                  T up = g[0];
                                  if (t.requires_grad(ir)) {
                                    Tensor<T> gr(rs.shape());
                                    T inv = up / static_cast<T>(rs.numel());
                                    for (int64_t i = 0; i < rs.numel(); ++i)
                                      gr[i] = (rs[i] - T(1)) * inv;
                                    t.accumulate(ir, gr);
                                  }
                                  if (t.requires_grad(iff)) {
                                    Tensor<T> gf(fs.shape());
                                    T inv = up / static_cast<T>(fs.numel());
                                    for (int64_t i = 0; i < fs.numel(); ++i) gf[i] = fs[i] * inv;
                                    t.accumulate(iff, gf);
                                  }
                                });
}

// Scalar node: 1/2 mean((fake-1)^2).
template <typename T>
Var<T> lsgan_g(Var<T> fake_scores) {
  const Tensor<T>& fv = fake_scores.value();
  require(fv.ndim() == 1, "lsgan_g: expected a 1-d score batch");
  T val = loss::lsgan_g_loss(std::span<const T>(fv.data(), static_cast<size_t>(fv.numel())));
  int32_t iff = fake_scores.id;
  Tensor<T> fs = fv;
  return fake_scores.tape->make(Tensor<T>::scalar(val), fake_scores.requires_grad(),
                                [iff, fs](Tape<T>& t, const Tensor<T>& g) {
                                  Tensor<T> gf(fs.shape());
                                  T inv = g[0] / static_cast<T>(fs.numel());
                                  for (int64_t i = 0; i < fs.numel(); ++i)
                                    gf[i] = (fs[i] - T(1)) * inv;
                                  t.accumulate(iff, gf);
                                });
}

// Scalar node: mean softmax cross-entropy against integer labels.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::vector<int> labels) {
  const Tensor<T>& lv = logits.value();
  T val = loss::identity_ce_loss(lv, std::span<const int>(labels));
  int64_t B = lv.dim(0), K = lv.dim(1);
  Tensor<T> probs({B, K});
  for (int64_t b = 0; b < B; ++b) {
    const T* row = lv.data() + b * K;
    T* p = probs.data() + b * K;
    T mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    T z = T(0);
    for (int64_t k = 0; k < K; ++k) {
      p[k] = std::exp(row[k] - mx);
      z += p[k];
    }
    for (int64_t k = 0; k < K; ++k) p[k] /= z;
  }
  int32_t il = logits.id;
  return logits.tape->make(Tensor<T>::scalar(val), logits.requires_grad(),
                           [il, probs, labels, B, K](Tape<T>& t, const Tensor<T>& g) {
                             Tensor<T> gl({B, K});
                             T inv = g[0] / static_cast<T>(B);
                             for (int64_t b = 0; b < B; ++b) {
                               const T* p = probs.data() + b * K;
                               T* o = gl.data() + b * K;
                               for (int64_t k = 0; k < K; ++k) o[k] = p[k] * inv;
                               o[labels[static_cast<size_t>(b)]] -= inv;
                             }
                             t.accumulate(il, gl);
                           });
}

}  // namespace wav2pix::ag
