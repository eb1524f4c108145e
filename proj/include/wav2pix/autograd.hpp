#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "wav2pix/rng.hpp"
#include "wav2pix/tensor.hpp"

namespace wav2pix::ag {

template <typename T>
class Tape;

// Lightweight handle to a tape node.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int32_t id = -1;

  bool defined() const { return tape != nullptr; }
  const Tensor<T>& value() const { return tape->value(id); }
  const Tensor<T>& grad() const { return tape->grad(id); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

// Reverse-mode tape. Nodes are created in topological order by the ops below;
// backward() replays them in reverse. Values and saved intermediates share
// storage with the tensors handed in (cheap handles), so a tape holds on to
// the activations of one forward pass and is discarded afterwards.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& upstream)>;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    return make(std::move(value), requires_grad, nullptr);
  }

  Var<T> make(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int32_t>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool requires_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  const Tensor<T>& grad(int32_t id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    require(n.grad.defined(), "autograd: node has no gradient");
    return n.grad;
  }

  bool has_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].grad.defined(); }

  void accumulate(const Var<T>& v, const Tensor<T>& g) { accumulate(v.id, g); }

  void accumulate(int32_t id, const Tensor<T>& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.grad.defined()) {
      n.grad = g.clone();
      return;
    }
    require(n.grad.numel() == g.numel(), "autograd: gradient shape mismatch");
    T* dst = n.grad.data();
    const T* src = g.data();
    for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
  }

  // Seeds d(root)/d(root) = 1 (root must be scalar) and propagates.
  void backward(const Var<T>& root) {
    require(root.tape == this, "autograd: var belongs to a different tape");
    require(value(root.id).numel() == 1, "autograd: backward root must be scalar");
    require(requires_grad(root.id), "autograd: root does not require grad");
    nodes_[static_cast<size_t>(root.id)].grad = Tensor<T>::scalar(T(1));
    for (int32_t i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || !n.grad.defined() || !n.backward) continue;
      n.backward(*this, n.grad);
      n.backward = nullptr;  // release saved tensors as we go
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  // deque: references returned by value()/grad() stay valid as nodes are
  // appended during the forward pass
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <typename T>
Var<T> detach(Var<T> x) {
  return x.tape->leaf(x.value(), false);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor<T> out = a.value().clone();
  T* o = out.data();
  const T* pb = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] += pb[i];
  bool rg = a.requires_grad() || b.requires_grad();
  int32_t ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), rg, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

// a + s*b for scalars or same-shape tensors.
template <typename T>
Var<T> add_scaled(Var<T> a, Var<T> b, T s) {
  require(a.value().same_shape(b.value()), "add_scaled: shape mismatch");
  Tensor<T> out = a.value().clone();
  T* o = out.data();
  const T* pb = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] += s * pb[i];
  bool rg = a.requires_grad() || b.requires_grad();
  int32_t ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), rg, [ia, ib, s](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(ia, g);
    if (!t.requires_grad(ib)) return;
    Tensor<T> gb = g.clone();
    T* p = gb.data();
    for (int64_t i = 0; i < gb.numel(); ++i) p[i] *= s;
    t.accumulate(ib, gb);
  });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  Tensor<T> out = x.value().clone();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i)
    if (o[i] < T(0)) o[i] *= slope;
  Tensor<T> in = x.value();
  int32_t ix = x.id;
  return x.tape->make(std::move(out), x.requires_grad(),
                      [ix, in, slope](Tape<T>& t, const Tensor<T>& g) {
                        Tensor<T> gx(in.shape());
                        T* p = gx.data();
                        const T* gi = g.data();
                        const T* xi = in.data();
                        for (int64_t i = 0; i < gx.numel(); ++i)
                          p[i] = xi[i] < T(0) ? gi[i] * slope : gi[i];
                        t.accumulate(ix, gx);
                      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Var<T> tanh_op(Var<T> x) {
  Tensor<T> out = x.value().clone();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = std::tanh(o[i]);
  Tensor<T> saved = out;  // shares storage
  int32_t ix = x.id;
  return x.tape->make(std::move(out), x.requires_grad(),
                      [ix, saved](Tape<T>& t, const Tensor<T>& g) {
                        Tensor<T> gx(saved.shape());
                        T* p = gx.data();
                        const T* gi = g.data();
                        const T* y = saved.data();
                        for (int64_t i = 0; i < gx.numel(); ++i)
                          p[i] = gi[i] * (T(1) - y[i] * y[i]);
                        t.accumulate(ix, gx);
                      });
}

// Inverted dropout, mask fixed by seed. Active whenever called; the generator
// keeps it on at inference as its only stochastic input.
template <typename T>
Var<T> dropout(Var<T> x, double p, uint64_t seed) {
  require(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
  Rng rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask(x.value().shape());
  T* m = mask.data();
  for (int64_t i = 0; i < mask.numel(); ++i) m[i] = rng.uniform() < p ? T(0) : keep_scale;
  Tensor<T> out = x.value().clone();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] *= m[i];
  int32_t ix = x.id;
  return x.tape->make(std::move(out), x.requires_grad(),
                      [ix, mask](Tape<T>& t, const Tensor<T>& g) {
                        Tensor<T> gx(mask.shape());
                        T* p_ = gx.data();
                        const T* gi = g.data();
                        const T* mi = mask.data();
                        for (int64_t i = 0; i < gx.numel(); ++i) p_[i] = gi[i] * mi[i];
                        t.accumulate(ix, gx);
                      });
}

template <typename T>
Var<T> reshape(Var<T> x, std::vector<int64_t> shape) {
  std::vector<int64_t> orig = x.value().shape();
  Tensor<T> out = x.value().reshaped(std::move(shape));
  int32_t ix = x.id;
  return x.tape->make(std::move(out), x.requires_grad(),
                      [ix, orig](Tape<T>& t, const Tensor<T>& g) {
                        t.accumulate(ix, g.reshaped(orig));
                      });
}

// Contiguous slice along dim 0.
template <typename T>
Var<T> slice_rows(Var<T> x, int64_t start, int64_t len) {
  const Tensor<T>& v = x.value();
  require(v.ndim() >= 1 && start >= 0 && len > 0 && start + len <= v.dim(0),
          "slice_rows: out of range");
  int64_t row = v.numel() / v.dim(0);
  std::vector<int64_t> shape = v.shape();
  shape[0] = len;
  Tensor<T> out(shape);
  std::copy(v.data() + start * row, v.data() + (start + len) * row, out.data());
  int64_t total = v.dim(0);
  int32_t ix = x.id;
  return x.tape->make(std::move(out), x.requires_grad(),
                      [ix, start, len, row, total](Tape<T>& t, const Tensor<T>& g) {
                        std::vector<int64_t> full = g.shape();
                        full[0] = total;
                        Tensor<T> gx(full);
                        std::copy(g.data(), g.data() + len * row, gx.data() + start * row);
                        t.accumulate(ix, gx);
                      });
}

// Concatenation along dim 0.
template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
  const Tensor<T>& va = a.value();
  const Tensor<T>& vb = b.value();
  require(va.ndim() == vb.ndim() && va.ndim() >= 1, "concat_rows: rank mismatch");
  for (int i = 1; i < va.ndim(); ++i)
    require(va.dim(i) == vb.dim(i), "concat_rows: trailing shape mismatch");
  std::vector<int64_t> shape = va.shape();
  shape[0] = va.dim(0) + vb.dim(0);
  Tensor<T> out(shape);
  std::copy(va.data(), va.data() + va.numel(), out.data());
  std::copy(vb.data(), vb.data() + vb.numel(), out.data() + va.numel());
  int64_t na = va.numel(), rows_a = va.dim(0);
  bool rg = a.requires_grad() || b.requires_grad();
  int32_t ia = a.id, ib = b.id;
  return a.tape->make(std::move(out), rg,
                      [ia, ib, na, rows_a](Tape<T>& t, const Tensor<T>& g) {
                        std::vector<int64_t> sa = g.shape();
                        std::vector<int64_t> sb = g.shape();
                        sa[0] = rows_a;
                        sb[0] = g.dim(0) - rows_a;
                        Tensor<T> ga(sa), gb(sb);
                        std::copy(g.data(), g.data() + na, ga.data());
                        std::copy(g.data() + na, g.data() + g.numel(), gb.data());
                        t.accumulate(ia, ga);
                        t.accumulate(ib, gb);
                      });
}

// Concatenation along the channel dim of {B,C,H,W} tensors.
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Tensor<T>& va = a.value();
  const Tensor<T>& vb = b.value();
  require(va.ndim() == 4 && vb.ndim() == 4, "concat_channels: expected 4-d tensors");
  require(va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2) && va.dim(3) == vb.dim(3),
          "concat_channels: batch/spatial mismatch");
  int64_t B = va.dim(0), Ca = va.dim(1), Cb = vb.dim(1), HW = va.dim(2) * va.dim(3);
  Tensor<T> out({B, Ca + Cb, va.dim(2), va.dim(3)});
  for (int64_t n = 0; n < B; ++n) {
    std::copy(va.data() + n * Ca * HW, va.data() + (n + 1) * Ca * HW,
              out.data() + n * (Ca + Cb) * HW);
    std::copy(vb.data() + n * Cb * HW, vb.data() + (n + 1) * Cb * HW,
              out.data() + n * (Ca + Cb) * HW + Ca * HW);
  }
  bool rg = a.requires_grad() || b.requires_grad();
  int32_t ia = a.id, ib = b.id;
  std::vector<int64_t> sh_a = va.shape(), sh_b = vb.shape();
  return a.tape->make(std::move(out), rg,
                      [ia, ib, sh_a, sh_b, B, Ca, Cb, HW](Tape<T>& t, const Tensor<T>& g) {
                        Tensor<T> ga(sh_a), gb(sh_b);
                        for (int64_t n = 0; n < B; ++n) {
                          std::copy(g.data() + n * (Ca + Cb) * HW,
                                    g.data() + n * (Ca + Cb) * HW + Ca * HW,
                                    ga.data() + n * Ca * HW);
                          std::copy(g.data() + n * (Ca + Cb) * HW + Ca * HW,
                                    g.data() + (n + 1) * (Ca + Cb) * HW,
                                    gb.data() + n * Cb * HW);
                        }
                        t.accumulate(ia, ga);
                        t.accumulate(ib, gb);
                      });
}

// {B,E} -> {B,E,H,W} by spatial replication.
template <typename T>
Var<T> tile_spatial(Var<T> e, int64_t H, int64_t W) {
  const Tensor<T>& v = e.value();
  require(v.ndim() == 2, "tile_spatial: expected {B,E}");
  int64_t B = v.dim(0), E = v.dim(1);
  Tensor<T> out({B, E, H, W});
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < E; ++c) {
      T val = v[n * E + c];
      T* dst = out.data() + ((n * E + c) * H * W);
      for (int64_t i = 0; i < H * W; ++i) dst[i] = val;
    }
  int32_t ie = e.id;
  return e.tape->make(std::move(out), e.requires_grad(),
                      [ie, B, E, H, W](Tape<T>& t, const Tensor<T>& g) {
                        Tensor<T> ge({B, E});
                        for (int64_t n = 0; n < B; ++n)
                          for (int64_t c = 0; c < E; ++c) {
                            const T* src = g.data() + ((n * E + c) * H * W);
                            T s = T(0);
                            for (int64_t i = 0; i < H * W; ++i) s += src[i];
                            ge[n * E + c] = s;
                          }
                        t.accumulate(ie, ge);
                      });
}

}  // namespace wav2pix::ag
