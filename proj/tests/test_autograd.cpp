#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include "test_helpers.hpp"
#include "wav2pix/nn_ops.hpp"
#include "wav2pix/objectives.hpp"

using namespace wav2pix;
using testutil::finite_diff_max_rel_error;
using testutil::random_tensor;

namespace {

// Runs fn on a fresh tape, backpropagates from its scalar output and
// finite-difference-checks the gradient w.r.t. every listed input.
void check_op_gradients(
    std::vector<Tensor<double>*> inputs,
    const std::function<ag::Var<double>(ag::Tape<double>&, std::vector<ag::Var<double>>&)>& fn,
    double tol = 1e-6) {
  auto eval_with_grads = [&](std::vector<Tensor<double>>* grads) {
    ag::Tape<double> tape;
    std::vector<ag::Var<double>> vars;
    for (Tensor<double>* in : inputs) vars.push_back(tape.leaf(*in, grads != nullptr));
    ag::Var<double> out = fn(tape, vars);
    // reduce to a scalar with fixed mixing weights so every output matters
    const Tensor<double>& v = out.value();
    Tensor<double> weights(v.shape());
    Rng wrng(99);
    for (int64_t i = 0; i < weights.numel(); ++i) weights[i] = wrng.uniform(-1.0, 1.0);
    double total = 0.0;
    for (int64_t i = 0; i < v.numel(); ++i) total += v[i] * weights[i];
    if (grads) {
      ag::Var<double> wv = tape.leaf(weights, false);
      // scalarize on-tape: sum(out * weights) via a manual node
      Tensor<double> saved_w = weights;
      int32_t oid = out.id;
      ag::Var<double> scalar = tape.make(
          Tensor<double>::scalar(total), true,
          [oid, saved_w](ag::Tape<double>& t, const Tensor<double>& g) {
            Tensor<double> go(saved_w.shape());
            for (int64_t i = 0; i < go.numel(); ++i) go[i] = saved_w[i] * g[0];
            t.accumulate(oid, go);
          });
      tape.backward(scalar);
      for (size_t i = 0; i < inputs.size(); ++i)
        grads->push_back(tape.has_grad(vars[i].id) ? tape.grad(vars[i].id).clone()
                                                   : Tensor<double>(inputs[i]->shape()));
    }
    return total;
  };

  std::vector<Tensor<double>> analytic;
  eval_with_grads(&analytic);
  for (size_t i = 0; i < inputs.size(); ++i) {
    double err = finite_diff_max_rel_error(
        *inputs[i], [&] { return eval_with_grads(nullptr); }, analytic[i]);
    CAPTURE(i);
    CHECK(err < tol);
  }
}

}  // namespace

TEST_CASE("elementwise op gradients") {
  Rng rng(1);
  Tensor<double> a = random_tensor({3, 4}, rng);
  Tensor<double> b = random_tensor({3, 4}, rng);

  check_op_gradients({&a, &b}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::add(v[0], v[1]);
  });
  check_op_gradients({&a, &b}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::add_scaled(v[0], v[1], 0.37);
  });
  check_op_gradients({&a}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::leaky_relu(v[0], 0.2);
  });
  check_op_gradients({&a}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::tanh_op(v[0]);
  });
  check_op_gradients({&a}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::dropout(v[0], 0.4, 123);
  });
  check_op_gradients({&a}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::reshape(v[0], {4, 3});
  });
  check_op_gradients({&a, &b}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::concat_rows(v[0], v[1]);
  });
  check_op_gradients({&a}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::slice_rows(v[0], 1, 2);
  });
  check_op_gradients({&a}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::tile_spatial(v[0], 2, 3);
  });
}

TEST_CASE("linear gradients") {
  Rng rng(2);
  Tensor<double> x = random_tensor({3, 5}, rng);
  Tensor<double> w = random_tensor({4, 5}, rng);
  Tensor<double> b = random_tensor({4}, rng);
  check_op_gradients({&x, &w, &b}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::linear(v[0], v[1], v[2]);
  });
}

TEST_CASE("conv2d gradients") {
  Rng rng(3);
  Tensor<double> x = random_tensor({2, 3, 8, 8}, rng);
  Tensor<double> w = random_tensor({4, 3, 4, 4}, rng);
  Tensor<double> b = random_tensor({4}, rng);
  check_op_gradients({&x, &w, &b}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::conv2d(v[0], v[1], v[2], {2, 2}, {1, 1});
  });
}

TEST_CASE("conv2d stride-1 no-pad gradients") {
  Rng rng(4);
  Tensor<double> x = random_tensor({2, 5, 4, 4}, rng);
  Tensor<double> w = random_tensor({1, 5, 4, 4}, rng);
  Tensor<double> b = random_tensor({1}, rng);
  check_op_gradients({&x, &w, &b}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::conv2d(v[0], v[1], v[2], {1, 1}, {0, 0});
  });
}

TEST_CASE("conv1d gradients") {
  Rng rng(5);
  Tensor<double> x = random_tensor({2, 2, 32}, rng);
  Tensor<double> w = random_tensor({3, 2, 15}, rng);
  Tensor<double> b = random_tensor({3}, rng);
  check_op_gradients({&x, &w, &b}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::conv1d(v[0], v[1], v[2], 4, 7);
  });
}

TEST_CASE("conv_transpose2d gradients") {
  Rng rng(6);
  Tensor<double> x = random_tensor({2, 4, 4, 4}, rng);
  Tensor<double> w = random_tensor({4, 3, 4, 4}, rng);
  Tensor<double> b = random_tensor({3}, rng);
  check_op_gradients({&x, &w, &b}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::conv_transpose2d(v[0], v[1], v[2], {2, 2}, {1, 1});
  });
}

TEST_CASE("conv_transpose2d projection gradients") {
  Rng rng(7);
  Tensor<double> x = random_tensor({2, 6, 1, 1}, rng);
  Tensor<double> w = random_tensor({6, 5, 4, 4}, rng);
  Tensor<double> b = random_tensor({5}, rng);
  check_op_gradients({&x, &w, &b}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::conv_transpose2d(v[0], v[1], v[2], {1, 1}, {0, 0});
  });
}

TEST_CASE("conv_transpose2d matches a direct scatter oracle") {
  Rng rng(8);
  Tensor<double> x = random_tensor({1, 2, 3, 3}, rng);
  Tensor<double> w = random_tensor({2, 3, 4, 4}, rng);
  Tensor<double> b = random_tensor({3}, rng);
  ag::Tape<double> tape;
  auto out = ag::conv_transpose2d(tape.leaf(x), tape.leaf(w), tape.leaf(b), {2, 2}, {1, 1});

  // direct per-element scatter
  int64_t Ho = 6, Wo = 6;
  Tensor<double> expect({1, 3, Ho, Wo});
  for (int64_t co = 0; co < 3; ++co)
    for (int64_t i = 0; i < Ho * Wo; ++i) expect[co * Ho * Wo + i] = b[co];
  for (int64_t ci = 0; ci < 2; ++ci)
    for (int64_t h = 0; h < 3; ++h)
      for (int64_t ww = 0; ww < 3; ++ww)
        for (int64_t co = 0; co < 3; ++co)
          for (int64_t kh = 0; kh < 4; ++kh)
            for (int64_t kw = 0; kw < 4; ++kw) {
              int64_t oh = h * 2 - 1 + kh, ow = ww * 2 - 1 + kw;
              if (oh < 0 || oh >= Ho || ow < 0 || ow >= Wo) continue;
              expect[(co * Ho + oh) * Wo + ow] +=
                  x[(ci * 3 + h) * 3 + ww] * w[((ci * 3 + co) * 4 + kh) * 4 + kw];
            }
  for (int64_t i = 0; i < expect.numel(); ++i)
    CHECK(out.value()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("batch_norm2d gradients (batch statistics)") {
  Rng rng(9);
  Tensor<double> x = random_tensor({3, 4, 2, 2}, rng);
  Tensor<double> gamma = random_tensor({4}, rng);
  Tensor<double> beta = random_tensor({4}, rng);
  Tensor<double> rm({4}), rv = Tensor<double>::full({4}, 1.0);
  check_op_gradients({&x, &gamma, &beta},
                     [&](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
                       return ag::batch_norm2d(v[0], v[1], v[2], rm, rv, true, false, 0.1, 1e-5);
                     },
                     1e-6);
}

TEST_CASE("batch_norm2d gradients (running statistics)") {
  Rng rng(10);
  Tensor<double> x = random_tensor({2, 3, 2, 2}, rng);
  Tensor<double> gamma = random_tensor({3}, rng);
  Tensor<double> beta = random_tensor({3}, rng);
  Tensor<double> rm = random_tensor({3}, rng, 0.1);
  Tensor<double> rv = Tensor<double>::full({3}, 0.8);
  check_op_gradients({&x, &gamma, &beta},
                     [&](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
                       return ag::batch_norm2d(v[0], v[1], v[2], rm, rv, false, false, 0.1, 1e-5);
                     });
}

TEST_CASE("batch_norm2d running statistics advance") {
  Tensor<double> x({2, 1, 1, 2}, {1.0, 3.0, 5.0, 7.0});
  Tensor<double> gamma = Tensor<double>::full({1}, 1.0);
  Tensor<double> beta({1});
  Tensor<double> rm({1}), rv = Tensor<double>::full({1}, 1.0);
  ag::Tape<double> tape;
  ag::batch_norm2d(tape.leaf(x), tape.leaf(gamma), tape.leaf(beta), rm, rv, true, true, 0.1,
                   1e-5);
  CHECK(rm[0] == doctest::Approx(0.1 * 4.0));  // mean of {1,3,5,7}
  // unbiased variance of {1,3,5,7} is 20/3
  CHECK(rv[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 20.0 / 3.0));
}

TEST_CASE("spectral_norm gradients with frozen u") {
  Rng rng(11);
  Tensor<double> w = random_tensor({4, 6}, rng);
  Tensor<double> u({4});
  Rng urng(42);
  double norm = 0.0;
  for (int64_t i = 0; i < 4; ++i) {
    u[i] = urng.normal();
    norm += u[i] * u[i];
  }
  for (int64_t i = 0; i < 4; ++i) u[i] /= std::sqrt(norm);
  Tensor<double> u_saved = u.clone();
  check_op_gradients({&w},
                     [&](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
                       Tensor<double>& state = u;
                       for (int64_t i = 0; i < 4; ++i) state[i] = u_saved[i];
                       return ag::spectral_norm(v[0], state, false);
                     },
                     1e-6);
}

TEST_CASE("spectral_normalize on a converged diagonal") {
  Tensor<double> w({2, 2}, {2.0, 0.0, 0.0, 1.0});
  Tensor<double> u({2}, {1.0, 0.0});  // already the top singular direction
  auto res = ag::spectral_normalize(w, u, true);
  CHECK(res.sigma == doctest::Approx(2.0));
  CHECK(res.normalized[0] == doctest::Approx(1.0));
  CHECK(res.normalized[3] == doctest::Approx(0.5));
}

TEST_CASE("spectral_normalize drives the top singular value to 1") {
  Rng rng(12);
  Tensor<double> w = random_tensor({16, 24}, rng);
  Tensor<double> u({16});
  for (int64_t i = 0; i < 16; ++i) u[i] = rng.normal();
  Tensor<double> normalized;
  for (int it = 0; it < 60; ++it) normalized = ag::spectral_normalize(w, u, true).normalized;
  Eigen::MatrixXd m(16, 24);
  for (int64_t r = 0; r < 16; ++r)
    for (int64_t c = 0; c < 24; ++c) m(r, c) = normalized[r * 24 + c];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  CHECK(svd.singularValues()(0) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("spectral_normalize guards the zero matrix") {
  Tensor<double> w({3, 3});
  Tensor<double> u({3}, {1.0, 0.0, 0.0});
  auto res = ag::spectral_normalize(w, u, true);
  for (int64_t i = 0; i < 9; ++i) CHECK(res.normalized[i] == 0.0);
}

TEST_CASE("loss node gradients") {
  Rng rng(13);
  Tensor<double> real = random_tensor({5}, rng);
  Tensor<double> fake = random_tensor({5}, rng);
  check_op_gradients({&real, &fake}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::lsgan_d(v[0], v[1]);
  });
  check_op_gradients({&fake}, [](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::lsgan_g(v[0]);
  });
  Tensor<double> logits = random_tensor({4, 3}, rng);
  std::vector<int> labels = {0, 2, 1, 2};
  check_op_gradients({&logits}, [labels](ag::Tape<double>&, std::vector<ag::Var<double>>& v) {
    return ag::softmax_cross_entropy(v[0], labels);
  });
}

TEST_CASE("gradient flows through an op when only the input requires grad") {
  Rng rng(14);
  Tensor<double> x = random_tensor({1, 2, 6, 6}, rng);
  Tensor<double> w = random_tensor({3, 2, 4, 4}, rng);
  Tensor<double> b = random_tensor({3}, rng);
  ag::Tape<double> tape;
  ag::Var<double> xv = tape.leaf(x, true);
  ag::Var<double> wv = tape.leaf(w, false);
  ag::Var<double> bv = tape.leaf(b, false);
  ag::Var<double> y = ag::conv2d(xv, wv, bv, {2, 2}, {1, 1});
  ag::Var<double> z = ag::lsgan_g(ag::reshape(y, {y.value().numel()}));
  tape.backward(z);
  CHECK(tape.has_grad(xv.id));
  CHECK_FALSE(tape.has_grad(wv.id));
}

TEST_CASE("dropout determinism and masking") {
  Rng rng(15);
  Tensor<double> x = Tensor<double>::full({1000}, 1.0);
  ag::Tape<double> tape;
  ag::Var<double> a = ag::dropout(tape.leaf(x), 0.5, 77);
  ag::Var<double> b = ag::dropout(tape.leaf(x), 0.5, 77);
  ag::Var<double> c = ag::dropout(tape.leaf(x), 0.5, 78);
  int64_t same = 0, zeros = 0;
  bool identical = true;
  for (int64_t i = 0; i < 1000; ++i) {
    identical = identical && a.value()[i] == b.value()[i];
    if (a.value()[i] == c.value()[i]) ++same;
    if (a.value()[i] == 0.0) ++zeros;
    else CHECK(a.value()[i] == doctest::Approx(2.0));
  }
  CHECK(identical);
  CHECK(same < 1000);
  CHECK(zeros > 400);
  CHECK(zeros < 600);
}
