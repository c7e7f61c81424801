#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "ift/autodiff.hpp"
#include "ift/error.hpp"
#include "ift/rng.hpp"
#include "ift/tensor.hpp"
#include "oracles.hpp"

using ift::Rng;
using ift::Tensor;
using ift::nn::Tape;
using ift::nn::Var;

namespace {

// Checks d(sum(r ⊙ op(inputs)))/d(input[i]) against central differences for
// every coordinate of every input. `build` must be a pure function of the
// bound leaves.
void check_gradients(std::vector<Tensor>& inputs,
                     const std::function<Var(Tape&, std::vector<Var>&)>& build, uint64_t seed,
                     double tol = 1e-4) {
  Rng rng(seed);

  auto loss_value = [&]() {
    Tape t;
    std::vector<Var> vars;
    for (auto& in : inputs) vars.push_back(t.leaf(in, true));
    Var y = build(t, vars);
    return t.value(y)[0];
  };

  // forward once to size the projection vector, then freeze it
  static thread_local Tensor projection;
  Tape t;
  std::vector<Var> vars;
  for (auto& in : inputs) vars.push_back(t.leaf(in, true));
  Var y = build(t, vars);
  REQUIRE(t.value(y).size() == 1);
  t.backward(y);

  for (size_t p = 0; p < inputs.size(); ++p) {
    const Tensor analytic = t.grad(vars[p]);
    for (int64_t i = 0; i < inputs[p].size(); ++i) {
      const double fd = oracle::fd_derivative(inputs[p], i, loss_value);
      const double err = oracle::grad_rel_error(analytic[i], fd);
      INFO("input ", p, " coordinate ", i, " analytic ", analytic[i], " fd ", fd);
      CHECK(err < tol);
    }
  }
}

// Wraps an op producing a tensor into a scalar objective via a fixed random
// projection, so gradients are exercised through every output coordinate.
std::function<Var(Tape&, std::vector<Var>&)> project(
    const std::function<Var(Tape&, std::vector<Var>&)>& op, uint64_t seed) {
  return [op, seed](Tape& t, std::vector<Var>& vars) {
    Var y = op(t, vars);
    Rng r(seed);
    Tensor w = Tensor::gaussian(t.value(y).shape, r);
    return t.sum_all(t.mul(y, t.constant(std::move(w))));
  };
}

}  // namespace

// ---------------------------------------------------------------------------
// conv1d: spec examples
// ---------------------------------------------------------------------------

TEST_CASE("conv1d identity kernel K=1 passes input through") {
  Tape t;
  Tensor x({1, 3}, {1, 2, 3});
  Tensor w({1, 1, 1}, {1.0});
  Tensor b({1}, {0.0});
  Var y = t.conv1d_same(t.leaf(x), t.leaf(w), t.leaf(b));
  const Tensor& out = t.value(y);
  CHECK(out.shape == std::vector<int64_t>{1, 3});
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 2.0);
  CHECK(out[2] == 3.0);
}

TEST_CASE("conv1d delta kernel K=3 passes input through") {
  Tape t;
  Tensor x({1, 3}, {4, 5, 6});
  Tensor w({1, 1, 3}, {0, 1, 0});
  Tensor b({1}, {0.0});
  Var y = t.conv1d_same(t.leaf(x), t.leaf(w), t.leaf(b));
  const Tensor& out = t.value(y);
  for (int i = 0; i < 3; ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("conv1d matches naive triple-loop oracle within 1e-12") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = Tensor::gaussian({2, 8}, rng);
    Tensor w = Tensor::gaussian({3, 2, 3}, rng);
    Tensor b = Tensor::gaussian({3}, rng);
    Tape t;
    Var y = t.conv1d_same(t.leaf(x), t.leaf(w), t.leaf(b));
    Tensor expected = oracle::naive_conv1d(x, w, b);
    CHECK(oracle::max_abs_diff(t.value(y), expected) < 1e-12);
  }
}

TEST_CASE("conv1d output length equals input length at stride 1") {
  Rng rng(8);
  for (int64_t L : {1, 5, 30}) {
    Tensor x = Tensor::gaussian({4, L}, rng);
    Tensor w = Tensor::gaussian({2, 4, 3}, rng);
    Tensor b = Tensor::zeros({2});
    Tape t;
    Var y = t.conv1d_same(t.leaf(x), t.leaf(w), t.leaf(b));
    CHECK(t.value(y).shape == std::vector<int64_t>({2, L}));
  }
}

TEST_CASE("conv1d rejects shape mismatches with the offending dimension named") {
  Tape t;
  Tensor x({1, 2, 8});
  Tensor w({3, 4, 3});  // kernel expects 4 input channels, input has 2
  Tensor b({3});
  CHECK_THROWS_WITH_AS(t.conv1d_same(t.leaf(x), t.leaf(w), t.leaf(b)),
                       doctest::Contains("channels"), ift::Error);
  Tensor weven({3, 2, 4});
  CHECK_THROWS_AS(t.conv1d_same(t.leaf(x), t.leaf(weven), t.leaf(b)), ift::Error);
}

// ---------------------------------------------------------------------------
// batch_norm: spec examples
// ---------------------------------------------------------------------------

TEST_CASE("batch_norm leaves standardized input unchanged") {
  Rng rng(11);
  const double eps = 1e-12;
  Tensor x = Tensor::gaussian({4, 3, 5}, rng);
  // standardize each channel over (batch, length)
  const int64_t B = 4, C = 3, L = 5, n = B * L;
  for (int64_t c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t l = 0; l < L; ++l) mean += x.at(b, c, l);
    mean /= n;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t l = 0; l < L; ++l) var += (x.at(b, c, l) - mean) * (x.at(b, c, l) - mean);
    var /= n;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t l = 0; l < L; ++l) x.at(b, c, l) = (x.at(b, c, l) - mean) / std::sqrt(var);
  }
  Tensor gamma = Tensor::full({C}, 1.0), beta = Tensor::zeros({C});
  Tensor rm = Tensor::zeros({C}), rv = Tensor::full({C}, 1.0);
  Tape t;
  Var y = t.batch_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta), &rm, &rv, true, eps, 0.1);
  CHECK(oracle::max_abs_diff(t.value(y), x) < 1e-6);
}

TEST_CASE("batch_norm constant channel yields beta") {
  Tensor x = Tensor::full({2, 2, 4}, 7.5);
  Tensor gamma = Tensor::full({2}, 3.0);
  Tensor beta({2}, {0.25, -1.5});
  Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
  Tape t;
  Var y = t.batch_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta), &rm, &rv, true, 1e-5, 0.1);
  const Tensor& out = t.value(y);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t l = 0; l < 4; ++l) {
      CHECK(out.at(b, 0, l) == doctest::Approx(0.25).epsilon(1e-12));
      CHECK(out.at(b, 1, l) == doctest::Approx(-1.5).epsilon(1e-12));
    }
}

TEST_CASE("batch_norm normalized pre-affine statistics") {
  Rng rng(12);
  const double eps = 1e-12;
  Tensor x = Tensor::gaussian({8, 4, 10}, rng, 2.0, 3.0);
  Tensor gamma = Tensor::full({4}, 1.0), beta = Tensor::zeros({4});
  Tensor rm = Tensor::zeros({4}), rv = Tensor::full({4}, 1.0);
  Tape t;
  Var y = t.batch_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta), &rm, &rv, true, eps, 0.1);
  const Tensor& out = t.value(y);
  const int64_t B = 8, C = 4, L = 10, n = B * L;
  for (int64_t c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t l = 0; l < L; ++l) mean += out.at(b, c, l);
    mean /= n;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t l = 0; l < L; ++l) var += (out.at(b, c, l) - mean) * (out.at(b, c, l) - mean);
    var /= n;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-10);
  }
}

TEST_CASE("batch_norm running statistics feed eval mode") {
  Rng rng(13);
  Tensor x = Tensor::gaussian({16, 2, 8}, rng, -1.0, 2.0);
  Tensor gamma = Tensor::full({2}, 1.0), beta = Tensor::zeros({2});
  Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
  const double momentum = 1.0;  // adopt batch stats wholesale
  {
    Tape t;
    t.batch_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta), &rm, &rv, true, 1e-5, momentum);
  }
  // eval on the same batch now reproduces (up to the biased/unbiased factor)
  Tape t;
  Var y = t.batch_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta), &rm, &rv, false, 1e-5, momentum);
  const Tensor& out = t.value(y);
  double mean0 = 0.0;
  for (int64_t b = 0; b < 16; ++b)
    for (int64_t l = 0; l < 8; ++l) mean0 += out.at(b, 0, l);
  mean0 /= 16 * 8;
  CHECK(std::abs(mean0) < 1e-10);
}

// ---------------------------------------------------------------------------
// layer_norm: spec examples
// ---------------------------------------------------------------------------

TEST_CASE("layer_norm of constant row is zero") {
  Tape t;
  Tensor x({1, 4}, {1, 1, 1, 1});
  Tensor gamma = Tensor::full({4}, 1.0), beta = Tensor::zeros({4});
  Var y = t.layer_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta), 1e-12);
  for (int64_t i = 0; i < 4; ++i) CHECK(t.value(y)[i] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("layer_norm leaves an already-normalized row unchanged") {
  Tape t;
  Tensor x({1, 2}, {1, -1});
  Tensor gamma = Tensor::full({2}, 1.0), beta = Tensor::zeros({2});
  Var y = t.layer_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta), 1e-12);
  CHECK(t.value(y)[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(t.value(y)[1] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm row means vanish on random input") {
  Rng rng(14);
  Tensor x = Tensor::gaussian({10, 512}, rng, 0.3, 2.0);
  Tensor gamma = Tensor::full({512}, 1.0), beta = Tensor::zeros({512});
  Tape t;
  Var y = t.layer_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta), 1e-12);
  const Tensor& out = t.value(y);
  for (int64_t r = 0; r < 10; ++r) {
    double mean = 0.0;
    for (int64_t d = 0; d < 512; ++d) mean += out.at(r, d);
    CHECK(std::abs(mean / 512.0) < 1e-10);
  }
}

// ---------------------------------------------------------------------------
// multi-head attention: spec examples
// ---------------------------------------------------------------------------

namespace {

oracle::NaiveAttentionWeights random_attention_weights(int64_t D, Rng& rng) {
  oracle::NaiveAttentionWeights w;
  const double s = 1.0 / std::sqrt(static_cast<double>(D));
  w.wq = Tensor::uniform({D, D}, rng, -s, s);
  w.bq = Tensor::uniform({D}, rng, -s, s);
  w.wk = Tensor::uniform({D, D}, rng, -s, s);
  w.bk = Tensor::uniform({D}, rng, -s, s);
  w.wv = Tensor::uniform({D, D}, rng, -s, s);
  w.bv = Tensor::uniform({D}, rng, -s, s);
  w.wo = Tensor::uniform({D, D}, rng, -s, s);
  w.bo = Tensor::uniform({D}, rng, -s, s);
  return w;
}

ift::nn::AttentionVars bind_attention(Tape& t, oracle::NaiveAttentionWeights& w) {
  return {t.leaf(w.wq), t.leaf(w.bq), t.leaf(w.wk), t.leaf(w.bk),
          t.leaf(w.wv), t.leaf(w.bv), t.leaf(w.wo), t.leaf(w.bo)};
}

}  // namespace

TEST_CASE("attention with a single token is a plain projection chain") {
  Rng rng(21);
  auto w = random_attention_weights(8, rng);
  Tensor x = Tensor::gaussian({1, 8}, rng);
  Tape t;
  Var y = multi_head_attention(t, t.leaf(x), bind_attention(t, w), 2);
  // softmax over one key gives weight 1: out = (x Wv + bv) Wo + bo
  Tensor expected = oracle::naive_attention(x, w, 2);
  CHECK(oracle::max_abs_diff(t.value(y), expected) < 1e-12);
}

TEST_CASE("attention over identical tokens is uniform") {
  Rng rng(22);
  auto w = random_attention_weights(16, rng);
  Tensor x({6, 16});
  Tensor row = Tensor::gaussian({16}, rng);
  for (int64_t i = 0; i < 6; ++i)
    for (int64_t j = 0; j < 16; ++j) x.at(i, j) = row[j];
  Tape t;
  Tensor probs;
  multi_head_attention(t, t.leaf(x), bind_attention(t, w), 4, &probs);
  for (int64_t i = 0; i < probs.size(); ++i) CHECK(probs[i] == doctest::Approx(1.0 / 6.0).epsilon(1e-10));
}

TEST_CASE("attention matches naive oracle within 1e-10 on 10x512") {
  Rng rng(23);
  auto w = random_attention_weights(512, rng);
  Tensor x = Tensor::gaussian({10, 512}, rng);
  Tape t;
  Var y = multi_head_attention(t, t.leaf(x), bind_attention(t, w), 4);
  Tensor expected = oracle::naive_attention(x, w, 4);
  CHECK(oracle::max_abs_diff(t.value(y), expected) < 1e-10);
}

TEST_CASE("attention rows sum to one") {
  Rng rng(24);
  auto w = random_attention_weights(32, rng);
  Tensor x = Tensor::gaussian({7, 32}, rng, 0.0, 3.0);
  Tape t;
  Tensor probs;
  multi_head_attention(t, t.leaf(x), bind_attention(t, w), 4, &probs);
  const int64_t T = 7;
  const int64_t rows = probs.size() / T;
  for (int64_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (int64_t j = 0; j < T; ++j) sum += probs[r * T + j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("attention rejects indivisible head counts") {
  Rng rng(25);
  auto w = random_attention_weights(10, rng);
  Tensor x = Tensor::gaussian({3, 10}, rng);
  Tape t;
  CHECK_THROWS_AS(multi_head_attention(t, t.leaf(x), bind_attention(t, w), 4), ift::Error);
}

// ---------------------------------------------------------------------------
// backward: spec examples
// ---------------------------------------------------------------------------

TEST_CASE("grad of sum is all ones") {
  Rng rng(31);
  Tensor x = Tensor::gaussian({3, 4, 2}, rng);
  Tape t;
  Var xv = t.leaf(x, true);
  t.backward(t.sum_all(xv));
  const Tensor& g = t.grad(xv);
  for (int64_t i = 0; i < g.size(); ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("grad of dot product") {
  Tensor x({2}, {1, 2});
  Tensor y({2}, {3, 4});
  Tape t;
  Var xv = t.leaf(x, true), yv = t.leaf(y, true);
  t.backward(t.sum_all(t.mul(xv, yv)));
  CHECK(t.grad(xv)[0] == 3.0);
  CHECK(t.grad(xv)[1] == 4.0);
  CHECK(t.grad(yv)[0] == 1.0);
  CHECK(t.grad(yv)[1] == 2.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x({2}, {1, 2});
  Tape t;
  Var xv = t.leaf(x, true);
  CHECK_THROWS_AS(t.backward(xv), ift::Error);
}

TEST_CASE("repeated backward after zero_grads is deterministic") {
  Rng rng(32);
  Tensor x = Tensor::gaussian({4, 4}, rng);
  Tensor w = Tensor::gaussian({4, 4}, rng);
  Tape t;
  Var xv = t.leaf(x, true), wv = t.leaf(w, true);
  Var loss = t.mean_all(t.relu(t.matmul(xv, wv)));
  t.backward(loss);
  Tensor g1 = t.grad(xv);
  t.zero_grads();
  t.backward(loss);
  Tensor g2 = t.grad(xv);
  CHECK(g1.data == g2.data);
}

// ---------------------------------------------------------------------------
// finite-difference sweep over every primitive
// ---------------------------------------------------------------------------

TEST_CASE("gradients: elementwise and structural ops") {
  Rng rng(41);
  {
    std::vector<Tensor> in{Tensor::gaussian({3, 4}, rng), Tensor::gaussian({3, 4}, rng)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.add(v[0], v[1]); }, 1), 100);
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.sub(v[0], v[1]); }, 2), 101);
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.mul(v[0], v[1]); }, 3), 102);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({2, 5}, rng)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.scale(v[0], -2.5); }, 4), 103);
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.mul(v[0], v[0]); }, 5), 104);
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.sin(v[0]); }, 6), 105);
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.cos(v[0]); }, 7), 106);
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.reshape(v[0], {5, 2}); }, 8), 107);
  }
  {
    // keep relu inputs away from the kink
    Tensor x = Tensor::uniform({3, 3}, rng, 0.2, 1.0);
    x.at(1, 1) = -0.7;
    x.at(2, 0) = -0.4;
    std::vector<Tensor> in{x};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.relu(v[0]); }, 9), 108);
  }
  {
    std::vector<Tensor> in{Tensor::uniform({2, 4}, rng, 0.5, 2.0)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.sqrt_guarded(v[0]); }, 10), 109);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({3, 4}, rng), Tensor::gaussian({4}, rng)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.add_rowvec(v[0], v[1]); }, 11), 110);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({2, 3, 4}, rng)};
    Tensor tile = Tensor::gaussian({3, 4}, rng);
    check_gradients(in,
                    project([tile](Tape& t, std::vector<Var>& v) { return t.add_const_broadcast(v[0], tile); }, 12),
                    111);
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.transpose_12(v[0]); }, 13), 112);
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.select_time(v[0], 1); }, 14), 113);
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.sum_last(v[0]); }, 15), 114);
    check_gradients(in, [](Tape& t, std::vector<Var>& v) { return t.mean_all(v[0]); }, 115);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({2, 3, 2, 2}, rng)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.permute_0213(v[0]); }, 16), 116);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({4, 3}, rng)};
    // repeated row exercises gradient accumulation in the scatter
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.gather_rows(v[0], {2, 0, 2}); }, 17),
                    117);
    Tensor w = Tensor::uniform({4}, rng, 0.1, 2.0);
    check_gradients(in, project([w](Tape& t, std::vector<Var>& v) { return t.scale_rows(v[0], w); }, 18), 118);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({3, 2}, rng), Tensor::gaussian({1}, rng)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.mul_scalar(v[0], v[1]); }, 19), 119);
  }
}

TEST_CASE("gradients: dropout with a fixed mask") {
  Rng rng(42);
  std::vector<Tensor> in{Tensor::gaussian({4, 4}, rng)};
  check_gradients(in, project(
                          [](Tape& t, std::vector<Var>& v) {
                            Rng mask_rng(999);
                            return t.dropout(v[0], 0.4, mask_rng, true);
                          },
                          20),
                  120);
}

TEST_CASE("gradients: matmul and batched matmul") {
  Rng rng(43);
  {
    std::vector<Tensor> in{Tensor::gaussian({3, 4}, rng), Tensor::gaussian({4, 2}, rng)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.matmul(v[0], v[1]); }, 21), 121);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({2, 3, 4}, rng), Tensor::gaussian({2, 4, 2}, rng)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.bmm(v[0], v[1], false); }, 22), 122);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({2, 3, 4}, rng), Tensor::gaussian({2, 5, 4}, rng)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.bmm(v[0], v[1], true); }, 23), 123);
  }
}

TEST_CASE("gradients: conv, norms, softmax, wing") {
  Rng rng(44);
  {
    std::vector<Tensor> in{Tensor::gaussian({2, 3, 6}, rng), Tensor::gaussian({4, 3, 3}, rng),
                           Tensor::gaussian({4}, rng)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.conv1d_same(v[0], v[1], v[2]); }, 24),
                    124);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({3, 2, 4}, rng), Tensor::uniform({2}, rng, 0.5, 1.5),
                           Tensor::gaussian({2}, rng)};
    check_gradients(in, project(
                            [](Tape& t, std::vector<Var>& v) {
                              Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
                              return t.batch_norm(v[0], v[1], v[2], &rm, &rv, true, 1e-5, 0.1);
                            },
                            25),
                    125);
    // eval mode with fixed running stats
    Tensor rm_fixed = Tensor::from({0.3, -0.2});
    Tensor rv_fixed = Tensor::from({1.7, 0.6});
    check_gradients(in, project(
                            [rm_fixed, rv_fixed](Tape& t, std::vector<Var>& v) {
                              Tensor rm = rm_fixed, rv = rv_fixed;
                              return t.batch_norm(v[0], v[1], v[2], &rm, &rv, false, 1e-5, 0.1);
                            },
                            26),
                    126);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({3, 6}, rng), Tensor::uniform({6}, rng, 0.5, 1.5),
                           Tensor::gaussian({6}, rng)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.layer_norm(v[0], v[1], v[2], 1e-12); }, 27),
                    127);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({4, 5}, rng)};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.softmax_last(v[0]); }, 28), 128);
  }
  {
    // wing gradient on both sides of the w=20 boundary
    Tensor d({6}, {0.5, 3.0, 19.0, 19.9, 20.1, 30.0});
    std::vector<Tensor> in{d};
    check_gradients(in, project([](Tape& t, std::vector<Var>& v) { return t.wing(v[0], 20.0, 2.0); }, 29), 129);
  }
  {
    std::vector<Tensor> in{Tensor::gaussian({6, 8}, rng)};
    auto w = random_attention_weights(8, rng);
    check_gradients(in, project(
                            [&w](Tape& t, std::vector<Var>& v) {
                              return multi_head_attention(t, v[0], bind_attention(t, w), 2);
                            },
                            30),
                    130);
  }
}

TEST_CASE("gradients flow into attention weights") {
  Rng rng(45);
  auto w = random_attention_weights(8, rng);
  Tensor x = Tensor::gaussian({4, 8}, rng);
  std::vector<Tensor> in{w.wq, w.wo, w.bv};
  check_gradients(in, project(
                          [&](Tape& t, std::vector<Var>& v) {
                            ift::nn::AttentionVars av{v[0],        t.leaf(w.bq), t.leaf(w.wk),
                                                      t.leaf(w.bk), t.leaf(w.wv), v[2],
                                                      v[1],        t.leaf(w.bo)};
                            return multi_head_attention(t, t.leaf(x), av, 2);
                          },
                          31),
                  131);
}

TEST_CASE("deterministic forward and backward across identical tapes") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::gaussian({4, 6}, rng);
    Tensor w = Tensor::gaussian({6, 3}, rng);
    Tape t;
    Var xv = t.leaf(x, true);
    Var wv = t.leaf(w, true);
    Var y = t.softmax_last(t.matmul(t.relu(xv), wv));
    Var loss = t.mean_all(y);
    t.backward(loss);
    std::vector<double> out = t.value(loss).data;
    auto g = t.grad(wv).data;
    out.insert(out.end(), g.begin(), g.end());
    return out;
  };
  CHECK(run(77) == run(77));
}
