#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "t2d/core/autograd.hpp"
#include "t2d/core/nn.hpp"
#include "t2d/core/rng.hpp"

using t2d::Rng;
using t2d::TensorD;
using t2d::ValueD;
namespace ag = t2d::ag;

namespace {

// Central finite differences against the analytic gradient. `build` must
// recompute the scalar loss from scratch on every call.
void gradcheck(const std::function<ValueD()>& build, std::vector<ValueD> leaves,
               double tol = 1e-6) {
  for (auto& p : leaves) p.zero_grad();
  auto loss = build();
  ag::backward(loss);
  for (auto& p : leaves) {
    REQUIRE(p.needs_grad());
    for (int64_t i = 0; i < p.val().numel(); ++i) {
      const double x0 = p.val()[i];
      const double h = 1e-5 * std::max(1.0, std::abs(x0));
      p.val()[i] = x0 + h;
      const double lp = build().val()[0];
      p.val()[i] = x0 - h;
      const double lm = build().val()[0];
      p.val()[i] = x0;
      const double fd = (lp - lm) / (2 * h);
      const double an = p.node()->grad_ready ? p.grad()[i] : 0.0;
      const double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      INFO("param index " << i << " fd=" << fd << " analytic=" << an);
      REQUIRE(err < tol);
    }
  }
}

ValueD randleaf(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  rng.fill_uniform(t, lo, hi);
  return ValueD::leaf(std::move(t), true);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  Rng rng(7);
  auto a = randleaf(rng, {3, 4});
  auto b = randleaf(rng, {3, 4}, 0.5, 2.0);
  gradcheck([&] { return ag::sum_all(ag::mul(ag::add(a, b), ag::sub(a, b))); }, {a, b});
  gradcheck([&] { return ag::sum_all(ag::div(a, b)); }, {a, b});
  gradcheck([&] { return ag::sum_all(ag::mul_scalar(ag::add_scalar(a, 0.7), -1.3)); }, {a});
}

TEST_CASE("activations match finite differences") {
  Rng rng(11);
  auto a = randleaf(rng, {2, 5}, 0.2, 1.5);  // away from relu kink
  gradcheck([&] { return ag::sum_all(ag::relu(a)); }, {a});
  gradcheck([&] { return ag::sum_all(ag::sigmoid(a)); }, {a});
  gradcheck([&] { return ag::sum_all(ag::tanh_(a)); }, {a});
  gradcheck([&] { return ag::sum_all(ag::exp_(a)); }, {a});
  gradcheck([&] { return ag::sum_all(ag::log_(a)); }, {a});
}

TEST_CASE("matmul, transpose, reshape, slicing") {
  Rng rng(13);
  auto a = randleaf(rng, {3, 4});
  auto b = randleaf(rng, {4, 2});
  gradcheck([&] { return ag::sum_all(ag::matmul(a, b)); }, {a, b});
  gradcheck([&] { return ag::sum_all(ag::exp_(ag::matmul(ag::transpose2d(b), ag::transpose2d(a)))); },
            {a, b});
  gradcheck([&] { return ag::sum_all(ag::mul(ag::reshape(a, {4, 3}), ag::reshape(a, {4, 3}))); }, {a});
  gradcheck([&] { return ag::sum_all(ag::exp_(ag::slice_cols(a, 1, 3))); }, {a});
  gradcheck([&] { return ag::sum_all(ag::sigmoid(ag::concat_cols(a, a))); }, {a});
}

TEST_CASE("bias and layout ops") {
  Rng rng(17);
  auto x = randleaf(rng, {4, 3});
  auto b = randleaf(rng, {3});
  gradcheck([&] { return ag::sum_all(ag::exp_(ag::bias_add_rows(x, b))); }, {x, b});

  auto c = randleaf(rng, {2, 3, 3});
  auto cb = randleaf(rng, {2});
  gradcheck([&] { return ag::sum_all(ag::sigmoid(ag::bias_add_chw(c, cb))); }, {c, cb});
  gradcheck([&] { return ag::sum_all(ag::exp_(ag::chw_to_rows(c))); }, {c});
  auto r = randleaf(rng, {9, 2});
  gradcheck([&] { return ag::sum_all(ag::tanh_(ag::rows_to_chw(r, 3, 3))); }, {r});
  auto d = randleaf(rng, {1, 3, 3});
  gradcheck([&] { return ag::sum_all(ag::exp_(ag::concat_channels(c, d))); }, {c, d});
}

TEST_CASE("reductions and softmax") {
  Rng rng(19);
  auto a = randleaf(rng, {3, 5});
  gradcheck([&] { return ag::mean_all(ag::mul(a, a)); }, {a});
  gradcheck([&] { return ag::sum_all(ag::exp_(ag::sum_rows(a))); }, {a});
  gradcheck([&] { return ag::sum_all(ag::mul(ag::softmax_rows(a), a)); }, {a});
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(23);
  auto a = randleaf(rng, {6, 9}, -4.0, 4.0);
  auto s = ag::softmax_rows(a);
  for (int i = 0; i < 6; ++i) {
    double z = 0;
    for (int j = 0; j < 9; ++j) z += s.val().at(i, j);
    REQUIRE(z == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("layernorm matches finite differences") {
  Rng rng(29);
  auto x = randleaf(rng, {3, 6});
  auto g = randleaf(rng, {6}, 0.5, 1.5);
  auto b = randleaf(rng, {6});
  gradcheck([&] { return ag::sum_all(ag::mul(ag::layernorm_rows(x, g, b), x)); }, {x, g, b},
            1e-5);
}

TEST_CASE("conv2d variants match finite differences") {
  Rng rng(31);
  auto x = randleaf(rng, {2, 5, 5});
  auto w1 = randleaf(rng, {3, 2, 1, 1});
  gradcheck([&] { return ag::sum_all(ag::sigmoid(ag::conv2d(x, w1, 1, 0))); }, {x, w1});
  auto w3 = randleaf(rng, {2, 2, 3, 3});
  gradcheck([&] { return ag::sum_all(ag::sigmoid(ag::conv2d(x, w3, 1, 1))); }, {x, w3});
  auto x6 = randleaf(rng, {1, 6, 6});
  auto ws = randleaf(rng, {2, 1, 3, 3});
  gradcheck([&] { return ag::sum_all(ag::tanh_(ag::conv2d(x6, ws, 2, 1))); }, {x6, ws});
}

TEST_CASE("pooling and resize match finite differences") {
  Rng rng(37);
  auto x = randleaf(rng, {2, 4, 4});
  gradcheck([&] { return ag::sum_all(ag::exp_(ag::avgpool2(x))); }, {x});
  gradcheck([&] { return ag::sum_all(ag::sigmoid(ag::resize_bilinear(x, 7, 9))); }, {x});
  gradcheck([&] { return ag::sum_all(ag::sigmoid(ag::resize_bilinear(x, 2, 3))); }, {x});
}

TEST_CASE("fused losses match finite differences") {
  Rng rng(41);
  auto logits = randleaf(rng, {3, 4}, -2.0, 2.0);
  TensorD target({3, 4});
  Rng rng2(5);
  for (int64_t i = 0; i < target.numel(); ++i) target[i] = rng2.uniform() < 0.5 ? 0.0 : 1.0;
  gradcheck([&] { return ag::bce_with_logits_mean(logits, target); }, {logits});

  std::vector<int> labels = {0, 3, 1};
  std::vector<double> wts = {1.0, 0.5, 1.0, 0.1};
  gradcheck([&] { return ag::cross_entropy_rows(logits, labels, wts); }, {logits});

  TensorD mtgt({3, 4});
  rng2.fill_uniform(mtgt, -1.0, 1.0);
  gradcheck([&] { return ag::mse_mean(logits, mtgt); }, {logits});
}

TEST_CASE("multihead attention matches finite differences") {
  Rng rng(43);
  t2d::nn::MultiheadAttentionT<double> mha(rng, 8, 2, 6);
  auto q = randleaf(rng, {3, 8});
  auto kv = randleaf(rng, {5, 6});
  t2d::nn::ParamMapT<double> pm;
  mha.collect("mha", pm);
  std::vector<ValueD> leaves = {q, kv};
  for (auto& [k, v] : pm) leaves.push_back(v);
  gradcheck([&] { return ag::sum_all(ag::tanh_(mha.forward(q, kv, kv))); }, leaves, 1e-5);
}

TEST_CASE("no-grad mode records nothing") {
  Rng rng(47);
  auto a = randleaf(rng, {2, 2});
  ag::NoGradGuard ng;
  auto y = ag::mul(a, a);
  REQUIRE_FALSE(y.needs_grad());
  REQUIRE(y.node()->parents.empty());
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Rng rng(53);
  auto a = randleaf(rng, {2, 3});
  gradcheck(
      [&] {
        auto s = ag::sigmoid(a);
        return ag::sum_all(ag::add(ag::mul(s, s), s));
      },
      {a});
}
