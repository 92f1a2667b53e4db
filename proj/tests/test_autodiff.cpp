#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "frinet/autodiff.hpp"
#include "frinet/rng.hpp"

using namespace frinet::core;
namespace ad = frinet::core::ad;

namespace {

using VarD = ad::Var<double>;
using BuildFn = std::function<VarD(const std::vector<VarD>&)>;

Tensor<double> rand_tensor(std::vector<int> shape, uint64_t seed, double lo = -1.0,
                           double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Reduce an arbitrary tensor to a scalar with fixed pseudo-random weights so
/// every output element contributes a distinct gradient path.
VarD weighted_sum(const VarD& v, uint64_t seed = 99) {
  Tensor<double> w(v->value.shape());
  Rng rng(seed);
  for (long i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1.0, 1.0);
  return ad::sum_all(ad::mul(v, ad::constant(std::move(w))));
}

double eval_scalar(const BuildFn& build, const std::vector<Tensor<double>>& values) {
  std::vector<VarD> leaves;
  leaves.reserve(values.size());
  for (const auto& v : values) leaves.push_back(ad::leaf(v));
  return build(leaves)->value[0];
}

/// Backprop vs central finite differences over every input element.
void check_gradients(const BuildFn& build, std::vector<Tensor<double>> values,
                     double tol = 1e-6, double step = 1e-5) {
  std::vector<VarD> leaves;
  for (const auto& v : values) leaves.push_back(ad::leaf(v));
  auto loss = build(leaves);
  REQUIRE(loss->value.numel() == 1);
  ad::backward(loss);

  for (size_t k = 0; k < values.size(); ++k) {
    REQUIRE(leaves[k]->has_grad());
    for (long i = 0; i < values[k].numel(); ++i) {
      auto probe = values;
      probe[k][i] += step;
      const double lp = eval_scalar(build, probe);
      probe[k][i] -= 2 * step;
      const double lm = eval_scalar(build, probe);
      const double fd = (lp - lm) / (2 * step);
      const double bp = leaves[k]->grad[i];
      const double rel = std::abs(fd - bp) / std::max({1e-4, std::abs(fd), std::abs(bp)});
      CHECK_MESSAGE(rel < tol, "input ", k, " index ", i, " fd=", fd, " bp=", bp);
    }
  }
}

}  // namespace

TEST_CASE("gradcheck elementwise ops") {
  check_gradients(
      [](const std::vector<VarD>& v) {
        auto x = ad::add(v[0], v[1]);
        x = ad::sub(x, ad::scale(v[1], 0.3));
        x = ad::mul(x, v[0]);
        return weighted_sum(x);
      },
      {rand_tensor({3, 4}, 1), rand_tensor({3, 4}, 2)});
}

TEST_CASE("gradcheck relu away from the kink") {
  auto x = rand_tensor({2, 5}, 3);
  for (long i = 0; i < x.numel(); ++i)
    if (std::abs(x[i]) < 0.05) x[i] = 0.1;  // keep clear of the nondifferentiable point
  check_gradients([](const std::vector<VarD>& v) { return weighted_sum(ad::relu(v[0])); },
                  {x});
}

TEST_CASE("gradcheck concat and slice") {
  check_gradients(
      [](const std::vector<VarD>& v) {
        auto cat = ad::concat_channels<double>({v[0], v[1]});
        return weighted_sum(ad::slice_channels(cat, 1, 3));
      },
      {rand_tensor({2, 3, 2}, 4), rand_tensor({2, 3, 2}, 5)});
}

TEST_CASE("gradcheck rotate90 all angles") {
  for (int angle : kOrientations)
    check_gradients(
        [angle](const std::vector<VarD>& v) {
          return weighted_sum(ad::rotate90(v[0], angle));
        },
        {rand_tensor({2, 3, 4}, 6)});
}

TEST_CASE("gradcheck spatial mean and broadcast") {
  check_gradients(
      [](const std::vector<VarD>& v) {
        auto m = ad::spatial_mean(v[0]);
        return weighted_sum(ad::broadcast_spatial(m, 3, 5));
      },
      {rand_tensor({4, 3, 5}, 7)});
}

TEST_CASE("gradcheck conv2d basic / strided / dilated") {
  // plain 3x3, pad 1
  check_gradients(
      [](const std::vector<VarD>& v) {
        return weighted_sum(ad::conv2d(v[0], v[1], v[2], 1, 1, 1));
      },
      {rand_tensor({2, 5, 5}, 8), rand_tensor({3, 2, 3, 3}, 9), rand_tensor({3}, 10)});
  // stride 2
  check_gradients(
      [](const std::vector<VarD>& v) {
        return weighted_sum(ad::conv2d(v[0], v[1], v[2], 2, 1, 1));
      },
      {rand_tensor({2, 6, 6}, 11), rand_tensor({2, 2, 3, 3}, 12), rand_tensor({2}, 13)});
  // dilation 2, pad 2
  check_gradients(
      [](const std::vector<VarD>& v) {
        return weighted_sum(ad::conv2d(v[0], v[1], v[2], 1, 2, 2));
      },
      {rand_tensor({2, 6, 6}, 14), rand_tensor({2, 2, 3, 3}, 15), rand_tensor({2}, 16)});
  // 1x1
  check_gradients(
      [](const std::vector<VarD>& v) {
        return weighted_sum(ad::conv2d(v[0], v[1], v[2], 1, 0, 1));
      },
      {rand_tensor({3, 4, 4}, 17), rand_tensor({2, 3, 1, 1}, 18), rand_tensor({2}, 19)});
}

TEST_CASE("conv2d matches a naive loop oracle") {
  const auto x = rand_tensor({2, 6, 7}, 20);
  const auto w = rand_tensor({3, 2, 3, 3}, 21);
  const auto b = rand_tensor({3}, 22);
  const int stride = 2, pad = 1, dil = 1;
  auto out = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b), stride, pad, dil);
  const int ho = out->value.size(1);
  const int wo = out->value.size(2);
  for (int co = 0; co < 3; ++co)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = b[co];
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * stride - pad + ky * dil;
              const int ix = ox * stride - pad + kx * dil;
              if (iy < 0 || iy >= 6 || ix < 0 || ix >= 7) continue;
              acc += w(co, ci, ky, kx) * x(ci, iy, ix);
            }
        CHECK(out->value(co, oy, ox) == doctest::Approx(acc).epsilon(1e-9));
      }
}

TEST_CASE("gradcheck instance_norm and affine_norm") {
  check_gradients(
      [](const std::vector<VarD>& v) {
        return weighted_sum(ad::instance_norm(v[0], v[1], v[2], 1e-5));
      },
      {rand_tensor({3, 4, 4}, 23), rand_tensor({3}, 24, 0.5, 1.5), rand_tensor({3}, 25)},
      1e-5);
  const auto mu = rand_tensor({3}, 26, -0.2, 0.2);
  const auto var = rand_tensor({3}, 27, 0.5, 1.5);
  check_gradients(
      [&](const std::vector<VarD>& v) {
        return weighted_sum(ad::affine_norm(v[0], mu, var, v[1], v[2], 1e-5));
      },
      {rand_tensor({3, 3, 3}, 28), rand_tensor({3}, 29, 0.5, 1.5), rand_tensor({3}, 30)});
}

TEST_CASE("gradcheck bilinear resize up and down") {
  check_gradients(
      [](const std::vector<VarD>& v) {
        return weighted_sum(ad::bilinear_resize(v[0], 7, 9));
      },
      {rand_tensor({2, 3, 4}, 31)});
  check_gradients(
      [](const std::vector<VarD>& v) {
        return weighted_sum(ad::bilinear_resize(v[0], 2, 3));
      },
      {rand_tensor({2, 5, 6}, 32)});
}

TEST_CASE("gradcheck adaptive_avg_pool") {
  for (int bins : {1, 2, 3}) {
    check_gradients(
        [bins](const std::vector<VarD>& v) {
          return weighted_sum(ad::adaptive_avg_pool(v[0], bins));
        },
        {rand_tensor({2, 5, 7}, 33)});
  }
}

TEST_CASE("gradcheck masked_mean_pool") {
  Tensor<double> mask({4, 5});
  Rng rng(34);
  for (long i = 0; i < mask.numel(); ++i) mask[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
  check_gradients(
      [&](const std::vector<VarD>& v) {
        return weighted_sum(ad::masked_mean_pool(v[0], mask, 1e-6));
      },
      {rand_tensor({3, 4, 5}, 35)});
}

TEST_CASE("gradcheck cosine_map both operands") {
  check_gradients(
      [](const std::vector<VarD>& v) {
        return weighted_sum(ad::cosine_map(v[0], v[1], 1e-8));
      },
      {rand_tensor({4, 1, 1}, 36, 0.2, 1.0), rand_tensor({4, 3, 3}, 37, 0.2, 1.0)},
      1e-5);
}

TEST_CASE("cosine_map handles a zero query vector without NaN") {
  auto q = Tensor<double>::zeros({3, 2, 2});
  q(0, 0, 0) = 1.0;  // one nonzero pixel; the rest are exactly zero
  const auto p = rand_tensor({3, 1, 1}, 38, 0.5, 1.0);
  auto out = ad::cosine_map(ad::constant(p), ad::constant(q), 1e-8);
  CHECK(all_finite(out->value));
  CHECK(out->value(0, 1, 1) == 0.0);
}

TEST_CASE("gradcheck channel_softmax and aggregate_prototypes") {
  check_gradients(
      [](const std::vector<VarD>& v) {
        return weighted_sum(ad::channel_softmax(v[0]));
      },
      {rand_tensor({4, 3, 3}, 39)}, 1e-5);
  check_gradients(
      [](const std::vector<VarD>& v) {
        std::vector<VarD> protos{v[0], v[1], v[2]};
        return weighted_sum(ad::aggregate_prototypes(protos, v[3]));
      },
      {rand_tensor({3, 1, 1}, 40), rand_tensor({3, 1, 1}, 41), rand_tensor({3, 1, 1}, 42),
       rand_tensor({3, 2, 2}, 43)});
}

TEST_CASE("gradcheck masked cross entropies") {
  Tensor<uint8_t> labels({3, 4});
  Rng rng(44);
  for (long i = 0; i < labels.numel(); ++i) {
    const double u = rng.uniform01();
    labels[i] = u < 0.15 ? 255 : (u < 0.55 ? 1 : 0);
  }
  check_gradients(
      [&](const std::vector<VarD>& v) { return ad::masked_cross_entropy(v[0], labels); },
      {rand_tensor({2, 3, 4}, 45)}, 1e-5);

  Tensor<uint8_t> multi({3, 4});
  for (long i = 0; i < multi.numel(); ++i) {
    const double u = rng.uniform01();
    multi[i] = u < 0.1 ? 255 : static_cast<uint8_t>(rng.uniform_u64(5));
  }
  check_gradients(
      [&](const std::vector<VarD>& v) {
        return ad::masked_cross_entropy_multi(v[0], multi);
      },
      {rand_tensor({5, 3, 4}, 46)}, 1e-5);
}

TEST_CASE("masked_cross_entropy closed forms") {
  // zero logits: -log(0.5) per pixel
  Tensor<uint8_t> labels({4, 4});
  Rng rng(47);
  for (long i = 0; i < labels.numel(); ++i) labels[i] = rng.bernoulli(0.5) ? 1 : 0;
  auto zero = ad::constant(Tensor<double>::zeros({2, 4, 4}));
  CHECK(ad::masked_cross_entropy(zero, labels)->value[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  // saturated-correct logits drive the loss below 1e-8
  Tensor<double> sat({2, 4, 4});
  for (long i = 0; i < 16; ++i) {
    sat[i] = labels[i] == 1 ? 50.0 : -50.0;
    sat[16 + i] = labels[i] == 1 ? -50.0 : 50.0;
  }
  CHECK(ad::masked_cross_entropy(ad::constant(sat), labels)->value[0] < 1e-8);

  // entirely-ignore ground truth is an error
  Tensor<uint8_t> all_ignore = Tensor<uint8_t>::full({2, 2}, 255);
  CHECK_THROWS_AS(ad::masked_cross_entropy(ad::constant(Tensor<double>::zeros({2, 2, 2})),
                                           all_ignore),
                  std::invalid_argument);
}

TEST_CASE("channel_softmax values and shift invariance") {
  Tensor<double> s({4, 1, 1});
  SUBCASE("equal scores give uniform weights") {
    s.fill(0.37);
    auto out = ad::channel_softmax(ad::constant(s));
    for (int o = 0; o < 4; ++o) CHECK(out->value[o] == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("closed-form softmax of (1,-1,-1,-1)") {
    s[0] = 1; s[1] = -1; s[2] = -1; s[3] = -1;
    auto out = ad::channel_softmax(ad::constant(s));
    const double expect = std::exp(1.0) / (std::exp(1.0) + 3 * std::exp(-1.0));
    CHECK(out->value[0] == doctest::Approx(expect).epsilon(1e-9));
    CHECK(out->value[0] == doctest::Approx(0.711235).epsilon(1e-4));
    const double rest = (1.0 - out->value[0]) / 3.0;
    for (int o = 1; o < 4; ++o)
      CHECK(out->value[o] == doctest::Approx(rest).epsilon(1e-9));
  }
  SUBCASE("adding a constant leaves weights unchanged") {
    s[0] = 0.3; s[1] = -0.2; s[2] = 0.9; s[3] = -0.6;
    auto a = ad::channel_softmax(ad::constant(s));
    Tensor<double> shifted = s;
    for (long i = 0; i < 4; ++i) shifted[i] += 0.77;
    auto b = ad::channel_softmax(ad::constant(shifted));
    CHECK(max_abs_diff(a->value, b->value) < 1e-7);
  }
}

TEST_CASE("backward accumulates through shared subgraphs") {
  // f(x) = sum(x*x) used twice; gradient must double.
  auto x = rand_tensor({2, 2}, 48);
  auto leaf = ad::leaf(x);
  auto sq = ad::mul(leaf, leaf);
  auto loss = ad::add(ad::sum_all(sq), ad::sum_all(sq));
  ad::backward(loss);
  for (long i = 0; i < x.numel(); ++i)
    CHECK(leaf->grad[i] == doctest::Approx(4.0 * x[i]).epsilon(1e-12));
}
