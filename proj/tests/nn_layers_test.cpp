// Finite-difference checks of every layer's backward pass, in double
// precision, plus a few forward-shape identities.

#include <gtest/gtest.h>

#include <random>

#include "equine/nn/adam.hpp"
#include "equine/nn/layers.hpp"
#include "equine/nn/loss.hpp"

namespace equine::nn {
namespace {

using T = Tensor<double>;

T random_tensor(const Shape& s, std::mt19937_64& rng) {
  T t(s);
  fill_normal(t.data(), 1.0, rng);
  return t;
}

// L(x, params) = sum(weights .* layer(x)). Compares analytic gradients with
// central differences for every input entry and every learnable parameter.
void check_gradients(Layer<double>& layer, const Shape& in_shape, std::uint64_t seed,
                     double tol = 1e-6) {
  std::mt19937_64 rng(seed);
  initialize(layer, rng);
  for (auto* p : layer.parameters()) {
    if (p->learnable) fill_normal(p->value, 0.5, rng);
  }
  T x = random_tensor(in_shape, rng);
  const Shape out_shape = layer.output_shape(in_shape);
  T weights = random_tensor(out_shape, rng);

  auto loss = [&](const T& input) {
    return (layer.forward(input, nullptr).data().array() * weights.data().array()).sum();
  };

  Context<double> ctx;
  T y = layer.forward(x, &ctx);
  ASSERT_EQ(y.shape(), out_shape);
  auto params = layer.parameters();
  auto grads = zero_gradients(params);
  T dx = layer.backward(weights, ctx, grads);
  ASSERT_EQ(dx.shape(), in_shape);

  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.data().size(); ++i) {
    T xp = x, xm = x;
    xp.data().data()[i] += h;
    xm.data().data()[i] -= h;
    const double numeric = (loss(xp) - loss(xm)) / (2 * h);
    EXPECT_NEAR(dx.data().data()[i], numeric, tol * std::max(1.0, std::abs(numeric)))
        << layer.name() << " input " << i;
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->learnable) continue;
    auto& value = params[k]->value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + h;
      const double lp = loss(x);
      value.data()[i] = saved - h;
      const double lm = loss(x);
      value.data()[i] = saved;
      const double numeric = (lp - lm) / (2 * h);
      EXPECT_NEAR(grads[k].data()[i], numeric, tol * std::max(1.0, std::abs(numeric)))
          << params[k]->name << " entry " << i;
    }
  }
}

TEST(NnLayers, ConvGradientsSamePadding) {
  Conv2d<double> conv("c", {.in_channels = 3, .out_channels = 4, .kernel = 3, .stride = 1,
                            .padding = Padding::uniform(1)});
  check_gradients(conv, {3, 5, 6}, 1);
}

TEST(NnLayers, ConvGradientsStridedAsymmetricPadding) {
  Conv2d<double> conv("c", {.in_channels = 2, .out_channels = 3, .kernel = 3, .stride = 2,
                            .padding = {0, 1, 1, 0}, .bias = false});
  check_gradients(conv, {2, 7, 6}, 2);
}

TEST(NnLayers, PointwiseConvGradients) {
  Conv2d<double> conv("c", {.in_channels = 5, .out_channels = 2, .kernel = 1});
  check_gradients(conv, {5, 3, 4}, 3);
}

TEST(NnLayers, DepthwiseGradients) {
  DepthwiseConv2d<double> dw("dw", 3, 3, 2, Padding::same(7, 5, 3, 2));
  check_gradients(dw, {3, 7, 5}, 4);
}

TEST(NnLayers, DenseGradientsOverColumns) {
  Dense<double> dense("d", 6, 3);
  check_gradients(dense, {6, 1, 4}, 5);
}

TEST(NnLayers, BatchNormGradients) {
  BatchNorm<double> bn("bn", 3);
  bn.moving_mean().value << 0.3, -0.2, 0.1;
  bn.moving_variance().value << 2.0, 0.5, 1.5;
  check_gradients(bn, {3, 4, 4}, 6);
}

TEST(NnLayers, MaxPoolGradients) {
  MaxPool2d<double> pool("p", 2, 2);
  check_gradients(pool, {2, 6, 5}, 7);
  MaxPool2d<double> same("s", 3, 2, Padding::same(7, 7, 3, 2));
  check_gradients(same, {2, 7, 7}, 8);
  MaxPool2d<double> zero("z", 3, 2, Padding::uniform(1), true);
  check_gradients(zero, {2, 6, 6}, 9);
}

TEST(NnLayers, ResidualAndSequentialGradients) {
  Sequential<double> branch("branch");
  branch.emplace<BatchNorm<double>>("bn", 4);
  branch.emplace<Relu<double>>("relu");
  branch.emplace<Conv2d<double>>("conv", Conv2d<double>::Options{4, 4, 3, 1, Padding::uniform(1)});
  Sequential<double> shortcut("short");
  shortcut.emplace<Conv2d<double>>("proj", Conv2d<double>::Options{4, 4, 1, 1, {}, false});
  Residual<double> res("res", std::move(branch), std::move(shortcut));
  check_gradients(res, {4, 4, 5}, 10);

  Residual<double> identity("id", Sequential<double>("b"));
  identity.branch().emplace<Conv2d<double>>("c", Conv2d<double>::Options{2, 2, 3, 1, Padding::uniform(1)});
  check_gradients(identity, {2, 3, 3}, 11);
}

TEST(NnLayers, FlattenIsHeightWidthChannelOrder) {
  Flatten<double> flat("f");
  T x({2, 2, 3});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 2; ++y)
      for (int xx = 0; xx < 3; ++xx) x(c, y, xx) = c + 10 * (y * 3 + xx);
  T f = flat.forward(x, nullptr);
  ASSERT_EQ(f.shape(), (Shape{12, 1, 1}));
  EXPECT_EQ(f.data()(0), 0);
  EXPECT_EQ(f.data()(1), 1);
  EXPECT_EQ(f.data()(2), 10);
  Sequential<double> seq;
  seq.emplace<Flatten<double>>("f");
  seq.emplace<Dense<double>>("d", 12, 2);
  check_gradients(seq, {2, 2, 3}, 12);
}

TEST(NnLayers, SamePaddingMatchesCeilDivision) {
  for (int in : {5, 9, 36, 72, 150}) {
    for (int stride : {1, 2}) {
      auto p = Padding::same(in, in, 3, stride);
      MaxPool2d<float> pool("p", 3, stride, p);
      auto out = pool.output_shape({1, in, in});
      EXPECT_EQ(out.height, (in + stride - 1) / stride);
    }
  }
}

TEST(NnLayers, SoftmaxCrossEntropyGradient) {
  Matrix<double> logits(4, 1);
  logits << 0.3, -1.2, 2.0, 0.5;
  auto lg = softmax_cross_entropy(logits, 2);
  const double h = 1e-6;
  for (int i = 0; i < 4; ++i) {
    auto lp = logits, lm = logits;
    lp(i) += h;
    lm(i) -= h;
    double numeric = (softmax_cross_entropy(lp, 2).loss - softmax_cross_entropy(lm, 2).loss) / (2 * h);
    EXPECT_NEAR(lg.grad(i), numeric, 1e-7);
  }
}

TEST(NnLayers, AdamSkipsNonLearnableAndDescends) {
  Parameter<double> w{"w", Matrix<double>::Constant(1, 1, 3.0)};
  Parameter<double> stat{"s", Matrix<double>::Constant(1, 1, 1.0), false};
  Adam<double> adam({&w, &stat}, {.learning_rate = 0.1});
  for (int i = 0; i < 200; ++i) {
    std::vector<Matrix<double>> g{Matrix<double>::Constant(1, 1, 2 * w.value(0)),
                                  Matrix<double>::Constant(1, 1, 5.0)};
    adam.step(g);
  }
  EXPECT_NEAR(w.value(0), 0.0, 0.05);
  EXPECT_EQ(stat.value(0), 1.0);
}

}  // namespace
}  // namespace equine::nn
