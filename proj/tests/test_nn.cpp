#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "xscene/nn/checkpoint.hpp"
#include "xscene/nn/gradcheck.hpp"
#include "xscene/nn/layers.hpp"
#include "xscene/nn/loss.hpp"
#include "xscene/nn/optimizer.hpp"
#include "xscene/nn/tensor.hpp"

using namespace xscene;
using namespace xscene::nn;
using testing_support::TempDir;

namespace {

// Direct convolution with zero padding of k/2, NHWC input, [k,k,in,out] weights.
Tensor reference_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  const std::size_t k = w.dim(0), co = w.dim(3);
  const auto pad = static_cast<long>(k / 2);
  Tensor y({n, h / stride, wd / stride, co});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t oy = 0; oy < h / stride; ++oy)
      for (std::size_t ox = 0; ox < wd / stride; ++ox)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = b[o];
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - pad, ix = static_cast<long>(ox * stride + kx) - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              for (std::size_t i = 0; i < ci; ++i)
                acc += w[((ky * k + kx) * ci + i) * co + o] * x[((s * h + iy) * wd + ix) * ci + i];
            }
          y[((s * (h / stride) + oy) * (wd / stride) + ox) * co + o] = acc;
        }
  return y;
}

void expect_tensors_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol * std::max(1.0, std::abs(b[i])));
}

template <class L>
void expect_gradients(L& layer, const Shape& in_shape, std::uint64_t seeds) {
  for (std::uint64_t s = 1; s <= seeds; ++s) {
    std::mt19937_64 rng(s);
    if constexpr (requires { layer.init(rng); }) layer.init(rng);
    const auto report = check_layer(layer, random_tensor(in_shape, rng), rng);
    EXPECT_TRUE(report.passed(1e-4)) << "seed " << s << " worst " << report.worst();
  }
}

}  // namespace

TEST(Tensor, ShapeMismatchNamesBothShapes) {
  try {
    Tensor({2, 3}, std::vector<double>(5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos) << e.what();
  }
  try {
    require_shape(Tensor({2, 3}), {3, 2}, "probe");
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected"), std::string::npos);
    EXPECT_EQ(e.kind(), ErrorKind::input);
  }
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.dim(0), 3u);
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), t.storage());
  EXPECT_THROW(std::move(t).reshaped({4, 2}), Error);
}

TEST(Conv2d, OnesKernelCountsNeighbors) {
  Conv2d c(1, 1, 3, 1);
  std::fill(c.weight.value.storage().begin(), c.weight.value.storage().end(), 1.0);
  const Tensor y = c.forward(Tensor({1, 4, 4, 1}, 1.0));
  EXPECT_EQ(y[0], 4.0);       // corner
  EXPECT_EQ(y[1], 6.0);       // edge
  EXPECT_EQ(y[4 + 1], 9.0);   // interior
}

TEST(Conv2d, StrideTwoHalvesAndMatchesReference) {
  for (std::size_t stride : {1u, 2u}) {
    std::mt19937_64 rng(stride);
    Conv2d c(3, 5, 3, stride);
    c.init(rng);
    for (auto& v : c.bias.value.storage()) v = 0.1;
    const Tensor x = random_tensor({2, 8, 6, 3}, rng);
    const Tensor y = c.forward(x);
    EXPECT_EQ(y.shape(), (Shape{2, 8 / stride, 6 / stride, 5}));
    expect_tensors_near(y, reference_conv(x, c.weight.value, c.bias.value, stride), 1e-12);
  }
}

TEST(Conv2d, OddInputRejectedAtStrideTwo) {
  Conv2d c(1, 1, 3, 2);
  EXPECT_THROW(c.forward(Tensor({1, 5, 4, 1})), Error);
  EXPECT_THROW(c.forward(Tensor({1, 4, 4, 2})), Error);
}

TEST(Dense, MatchesHandProduct) {
  Dense d(2, 2);
  d.weight.value.storage() = {1, 2, 3, 4};  // [in, out]
  d.bias.value.storage() = {0.5, -0.5};
  const Tensor y = d.forward(Tensor({1, 2}, {1, 1}));
  EXPECT_EQ(y[0], 4.5);
  EXPECT_EQ(y[1], 5.5);
  EXPECT_THROW(d.forward(Tensor({1, 3})), Error);
}

TEST(Upsample2x, DuplicatesPixels) {
  Upsample2x up;
  const Tensor y = up.forward(Tensor({1, 1, 2, 1}, {3, 7}));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 4, 1}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{3, 3, 7, 7, 3, 3, 7, 7}));
}

TEST(UpsampleConv2d, EqualsUpsampleThenConvolve) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t ci = 1 + seed % 4, co = 1 + (seed * 3) % 5;
    UpsampleConv2d fused(ci, co, 3);
    fused.init(rng);
    for (auto& v : fused.bias.value.storage()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    Conv2d plain(ci, co, 3, 1);
    plain.weight.value.storage() = fused.weight.value.storage();
    plain.bias.value.storage() = fused.bias.value.storage();
    Upsample2x up;
    const Tensor x = random_tensor({2, 3 + seed % 3, 4, ci}, rng);
    const Tensor y = fused.forward(x);
    const Tensor ref = plain.forward(up.forward(x));
    expect_tensors_near(y, ref, 1e-12);

    const Tensor g = random_tensor(y.shape(), rng);
    const Tensor dx = fused.backward(g);
    const Tensor dref = up.backward(plain.backward(g));
    expect_tensors_near(dx, dref, 1e-12);
    for (std::size_t i = 0; i < fused.weight.value.size(); ++i)
      EXPECT_NEAR(fused.weight.value.grad()[i], plain.weight.value.grad()[i], 1e-10);
  }
}

TEST(Relu, BackwardBeforeForwardIsUsageError) {
  Relu r;
  try {
    r.backward(Tensor({1, 2}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::usage);
  }
  Conv2d c(1, 1, 3, 1);
  EXPECT_THROW(c.backward(Tensor({1, 2, 2, 1})), Error);
}

TEST(Relu, ForwardBackward) {
  Relu r;
  const Tensor y = r.forward(Tensor({1, 4}, {-1, 0, 2, 3}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 0, 2, 3}));
  const Tensor dx = r.backward(Tensor({1, 4}, {1, 1, 1, 1}));
  EXPECT_EQ(std::vector<double>(dx.data().begin(), dx.data().end()), (std::vector<double>{0, 0, 1, 1}));
}

TEST(GradientCheck, Conv2dStrideOne) {
  Conv2d c(3, 4, 3, 1);
  expect_gradients(c, {2, 5, 5, 3}, 20);
}

TEST(GradientCheck, Conv2dStrideTwo) {
  Conv2d c(2, 3, 3, 2);
  expect_gradients(c, {2, 8, 8, 2}, 20);
}

TEST(GradientCheck, Dense) {
  Dense d(7, 5);
  expect_gradients(d, {3, 7}, 20);
}

TEST(GradientCheck, Upsample) {
  Upsample2x up;
  expect_gradients(up, {2, 3, 3, 2}, 20);
}

TEST(GradientCheck, UpsampleConv) {
  UpsampleConv2d uc(3, 2, 3);
  expect_gradients(uc, {2, 4, 4, 3}, 20);
}

TEST(GradientCheck, ReluAndReshape) {
  Relu r;
  expect_gradients(r, {4, 6}, 20);
  Reshape s({12});
  expect_gradients(s, {2, 2, 3, 2}, 20);
}

TEST(GradientCheck, DetectsAWrongGradient) {
  std::mt19937_64 rng(1);
  Dense d(3, 2);
  d.init(rng);
  std::vector<Probe> probes{{"w", &d.weight.value.storage(), std::vector<double>(6, 0.0)}};
  const Tensor x = random_tensor({1, 3}, rng);
  const auto report = check_probes(probes, [&] { return d.forward(x)[0]; }, {});
  EXPECT_FALSE(report.passed(1e-4));
}

TEST(Loss, ValuesAndGradients) {
  const std::vector<double> p{1, 2, 4}, t{1, 0, 1};
  const auto sq = squared_l2(p, t);
  EXPECT_EQ(sq.value, 13.0);
  EXPECT_EQ(sq.grad, (std::vector<double>{0, 4, 6}));
  const auto n = l2_norm(p, t);
  EXPECT_DOUBLE_EQ(n.value, std::sqrt(13.0));
  EXPECT_DOUBLE_EQ(n.grad[1], 2.0 / std::sqrt(13.0));
  const auto m = mean_squared(p, t);
  EXPECT_DOUBLE_EQ(m.value, 13.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.grad[2], 2.0);
  EXPECT_EQ(l2_norm(t, t).grad, (std::vector<double>{0, 0, 0}));
  EXPECT_THROW(squared_l2(p, std::vector<double>{1}), Error);
}

TEST(Adam, MatchesClosedFormSteps) {
  Parameter p("p", {2});
  p.value.storage() = {1.0, -2.0};
  OptimizerState opt;
  std::vector<Parameter*> params{&p};
  const std::vector<std::vector<double>> grads{{0.5, -1.0}, {0.25, 3.0}};
  std::vector<double> m(2, 0.0), v(2, 0.0), w{1.0, -2.0};
  const auto& c = opt.config;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    std::copy(grads[t - 1].begin(), grads[t - 1].end(), p.value.grad().begin());
    optimizer_step(params, opt);
    for (std::size_t i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      m[i] = c.beta1 * m[i] + (1 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1 - c.beta2) * g * g;
      const double mh = m[i] / (1 - std::pow(c.beta1, t)), vh = v[i] / (1 - std::pow(c.beta2, t));
      w[i] -= c.learning_rate * mh / (std::sqrt(vh) + c.epsilon);
      EXPECT_NEAR(p.value[i], w[i], 1e-15);
    }
  }
  EXPECT_EQ(opt.first_moment[0].size(), p.value.size());
}

TEST(Adam, ParameterListChangeIsRejected) {
  Parameter a("a", {1}), b("b", {1});
  OptimizerState opt;
  std::vector<Parameter*> one{&a}, two{&a, &b};
  optimizer_step(one, opt);
  EXPECT_THROW(optimizer_step(two, opt), Error);
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir("ckpt");
  std::mt19937_64 rng(4);
  const Tensor a = random_tensor({2, 3}, rng), b = random_tensor({4}, rng);
  write_checkpoint(dir.str("m.ckpt"), {{"kind", "test"}}, {{"a", &a}, {"b", &b}});
  const auto ck = read_checkpoint(dir.str("m.ckpt"));
  EXPECT_EQ(ck.architecture.at("kind"), "test");
  EXPECT_EQ(ck.tensors.at("a"), a);
  EXPECT_EQ(ck.tensors.at("b"), b);
  EXPECT_EQ(ck.order, (std::vector<std::string>{"a", "b"}));
}

TEST(Sequential, ForwardBackwardThroughStack) {
  std::mt19937_64 rng(2);
  Sequential s;
  s.add(Conv2d(2, 3, 3, 2)).add(Relu{}).add(Reshape({2 * 2 * 3})).add(Dense(12, 2));
  s.init(rng);
  const Tensor x = random_tensor({3, 4, 4, 2}, rng);
  EXPECT_EQ(s.output_shape(x.shape()), (Shape{3, 2}));
  const Tensor y = s.forward(x);
  const Tensor dx = s.backward(Tensor(y.shape(), 1.0));
  EXPECT_EQ(dx.shape(), x.shape());
  EXPECT_EQ(s.parameters().size(), 4u);
}
