#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "cyclead/ops.hpp"
#include "oracles.hpp"

using namespace cyclead;
namespace O = cyclead::ops;

namespace {

Tensor<double> rand_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

using Fn = std::function<Var<double>(const std::vector<Var<double>>&)>;

// Scalar probe L = mean((f(inputs) + 0.37)^2); compares every input gradient
// entry with central differences.
void expect_gradients(const Fn& f, std::vector<Tensor<double>> values, double tol = 1e-6) {
  auto probe = [&](const std::vector<Var<double>>& in) { return O::mean(O::square(O::add_scalar(f(in), 0.37))); };
  std::vector<Var<double>> vars;
  for (auto& v : values) vars.push_back(Var<double>::parameter(v));
  probe(vars).backward();
  const double h = 1e-6;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    for (std::size_t i = 0; i < values[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var<double>> in;
        for (std::size_t m = 0; m < values.size(); ++m) {
          Tensor<double> t = values[m];
          if (m == k) t[i] += delta;
          in.push_back(Var<double>::constant(t));
        }
        return probe(in).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double analytic = vars[k].has_grad() ? vars[k].grad()[i] : 0.0;
      ASSERT_NEAR(analytic, numeric, tol * std::max(1.0, std::abs(numeric))) << "input " << k << " index " << i;
    }
  }
}

}  // namespace

TEST(Tensor, ShapeAndSlicing) {
  Tensor<float> t(Shape{3, 2, 2, 2});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i);
  EXPECT_EQ(t.shape().sample_size(), 8u);
  const auto s = t.slice(1, 2);
  EXPECT_EQ(s.shape(), (Shape{2, 2, 2, 2}));
  EXPECT_EQ(s[0], 8.0f);
  EXPECT_EQ(t.at(2, 1, 1, 0), 22.0f);
  const std::vector<Tensor<float>> parts{t.slice(0, 1), t.slice(1, 2)};
  EXPECT_EQ(concat_batch<float>(parts), t);
  EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
  EXPECT_THROW(t.item(), ShapeError);
}

TEST(Autograd, SharedInputAccumulates) {
  auto x = Var<double>::parameter(Tensor<double>::scalar(3.0));
  // L = mean(x*x) written as square plus a second use through add
  auto y = O::add(O::square(x), O::scale(x, 2.0));
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 3.0 + 2.0);
}

TEST(Autograd, ConstantsRecordNoGraph) {
  auto a = Var<double>::constant(Tensor<double>::scalar(1.0));
  auto b = O::square(a);
  EXPECT_FALSE(b.requires_grad());
  EXPECT_TRUE(b.node()->inputs.empty());
}

TEST(Autograd, BackwardNeedsScalar) {
  auto a = Var<double>::parameter(Tensor<double>(Shape{1, 1, 2, 2}, 1.0));
  EXPECT_THROW(O::square(a).backward(), ShapeError);
}

TEST(Conv2d, MatchesNaiveOracle) {
  std::mt19937_64 rng(1);
  struct Case {
    Shape x;
    int cout, k, stride, pad;
  };
  const Case cases[] = {{{2, 3, 9, 9}, 4, 3, 1, 1}, {{1, 2, 10, 10}, 5, 3, 2, 1}, {{1, 4, 12, 12}, 3, 7, 1, 0},
                        {{2, 3, 8, 8}, 6, 4, 2, 1}, {{1, 1, 5, 7}, 2, 1, 1, 0},  {{1, 8, 20, 20}, 3, 7, 1, 0}};
  for (const auto& c : cases) {
    const auto x = rand_tensor(c.x, rng);
    const auto w = rand_tensor(Shape{c.cout, c.x.c, c.k, c.k}, rng);
    const auto b = rand_tensor(Shape{1, c.cout, 1, 1}, rng);
    const auto want = oracle::conv2d(x, w, &b, c.stride, c.pad);
    const auto got = O::conv2d(Var<double>::constant(x), Var<double>::constant(w), Var<double>::constant(b),
                               O::ConvGeometry{c.k, c.stride, c.pad})
                         .value();
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-10);
    // single precision path
    const auto gotf = O::conv2d(Var<float>::constant(x.cast<float>()), Var<float>::constant(w.cast<float>()),
                                Var<float>::constant(b.cast<float>()), O::ConvGeometry{c.k, c.stride, c.pad})
                          .value();
    for (std::size_t i = 0; i < gotf.size(); ++i) ASSERT_NEAR(gotf[i], want[i], 1e-4);
  }
}

TEST(Conv2d, Gradients) {
  std::mt19937_64 rng(2);
  for (auto g : {O::ConvGeometry{3, 1, 1}, O::ConvGeometry{3, 2, 1}, O::ConvGeometry{4, 2, 1}, O::ConvGeometry{5, 1, 0}}) {
    expect_gradients([g](const auto& in) { return O::conv2d(in[0], in[1], in[2], g); },
                     {rand_tensor({2, 2, 7, 7}, rng), rand_tensor({3, 2, g.kernel, g.kernel}, rng),
                      rand_tensor({1, 3, 1, 1}, rng)});
  }
}

TEST(Conv2d, RejectsBadShapes) {
  auto x = Var<double>::constant(Tensor<double>(Shape{1, 2, 5, 5}));
  auto w = Var<double>::constant(Tensor<double>(Shape{1, 3, 3, 3}));
  EXPECT_THROW(O::conv2d(x, w, Var<double>(), O::ConvGeometry{3, 1, 0}), ShapeError);
  auto w2 = Var<double>::constant(Tensor<double>(Shape{1, 2, 7, 7}));
  EXPECT_THROW(O::conv2d(x, w2, Var<double>(), O::ConvGeometry{7, 1, 0}), ShapeError);
}

TEST(ConvTranspose2d, MatchesScatterOracle) {
  std::mt19937_64 rng(3);
  const auto x = rand_tensor({2, 4, 5, 5}, rng);
  const auto w = rand_tensor({4, 3, 3, 3}, rng);
  const auto b = rand_tensor({1, 3, 1, 1}, rng);
  const auto want = oracle::conv_transpose2d(x, w, &b, 2, 1, 1);
  const auto got = O::conv_transpose2d(Var<double>::constant(x), Var<double>::constant(w), Var<double>::constant(b),
                                       O::ConvGeometry{3, 2, 1}, 1)
                       .value();
  ASSERT_EQ(got.shape(), (Shape{2, 3, 10, 10}));
  for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-10);
}

TEST(ConvTranspose2d, Gradients) {
  std::mt19937_64 rng(4);
  expect_gradients(
      [](const auto& in) { return O::conv_transpose2d(in[0], in[1], in[2], O::ConvGeometry{3, 2, 1}, 1); },
      {rand_tensor({1, 2, 4, 4}, rng), rand_tensor({2, 3, 3, 3}, rng), rand_tensor({1, 3, 1, 1}, rng)});
}

TEST(ReflectionPad, HandExample) {
  Tensor<double> t(Shape{1, 1, 1, 3}, std::vector<double>{1, 2, 3});
  Tensor<double> sq(Shape{1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto p = O::reflection_pad2d(Var<double>::constant(sq), 1).value();
  ASSERT_EQ(p.shape(), (Shape{1, 1, 5, 5}));
  const std::vector<double> row0{5, 4, 5, 6, 5};
  const std::vector<double> row1{2, 1, 2, 3, 2};
  for (int j = 0; j < 5; ++j) {
    EXPECT_EQ(p.at(0, 0, 0, j), row0[j]);
    EXPECT_EQ(p.at(0, 0, 1, j), row1[j]);
    EXPECT_EQ(p.at(0, 0, 4, j), row0[j]);
  }
  EXPECT_THROW(O::reflection_pad2d(Var<double>::constant(sq), 3), ShapeError);
}

TEST(ReflectionPad, Gradients) {
  std::mt19937_64 rng(5);
  expect_gradients([](const auto& in) { return O::reflection_pad2d(in[0], 2); }, {rand_tensor({1, 2, 4, 5}, rng)});
}

TEST(Upsample, NearestAndGradient) {
  Tensor<double> t(Shape{1, 1, 1, 2}, std::vector<double>{1, 2});
  const auto u = O::upsample_nearest2x(Var<double>::constant(t)).value();
  EXPECT_EQ(u.to_vector(), (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2}));
  std::mt19937_64 rng(6);
  expect_gradients([](const auto& in) { return O::upsample_nearest2x(in[0]); }, {rand_tensor({1, 2, 3, 3}, rng)});
}

TEST(InstanceNorm, ZeroMeanUnitVariancePerSampleChannel) {
  std::mt19937_64 rng(7);
  const auto x = rand_tensor({3, 4, 6, 5}, rng, -3, 5);
  const auto y = O::instance_norm(Var<double>::constant(x), 0.0).value();
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 4; ++c) {
      double m = 0, v = 0;
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 5; ++j) m += y.at(n, c, i, j);
      m /= 30;
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 5; ++j) v += (y.at(n, c, i, j) - m) * (y.at(n, c, i, j) - m);
      EXPECT_NEAR(m, 0.0, 1e-12);
      EXPECT_NEAR(v / 30, 1.0, 1e-9);
    }
}

TEST(InstanceNorm, Gradients) {
  std::mt19937_64 rng(8);
  expect_gradients([](const auto& in) { return O::instance_norm(in[0]); }, {rand_tensor({2, 2, 3, 4}, rng)}, 1e-5);
}

TEST(Elementwise, Gradients) {
  std::mt19937_64 rng(9);
  const Shape s{1, 2, 3, 3};
  expect_gradients([](const auto& in) { return O::relu(in[0]); }, {rand_tensor(s, rng)});
  expect_gradients([](const auto& in) { return O::leaky_relu(in[0], 0.2); }, {rand_tensor(s, rng)});
  expect_gradients([](const auto& in) { return O::tanh(in[0]); }, {rand_tensor(s, rng)});
  expect_gradients([](const auto& in) { return O::sigmoid(in[0]); }, {rand_tensor(s, rng)});
  expect_gradients([](const auto& in) { return O::add(in[0], in[1]); }, {rand_tensor(s, rng), rand_tensor(s, rng)});
  expect_gradients([](const auto& in) { return O::sub(in[0], in[1]); }, {rand_tensor(s, rng), rand_tensor(s, rng)});
  expect_gradients([](const auto& in) { return O::scale(in[0], -1.7); }, {rand_tensor(s, rng)});
  expect_gradients([](const auto& in) { return O::abs(in[0]); }, {rand_tensor(s, rng)});
  expect_gradients([](const auto& in) { return O::square(in[0]); }, {rand_tensor(s, rng)});
  expect_gradients([](const auto& in) { return O::clamped_log(in[0], 1e-7); }, {rand_tensor(s, rng, 0.05, 0.95)});
}

TEST(Elementwise, Values) {
  Tensor<double> t(Shape{1, 1, 1, 4}, std::vector<double>{-2, -0.5, 0, 3});
  const auto v = Var<double>::constant(t);
  EXPECT_EQ(O::relu(v).value().to_vector(), (std::vector<double>{0, 0, 0, 3}));
  EXPECT_EQ(O::leaky_relu(v, 0.2).value().to_vector(), (std::vector<double>{-0.4, -0.1, 0, 3}));
  EXPECT_DOUBLE_EQ(O::mean(v).item(), 0.125);
  EXPECT_DOUBLE_EQ(O::sigmoid(v).value()[2], 0.5);
  Tensor<double> p(Shape{1, 1, 1, 3}, std::vector<double>{0.0, 1.0, 0.5});
  const auto l = O::clamped_log(Var<double>::constant(p), 1e-7).value();
  EXPECT_NEAR(l[0], std::log(1e-7), 1e-12);
  EXPECT_NEAR(l[1], std::log(1 - 1e-7), 1e-12);
  EXPECT_TRUE(std::isfinite(l[0]));
}

TEST(Elementwise, ShapeMismatch) {
  auto a = Var<double>::constant(Tensor<double>(Shape{1, 1, 2, 2}));
  auto b = Var<double>::constant(Tensor<double>(Shape{1, 1, 2, 3}));
  EXPECT_THROW(O::add(a, b), ShapeError);
  EXPECT_THROW(O::sub(a, b), ShapeError);
}

TEST(BranchTrace, RecordsPiecewiseOpsOnly) {
  Tensor<double> t(Shape{1, 1, 1, 4}, std::vector<double>{-2, -0.5, 0, 3});
  const auto v = Var<double>::constant(t);
  O::relu(v);  // no trace installed
  std::vector<std::int8_t> codes;
  {
    O::BranchTrace trace;
    O::tanh(v);
    O::relu(v);
    O::abs(O::scale(v, -1.0));
    O::clamped_log(O::scale(v, 0.5), 0.1);
    codes = trace.codes;
    EXPECT_THROW(O::BranchTrace{}, std::logic_error);
  }
  EXPECT_EQ(codes, (std::vector<std::int8_t>{-1, -1, 0, 1, 1, 1, 0, -1, -1, -1, -1, 1}));
  O::BranchTrace again;  // usable after the previous one is gone
  O::abs(v);
  EXPECT_EQ(again.codes.size(), 4u);
}
