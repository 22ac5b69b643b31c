#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cyclead/model.hpp"

using namespace cyclead;

namespace {

// Hand count of conv weights + biases for the layer stacks described in model.hpp.
std::size_t conv_params(int cin, int cout, int k) { return static_cast<std::size_t>(cin) * cout * k * k + cout; }

std::size_t expected_generator_params(int c, int w, int blocks) {
  return conv_params(c, w, 7) + conv_params(w, 2 * w, 3) + conv_params(2 * w, 4 * w, 3) +
         blocks * 2 * conv_params(4 * w, 4 * w, 3) + conv_params(4 * w, 2 * w, 3) + conv_params(2 * w, w, 3) +
         conv_params(w, c, 7);
}

Tensor<float> random_batch(int n, int c, int s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1, 1);
  Tensor<float> t(Shape{n, c, s, s});
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

GeneratorSpec small_generator(int res = 32) {
  GeneratorSpec g;
  g.resolution = res;
  g.base_width = 8;
  g.n_residual_blocks = 2;
  return g;
}

}  // namespace

TEST(ReceptiveField, DefaultIs70) {
  EXPECT_EQ(receptive_field(DiscriminatorSpec{}), 70);
}

TEST(ReceptiveField, SingleLayer) {
  const std::vector<ops::ConvGeometry> one{{4, 2, 1}};
  EXPECT_EQ(receptive_field(one), 4);
}

TEST(ReceptiveField, RecurrenceSteps) {
  const std::vector<ops::ConvGeometry> layers{{4, 2, 1}, {4, 2, 1}, {4, 2, 1}, {4, 1, 1}, {4, 1, 1}};
  const int expected[] = {4, 10, 22, 46, 70};
  for (std::size_t n = 1; n <= layers.size(); ++n) {
    EXPECT_EQ(receptive_field(std::span(layers.data(), n)), expected[n - 1]);
  }
  const auto geo = DiscriminatorSpec{}.layers();
  ASSERT_EQ(geo.size(), layers.size());
  for (std::size_t i = 0; i < geo.size(); ++i) {
    EXPECT_EQ(geo[i].kernel, layers[i].kernel);
    EXPECT_EQ(geo[i].stride, layers[i].stride);
    EXPECT_EQ(geo[i].padding, layers[i].padding);
  }
}

// Gradient support of one interior output unit through a norm-free conv
// stack with the discriminator's geometry.
TEST(ReceptiveField, EmpiricalSupportMatches) {
  const auto geo = DiscriminatorSpec{}.layers();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  auto input = Var<double>::parameter(Tensor<double>(Shape{1, 1, 160, 160}, 1.0));
  Var<double> h = input;
  for (const auto& g : geo) {
    Tensor<double> w(Shape{1, 1, g.kernel, g.kernel});
    for (auto& v : w.storage()) v = u(rng);  // positive weights: no cancellation
    h = ops::conv2d(h, Var<double>::constant(w), Var<double>(), g);
  }
  const int side = h.shape().h;
  const int c = side / 2;
  Tensor<double> pick(h.shape());
  pick.at(0, 0, c, c) = 1.0;
  // d(sum(pick * h)) / d input, via mean of a masked product
  auto masked = ops::mean(ops::sub(ops::square(ops::add(h, Var<double>::constant(pick))), ops::square(h)));
  masked.backward();
  int rmin = 1 << 30, rmax = -1;
  for (int i = 0; i < 160; ++i)
    for (int j = 0; j < 160; ++j)
      if (input.grad().at(0, 0, i, j) != 0.0) {
        rmin = std::min(rmin, i);
        rmax = std::max(rmax, i);
      }
  EXPECT_EQ(rmax - rmin + 1, 70);
}

TEST(Discriminator, PatchMapAt256) {
  EXPECT_EQ(patch_map_size(DiscriminatorSpec{}, 256), 30);
  Discriminator<float> d(DiscriminatorSpec{}, 1);
  const auto out = d.forward(Var<float>::constant(random_batch(1, 3, 256, 2)));
  EXPECT_EQ(out.shape(), (Shape{1, 1, 30, 30}));
}

TEST(Discriminator, SeededInitAndCounts) {
  Discriminator<float> a(DiscriminatorSpec{}, 9), b(DiscriminatorSpec{}, 9), c(DiscriminatorSpec{}, 10);
  EXPECT_EQ(a.parameters().flatten(), b.parameters().flatten());
  EXPECT_NE(a.parameters().flatten(), c.parameters().flatten());
  std::size_t want = 0;
  int cin = 3;
  for (int w : {64, 128, 256, 512}) {
    want += conv_params(cin, w, 4);
    cin = w;
  }
  want += conv_params(512, 1, 4);
  EXPECT_EQ(a.parameters().count(), want);
  EXPECT_EQ(a.parameters().count(), 2764737u);
}

TEST(Discriminator, SpecErrors) {
  DiscriminatorSpec bad;
  bad.widths = {64, 64, 128};
  EXPECT_THROW(bad.validate(), SpecError);
  EXPECT_THROW(Discriminator<float>(bad, 0), SpecError);
  Discriminator<float> d(DiscriminatorSpec{}, 0);
  EXPECT_THROW(d.forward(Var<float>::constant(random_batch(1, 1, 64, 0))), ShapeError);
}

TEST(Generator, ParameterCountDefault) {
  Generator<float> g(GeneratorSpec{}, 0);
  EXPECT_EQ(g.parameters().count(), expected_generator_params(3, 64, 9));
  EXPECT_EQ(g.parameters().count(), 11378179u);
}

TEST(Generator, BlocksPerResolution) {
  EXPECT_EQ(GeneratorSpec::for_resolution(256).n_residual_blocks, 9);
  EXPECT_EQ(GeneratorSpec::for_resolution(64).n_residual_blocks, 6);
  EXPECT_EQ(GeneratorSpec::for_resolution(64).resolution, 64);
  EXPECT_EQ(GeneratorSpec::for_resolution(64, 1).in_channels, 1);
}

TEST(Generator, ShapePreservedAt64And256) {
  for (int res : {64, 256}) {
    Generator<float> g(GeneratorSpec::for_resolution(res), 5);
    const auto out = g(random_batch(1, 3, res, 6));
    ASSERT_EQ(out.shape(), (Shape{1, 3, res, res}));
    for (float v : out.storage()) {
      ASSERT_GE(v, -1.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Generator, ShapePreservedAnyMultipleOf4) {
  for (int res : {8, 12, 20, 36}) {
    Generator<float> g(small_generator(res), 1);
    EXPECT_EQ(g(random_batch(2, 3, res, 2)).shape(), (Shape{2, 3, res, res}));
  }
  auto rc = small_generator(16);
  rc.upsampling = Upsampling::resize_conv;
  Generator<float> g(rc, 1);
  EXPECT_EQ(g(random_batch(1, 3, 16, 2)).shape(), (Shape{1, 3, 16, 16}));
}

TEST(Generator, SeededInit) {
  Generator<float> a(small_generator(), 4), b(small_generator(), 4), c(small_generator(), 5);
  EXPECT_EQ(a.parameters().flatten(), b.parameters().flatten());
  EXPECT_NE(a.parameters().flatten(), c.parameters().flatten());
}

TEST(Generator, BatchIndependence) {
  Generator<float> g(GeneratorSpec::for_resolution(64), 2);
  const auto batch = random_batch(4, 3, 64, 11);
  const auto full = g(batch);
  const auto single = g(batch.slice(0, 1));
  for (std::size_t i = 0; i < single.size(); ++i) ASSERT_NEAR(single[i], full[i], 1e-5);
}

TEST(Generator, OutputDependsOnInput) {
  Generator<float> g(small_generator(), 3);
  const auto a = g(random_batch(1, 3, 32, 1));
  const auto b = g(random_batch(1, 3, 32, 2));
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  EXPECT_GT(m, 0.0);
}

TEST(Generator, DifferentiableWrtInput) {
  GeneratorSpec spec;
  spec.resolution = 8;
  spec.base_width = 2;
  spec.n_residual_blocks = 1;
  Generator<double> g(spec, 0);
  auto x = Var<double>::parameter(random_batch(1, 3, 8, 4).cast<double>());
  ops::mean(ops::square(g.forward(x))).backward();
  double norm = 0;
  for (double v : x.grad().storage()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(Generator, SpecErrors) {
  auto s = small_generator(30);
  EXPECT_THROW(s.validate(), SpecError);
  EXPECT_THROW(Generator<float>(s, 0), SpecError);
  auto z = small_generator();
  z.n_residual_blocks = 0;
  EXPECT_THROW(z.validate(), SpecError);
  Generator<float> g(small_generator(), 0);
  EXPECT_THROW(g(random_batch(1, 3, 16, 0)), ShapeError);
  EXPECT_THROW(upsampling_from_string("bilinear"), ConfigError);
}

TEST(ModelPair, SharedSpecsDistinctInit) {
  DiscriminatorSpec d;
  d.widths = {8, 16};
  auto pair = ModelPair<float>::build(small_generator(), d, 7);
  EXPECT_EQ(pair.G.spec(), pair.F.spec());
  EXPECT_EQ(pair.D_X.spec(), pair.D_Y.spec());
  EXPECT_NE(pair.G.parameters().flatten(), pair.F.parameters().flatten());
  EXPECT_NE(pair.D_X.parameters().flatten(), pair.D_Y.parameters().flatten());
  auto again = ModelPair<float>::build(small_generator(), d, 7);
  EXPECT_EQ(pair.G.parameters().flatten(), again.G.parameters().flatten());
  const auto dbl = pair.clone_as<double>();
  EXPECT_EQ(dbl.G.parameters().count(), pair.G.parameters().count());
}
