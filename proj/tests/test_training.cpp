#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "cyclead/container.hpp"
#include "cyclead/synthetic.hpp"
#include "cyclead/training.hpp"
#include "gradcheck.hpp"

using namespace cyclead;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cyclead_test_training_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig toy_config(int epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 1;
  c.checkpoint_every = 1;
  c.seed = 11;
  c.generator.resolution = 8;
  c.generator.base_width = 4;
  c.generator.n_residual_blocks = 1;
  c.discriminator.widths = {4, 8};
  return c;
}

SplitPair toy_split(int n_normal = 4, int n_abnormal = 4) {
  SyntheticSpec s;
  s.resolution = 8;
  s.n_normal = n_normal;
  s.n_abnormal = n_abnormal;
  s.size_fraction = 0.3;
  s.seed = 5;
  const auto set = synthesize_toy_dataset(s);
  return SplitPair{set, set, 0};
}

std::vector<float> all_params(const ModelPair<float>& m) {
  std::vector<float> out;
  for (const auto* p : {&m.G.parameters(), &m.F.parameters(), &m.D_X.parameters(), &m.D_Y.parameters()}) {
    auto f = p->flatten();
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

// ---- learning rate ----

TEST(LrAt, DefaultExamples) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.epochs, 200);
  EXPECT_EQ(cfg.effective_decay_start(), 100);
  EXPECT_DOUBLE_EQ(lr_at(1, cfg), 2e-4);
  EXPECT_DOUBLE_EQ(lr_at(100, cfg), 2e-4);
  EXPECT_NEAR(lr_at(150, cfg), 2e-4 * (1.0 - 50.0 / 101.0), 1e-15);
  EXPECT_NEAR(lr_at(150, cfg), 1e-4, 0.02e-4);
  EXPECT_NEAR(lr_at(200, cfg), 2e-4 / 101.0, 1e-15);
  EXPECT_GT(lr_at(200, cfg), 0.0);
}

TEST(LrAt, MonotoneAndPositive) {
  for (int epochs : {1, 2, 7, 50, 200}) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    double prev = std::numeric_limits<double>::infinity();
    for (int e = 1; e <= epochs; ++e) {
      const double lr = lr_at(e, cfg);
      EXPECT_GT(lr, 0.0);
      EXPECT_LE(lr, prev);
      prev = lr;
    }
  }
}

TEST(LrAt, OutOfRange) {
  const TrainConfig cfg;
  EXPECT_THROW(lr_at(0, cfg), RangeError);
  EXPECT_THROW(lr_at(201, cfg), RangeError);
}

// ---- history buffer ----

TEST(HistoryBuffer, ZeroCapacityPassesThrough) {
  HistoryBuffer buf(0);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto t = Tensor<float>::scalar(static_cast<float>(i));
    EXPECT_EQ(buf.push_sample(t, rng), t);
  }
  EXPECT_EQ(buf.size(), 0u);
}

TEST(HistoryBuffer, FillPhaseReturnsInput) {
  HistoryBuffer buf(50);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto t = Tensor<float>::scalar(static_cast<float>(i));
    EXPECT_EQ(buf.push_sample(t, rng), t);
  }
  EXPECT_EQ(buf.size(), 50u);
}

TEST(HistoryBuffer, HalfRuleAfterFill) {
  HistoryBuffer buf(50);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) buf.push_sample(Tensor<float>::scalar(static_cast<float>(i)), rng);
  int fresh = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const float id = static_cast<float>(50 + i);
    const auto got = buf.push_sample(Tensor<float>::scalar(id), rng);
    if (got.item() == id) ++fresh;
  }
  const double frac = static_cast<double>(fresh) / n;
  EXPECT_GE(frac, 0.45);
  EXPECT_LE(frac, 0.55);
  EXPECT_EQ(buf.size(), 50u);
}

TEST(HistoryBuffer, SwapReturnsStoredImage) {
  HistoryBuffer buf(2);
  std::mt19937_64 rng(4);
  buf.push_sample(Tensor<float>::scalar(1), rng);
  buf.push_sample(Tensor<float>::scalar(2), rng);
  for (int i = 0; i < 50; ++i) {
    const float id = 10.0f + static_cast<float>(i);
    const float got = buf.push_sample(Tensor<float>::scalar(id), rng).item();
    if (got != id) {
      bool found = false;
      for (const auto& t : buf.images()) found = found || t.item() == id;
      EXPECT_TRUE(found);
    }
  }
}

// ---- Adam ----

TEST(Adam, MatchesHandComputation) {
  const double lr = 0.01, b1 = 0.5, b2 = 0.999, eps = 1e-8;
  Adam opt(b1, b2, eps);
  std::vector<Var<float>> group{Var<float>::parameter(Tensor<float>(Shape{1, 1, 1, 3}, std::vector<float>{1, -2, 0.5f}))};
  std::vector<double> w{1, -2, 0.5}, m(3, 0), v(3, 0);
  const double grads[4][3] = {{0.3, -1.0, 2.0}, {0.1, 0.5, -0.2}, {-0.4, 0.0, 1.0}, {1e-3, 2.0, -3.0}};
  for (int t = 1; t <= 4; ++t) {
    for (int i = 0; i < 3; ++i) group[0].grad()[static_cast<std::size_t>(i)] = static_cast<float>(grads[t - 1][i]);
    opt.step(group, lr);
    for (int i = 0; i < 3; ++i) {
      const double g = grads[t - 1][i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
      EXPECT_NEAR(group[0].value()[static_cast<std::size_t>(i)], w[i], 1e-6) << "t=" << t << " i=" << i;
    }
  }
  EXPECT_EQ(opt.state().step, 4);
}

TEST(Adam, SkipsParametersWithoutGradient) {
  Adam opt(0.5, 0.999);
  std::vector<Var<float>> group{Var<float>::parameter(Tensor<float>::scalar(3.0f))};
  opt.step(group, 0.1);
  EXPECT_EQ(group[0].item(), 3.0f);
}

// ---- config ----

TEST(TrainConfig, JsonRoundTrip) {
  auto cfg = toy_config();
  cfg.decay_start = 1;
  cfg.adversarial_mode = AdversarialMode::log;
  cfg.weights = {7.0, 2.0};
  const auto back = train_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_EQ(back.generator, cfg.generator);
  EXPECT_EQ(back.discriminator, cfg.discriminator);
  EXPECT_EQ(back.decay_start, 1);
  auto j = to_json(cfg);
  j["learning_rate"] = 1.0;
  EXPECT_THROW(train_config_from_json(j), ConfigError);
}

TEST(TrainConfig, Validation) {
  auto c = toy_config();
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.lr = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.decay_start = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

// ---- training loop ----

TEST(Train, ToyBookkeeping) {
  const auto dir = fresh_dir("bookkeeping");
  const auto cfg = toy_config(2);
  const auto res = train(cfg, toy_split(), TrainOptions{dir, std::nullopt, {}});
  EXPECT_GE(res.checkpoints.size(), 2u);
  EXPECT_EQ(res.log.size(), 2u * 4u / 1u);
  EXPECT_EQ(res.state.epoch, 2);
  EXPECT_EQ(res.state.iteration, 8);
  EXPECT_TRUE(fs::exists(dir / "ckpt" / "epoch_0001.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "ckpt" / "epoch_0002.ckpt"));
  EXPECT_EQ(count_lines(dir / "log" / "train_log.csv"), 1u + 8u);
  for (const auto& b : res.log) {
    EXPECT_TRUE(std::isfinite(b.total_generator));
    EXPECT_NEAR(b.total_generator, b.adv_G + b.adv_F + 10 * b.cyc + 5 * b.ide, 1e-9);
    EXPECT_NEAR(b.total_discriminator, b.adv_DX + b.adv_DY, 1e-12);
  }
}

TEST(Train, LogLengthIsEpochsTimesSteps) {
  auto cfg = toy_config(3);
  cfg.batch_size = 2;
  cfg.checkpoint_every = 20;
  const auto res = train(cfg, toy_split(3, 5));
  EXPECT_EQ(Trainer::steps_per_epoch(5, 3, 2), 3u);
  EXPECT_EQ(res.log.size(), 3u * 3u);
  EXPECT_TRUE(res.checkpoints.empty());  // no out_dir
}

TEST(Train, CheckpointEveryKAndAtEnd) {
  const auto dir = fresh_dir("every");
  auto cfg = toy_config(5);
  cfg.checkpoint_every = 2;
  const auto res = train(cfg, toy_split(2, 2), TrainOptions{dir, std::nullopt, {}});
  ASSERT_EQ(res.checkpoints.size(), 3u);
  EXPECT_EQ(res.checkpoints.back().filename(), "epoch_0005.ckpt");
}

TEST(Train, DeterministicRepeat) {
  const auto cfg = toy_config(2);
  const auto a = train(cfg, toy_split());
  const auto b = train(cfg, toy_split());
  EXPECT_EQ(all_params(a.state.models), all_params(b.state.models));
  auto other = cfg;
  other.seed = 12;
  EXPECT_NE(all_params(train(other, toy_split()).state.models), all_params(a.state.models));
}

TEST(Train, EmptyClassIsConfigError) {
  SyntheticSpec s;
  s.resolution = 8;
  s.n_normal = 3;
  s.n_abnormal = 1;
  s.size_fraction = 0.3;
  const auto set = synthesize_toy_dataset(s);
  std::vector<LabeledImage> normals;
  for (const auto& i : set.images())
    if (i.label == Label::normal) normals.push_back(i);
  SplitPair sp{LabeledImageSet("n", normals), set, 0};
  EXPECT_THROW(train(toy_config(), sp), ConfigError);
}

TEST(Train, ResolutionMismatchIsShapeError) {
  auto cfg = toy_config();
  cfg.generator.resolution = 12;
  EXPECT_THROW(train(cfg, toy_split()), ShapeError);
}

TEST(Train, DivergenceWritesSnapshot) {
  const auto dir = fresh_dir("diverge");
  auto sp = toy_split(2, 2);
  std::vector<LabeledImage> imgs = sp.train.images();
  for (auto& i : imgs)
    if (i.label == Label::abnormal) i.pixels.pixels[0] = std::numeric_limits<float>::quiet_NaN();
  sp.train = LabeledImageSet("nan", imgs);
  try {
    train(toy_config(), sp, TrainOptions{dir, std::nullopt, {}});
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration, 1);
    EXPECT_EQ(e.epoch, 1);
    EXPECT_FALSE(e.term.empty());
    EXPECT_EQ(e.kind(), ErrorKind::numerical);
  }
  const auto snap = nlohmann::json::parse(std::ifstream(dir / "diverged.json"));
  EXPECT_EQ(snap.at("iteration"), 1);
  EXPECT_TRUE(snap.contains("term"));
}

// ---- checkpoints ----

TEST(Checkpoint, RoundTripBitExact) {
  const auto dir = fresh_dir("roundtrip");
  auto cfg = toy_config(2);
  cfg.buffer_size = 3;
  const auto res = train(cfg, toy_split());
  save_checkpoint(dir / "a.ckpt", res.state);
  const auto loaded = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(all_params(loaded.models), all_params(res.state.models));
  EXPECT_EQ(loaded.epoch, res.state.epoch);
  EXPECT_EQ(loaded.iteration, res.state.iteration);
  EXPECT_EQ(loaded.rng, res.state.rng);
  EXPECT_EQ(loaded.generator_opt.state().step, res.state.generator_opt.state().step);
  EXPECT_EQ(loaded.generator_opt.state().m, res.state.generator_opt.state().m);
  EXPECT_EQ(loaded.discriminator_opt.state().v, res.state.discriminator_opt.state().v);
  EXPECT_EQ(loaded.fake_x_pool.images(), res.state.fake_x_pool.images());
  EXPECT_EQ(loaded.fake_y_pool.images(), res.state.fake_y_pool.images());
  EXPECT_EQ(to_json(loaded.config), to_json(res.state.config));
  const auto G = load_generator(dir / "a.ckpt");
  EXPECT_EQ(G.parameters().flatten(), res.state.models.G.parameters().flatten());
  // re-saving produces identical bytes
  save_checkpoint(dir / "b.ckpt", loaded);
  EXPECT_EQ(sha256_file(dir / "a.ckpt"), sha256_file(dir / "b.ckpt"));
}

TEST(Checkpoint, OneFurtherStepMatches) {
  const auto dir = fresh_dir("onestep");
  const auto cfg = toy_config(1);
  auto res = train(cfg, toy_split());
  save_checkpoint(dir / "s.ckpt", res.state);
  const auto data = domain_data(toy_split().train);
  Trainer reloaded(load_checkpoint(dir / "s.ckpt"));
  Trainer direct(std::move(res.state));
  const auto a = direct.step(data.abnormal[0], data.normal[0], 1e-4);
  const auto b = reloaded.step(data.abnormal[0], data.normal[0], 1e-4);
  EXPECT_EQ(a.total_generator, b.total_generator);
  EXPECT_EQ(all_params(direct.state().models), all_params(reloaded.state().models));
  EXPECT_EQ(direct.state().rng, reloaded.state().rng);
}

TEST(Checkpoint, ResumeIsBitExact) {
  const auto full_dir = fresh_dir("resume_full");
  const auto part_dir = fresh_dir("resume_part");
  auto cfg = toy_config(3);
  cfg.buffer_size = 2;
  const auto full = train(cfg, toy_split(), TrainOptions{full_dir, std::nullopt, {}});
  // copy the run, then resume from epoch 1
  fs::copy(full_dir, part_dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  const auto resumed = train(cfg, toy_split(), TrainOptions{part_dir, part_dir / "ckpt" / "epoch_0001.ckpt", {}});
  EXPECT_EQ(all_params(resumed.state.models), all_params(full.state.models));
  EXPECT_EQ(resumed.state.iteration, full.state.iteration);
  EXPECT_EQ(resumed.log.size(), 8u);
  EXPECT_EQ(count_lines(part_dir / "log" / "train_log.csv"), count_lines(full_dir / "log" / "train_log.csv"));
  EXPECT_EQ(sha256_file(part_dir / "ckpt" / "epoch_0003.ckpt"), sha256_file(full_dir / "ckpt" / "epoch_0003.ckpt"));
}

TEST(Checkpoint, RejectsGarbage) {
  const auto dir = fresh_dir("garbage");
  std::ofstream(dir / "x.ckpt") << "nope";
  EXPECT_THROW(load_checkpoint(dir / "x.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
}

// ---- parameter groups ----

// Replays one trainer step by hand: generator update with frozen
// discriminators, then discriminator update on the pre-update fakes.
TEST(Trainer, StepUpdatesOnlyIntendedGroups) {
  auto cfg = toy_config();
  cfg.buffer_size = 0;
  Trainer t(cfg);
  auto manual = t.state().models.clone_as<float>();
  const auto data = domain_data(toy_split().train);
  const auto& x = data.abnormal[0];
  const auto& y = data.normal[0];
  const double lr = 2e-3;
  t.step(x, y, lr);

  const auto X = Var<float>::constant(x), Y = Var<float>::constant(y);
  manual.D_X.parameters().set_requires_grad(false);
  manual.D_Y.parameters().set_requires_grad(false);
  const auto before_d = manual.D_X.parameters().flatten();
  const auto pass = generator_pass(manual, X, Y, cfg.adversarial_mode, cfg.weights);
  pass.total.backward();
  EXPECT_FALSE(manual.D_X.parameters()[0].has_grad());
  Adam gopt(cfg.beta1, cfg.beta2);
  std::vector<Var<float>> gg;
  for (auto& p : manual.G.parameters().items()) gg.push_back(p.var);
  for (auto& p : manual.F.parameters().items()) gg.push_back(p.var);
  gopt.step(gg, lr);
  EXPECT_EQ(manual.G.parameters().flatten(), t.state().models.G.parameters().flatten());
  EXPECT_EQ(manual.F.parameters().flatten(), t.state().models.F.parameters().flatten());
  EXPECT_EQ(manual.D_X.parameters().flatten(), before_d);
  manual.G.parameters().zero_grad();
  manual.F.parameters().zero_grad();

  manual.G.parameters().set_requires_grad(false);
  manual.F.parameters().set_requires_grad(false);
  manual.D_X.parameters().set_requires_grad(true);
  manual.D_Y.parameters().set_requires_grad(true);
  const auto G_after = manual.G.parameters().flatten();
  const auto mode = cfg.adversarial_mode;
  const auto fy = Var<float>::constant(pass.fake_y.value());
  const auto fx = Var<float>::constant(pass.fake_x.value());
  const auto dy = discriminator_loss(discriminator_scores(manual.D_Y, Y, mode), discriminator_scores(manual.D_Y, fy, mode), mode);
  const auto dx = discriminator_loss(discriminator_scores(manual.D_X, X, mode), discriminator_scores(manual.D_X, fx, mode), mode);
  ops::add(dx, dy).backward();
  EXPECT_FALSE(manual.G.parameters()[0].has_grad());
  Adam dopt(cfg.beta1, cfg.beta2);
  std::vector<Var<float>> dg;
  for (auto& p : manual.D_X.parameters().items()) dg.push_back(p.var);
  for (auto& p : manual.D_Y.parameters().items()) dg.push_back(p.var);
  dopt.step(dg, lr);
  EXPECT_EQ(manual.D_X.parameters().flatten(), t.state().models.D_X.parameters().flatten());
  EXPECT_EQ(manual.D_Y.parameters().flatten(), t.state().models.D_Y.parameters().flatten());
  EXPECT_EQ(manual.G.parameters().flatten(), G_after);
  EXPECT_NE(before_d, t.state().models.D_X.parameters().flatten());
}

TEST(Trainer, NonFiniteInputRaisesDivergence) {
  Trainer t(toy_config());
  Tensor<float> x(Shape{1, 3, 8, 8}, 0.0f);
  x[5] = std::numeric_limits<float>::infinity();
  const Tensor<float> y(Shape{1, 3, 8, 8}, 0.1f);
  const auto before = all_params(t.state().models);
  EXPECT_THROW(t.step(x, y, 1e-3), DivergenceError);
  EXPECT_EQ(all_params(t.state().models), before);  // aborted before any update
}

// ---- gradient check on the miniature pair ----

TEST(GradCheck, LeastSquaresObjective) {
  const auto r = gradcheck::check_generator_objective(1, 120, AdversarialMode::least_squares);
  EXPECT_EQ(r.checked, 120);
  EXPECT_EQ(r.failures, 0) << r.worst;
}

TEST(GradCheck, LogObjective) {
  const auto r = gradcheck::check_generator_objective(2, 120, AdversarialMode::log);
  EXPECT_EQ(r.checked, 120);
  EXPECT_EQ(r.failures, 0) << r.worst;
}
