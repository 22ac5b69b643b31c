#include "cyclead/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Core>

#include "cyclead/container.hpp"
#include "cyclead/image.hpp"
#include "cyclead/version.hpp"

namespace cyclead {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- config ----

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  const int ds = effective_decay_start();
  if (ds < 1 || ds > epochs) {
    throw ConfigError("decay_start must satisfy 0 < decay_start <= epochs, got " + std::to_string(ds));
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1, got " + std::to_string(batch_size));
  if (buffer_size < 0) throw ConfigError("buffer_size must be >= 0");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0,1)");
  weights.validate();
  generator.validate();
  discriminator.validate();
  if (generator.in_channels != discriminator.in_channels) {
    throw ConfigError("generator and discriminator channel counts differ");
  }
}

json to_json(const TrainConfig& cfg) {
  json j;
  j["epochs"] = cfg.epochs;
  j["lr"] = cfg.lr;
  j["decay_start"] = cfg.effective_decay_start();
  j["batch_size"] = cfg.batch_size;
  j["buffer_size"] = cfg.buffer_size;
  j["lambda_cyc"] = cfg.weights.lambda_cyc;
  j["lambda_ide"] = cfg.weights.lambda_ide;
  j["seed"] = cfg.seed;
  j["adversarial_mode"] = to_string(cfg.adversarial_mode);
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["deterministic"] = cfg.deterministic;
  j["resolution"] = cfg.generator.resolution;
  j["channels"] = cfg.generator.in_channels;
  j["base_width"] = cfg.generator.base_width;
  j["n_residual_blocks"] = cfg.generator.n_residual_blocks;
  j["upsampling"] = to_string(cfg.generator.upsampling);
  j["disc_widths"] = cfg.discriminator.widths;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a flat object");
  static const std::set<std::string> known{
      "epochs", "lr", "decay_start", "batch_size", "buffer_size", "lambda_cyc", "lambda_ide",
      "seed", "adversarial_mode", "beta1", "beta2", "checkpoint_every", "deterministic",
      "resolution", "channels", "base_width", "n_residual_blocks", "upsampling", "disc_widths"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  TrainConfig cfg;
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.lr = j.value("lr", cfg.lr);
    if (j.contains("decay_start")) cfg.decay_start = j.at("decay_start").get<int>();
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.buffer_size = j.value("buffer_size", cfg.buffer_size);
    cfg.weights.lambda_cyc = j.value("lambda_cyc", cfg.weights.lambda_cyc);
    cfg.weights.lambda_ide = j.value("lambda_ide", cfg.weights.lambda_ide);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("adversarial_mode")) {
      cfg.adversarial_mode = adversarial_mode_from_string(j.at("adversarial_mode").get<std::string>());
    }
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.deterministic = j.value("deterministic", cfg.deterministic);
    const int res = j.value("resolution", cfg.generator.resolution);
    const int ch = j.value("channels", cfg.generator.in_channels);
    cfg.generator = GeneratorSpec::for_resolution(res, ch);
    cfg.generator.base_width = j.value("base_width", cfg.generator.base_width);
    cfg.generator.n_residual_blocks = j.value("n_residual_blocks", cfg.generator.n_residual_blocks);
    if (j.contains("upsampling")) cfg.generator.upsampling = upsampling_from_string(j.at("upsampling").get<std::string>());
    cfg.discriminator.in_channels = ch;
    if (j.contains("disc_widths")) cfg.discriminator.widths = j.at("disc_widths").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return train_config_from_json(j);
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 1 || epoch > cfg.epochs) {
    throw RangeError("epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(cfg.epochs) + "]");
  }
  const int ds = cfg.effective_decay_start();
  if (epoch <= ds) return cfg.lr;
  return cfg.lr * (1.0 - static_cast<double>(epoch - ds) / static_cast<double>(cfg.epochs - ds + 1));
}

// ---- history buffer ----

Tensor<float> HistoryBuffer::push_sample(Tensor<float> image, std::mt19937_64& rng) {
  if (capacity_ <= 0) return image;
  if (images_.size() < static_cast<std::size_t>(capacity_)) {
    images_.push_back(image);
    return image;
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < 0.5) return image;
  std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
  std::swap(images_[pick(rng)], image);
  return image;
}

Tensor<float> HistoryBuffer::push_batch(const Tensor<float>& batch, std::mt19937_64& rng) {
  std::vector<Tensor<float>> out;
  out.reserve(static_cast<std::size_t>(batch.shape().n));
  for (int i = 0; i < batch.shape().n; ++i) out.push_back(push_sample(batch.slice(i, 1), rng));
  return concat_batch<float>(out);
}

// ---- Adam ----

void Adam::step(std::vector<Var<float>>& group, double lr) {
  if (state_.m.empty()) {
    for (const auto& p : group) {
      state_.m.emplace_back(p.shape());
      state_.v.emplace_back(p.shape());
    }
  }
  if (state_.m.size() != group.size()) throw ShapeError("Adam state does not match parameter group");
  ++state_.step;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step));
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  const float step_size = static_cast<float>(lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < group.size(); ++i) {
    auto& p = group[i];
    if (!p.has_grad()) continue;
    const std::size_t n = p.value().size();
    Eigen::Map<Eigen::ArrayXf> w(p.mutable_value().data(), static_cast<Eigen::Index>(n));
    Eigen::Map<const Eigen::ArrayXf> g(p.grad().data(), static_cast<Eigen::Index>(n));
    Eigen::Map<Eigen::ArrayXf> m(state_.m[i].data(), static_cast<Eigen::Index>(n));
    Eigen::Map<Eigen::ArrayXf> v(state_.v[i].data(), static_cast<Eigen::Index>(n));
    m = b1 * m + (1.0f - b1) * g;
    v = b2 * v + (1.0f - b2) * g.square();
    w -= step_size * m / (v.sqrt() * inv_sqrt_bc2 + eps);
  }
}

// ---- state ----

TrainState::TrainState(const TrainConfig& cfg)
    : TrainState(cfg, ModelPair<float>::build(cfg.generator, cfg.discriminator, cfg.seed)) {}

TrainState::TrainState(const TrainConfig& cfg, ModelPair<float> m)
    : config(cfg),
      models(std::move(m)),
      generator_opt(cfg.beta1, cfg.beta2),
      discriminator_opt(cfg.beta1, cfg.beta2),
      fake_x_pool(cfg.buffer_size),
      fake_y_pool(cfg.buffer_size),
      rng(derive_seed(cfg.seed, 16)) {}

namespace {

void append_vars(std::vector<Var<float>>& out, const ParameterSet<float>& p) {
  for (const auto& item : p.items()) out.push_back(item.var);
}

}  // namespace

std::vector<Var<float>> TrainState::generator_group() const {
  std::vector<Var<float>> g;
  append_vars(g, models.G.parameters());
  append_vars(g, models.F.parameters());
  return g;
}

std::vector<Var<float>> TrainState::discriminator_group() const {
  std::vector<Var<float>> g;
  append_vars(g, models.D_X.parameters());
  append_vars(g, models.D_Y.parameters());
  return g;
}

DomainData domain_data(const LabeledImageSet& set) {
  DomainData d;
  for (const auto& img : set.images()) {
    auto t = to_model_tensor(img.pixels);
    (img.label == Label::abnormal ? d.abnormal : d.normal).push_back(std::move(t));
  }
  return d;
}

DivergenceError::DivergenceError(std::int64_t it, int ep, std::string t, LossBreakdown b)
    : NumericalError("non-finite loss at iteration " + std::to_string(it) + " (epoch " + std::to_string(ep) +
                     "): term " + t),
      iteration(it),
      epoch(ep),
      term(std::move(t)),
      breakdown(b) {}

// ---- trainer ----

Trainer::Trainer(const TrainConfig& cfg) : state_(cfg) {
  cfg.validate();
  if (cfg.deterministic) Eigen::setNbThreads(1);
}

Trainer::Trainer(TrainState state) : state_(std::move(state)) {
  if (state_.config.deterministic) Eigen::setNbThreads(1);
}

namespace {

void set_group(ParameterSet<float>& a, ParameterSet<float>& b, bool on) {
  a.set_requires_grad(on);
  b.set_requires_grad(on);
}

void check_finite(const LossBreakdown& b, std::int64_t iteration, int epoch) {
  const std::pair<const char*, double> terms[] = {
      {"adv_G", b.adv_G},   {"adv_F", b.adv_F}, {"adv_DX", b.adv_DX},
      {"adv_DY", b.adv_DY}, {"cyc", b.cyc},     {"ide", b.ide}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw DivergenceError(iteration, epoch, name, b);
  }
}

}  // namespace

template <typename T>
Var<T> discriminator_scores(const Discriminator<T>& D, const Var<T>& in, AdversarialMode mode) {
  auto out = D.forward(in);
  return mode == AdversarialMode::log ? ops::sigmoid(out) : out;
}

template <typename T>
GeneratorPass<T> generator_pass(const ModelPair<T>& M, const Var<T>& X, const Var<T>& Y, AdversarialMode mode,
                                const LossWeights& weights) {
  GeneratorPass<T> p;
  p.fake_y = M.G.forward(X);
  const auto rec_x = M.F.forward(p.fake_y);
  p.fake_x = M.F.forward(Y);
  const auto rec_y = M.G.forward(p.fake_x);
  const auto idt_y = M.G.forward(Y);
  const auto idt_x = M.F.forward(X);
  const Var<T> none;
  p.adv_G = adversarial_loss(none, discriminator_scores(M.D_Y, p.fake_y, mode), mode, Side::generator);
  p.adv_F = adversarial_loss(none, discriminator_scores(M.D_X, p.fake_x, mode), mode, Side::generator);
  p.cyc = cycle_loss(X, rec_x, Y, rec_y);
  p.ide = identity_loss(X, idt_x, Y, idt_y);
  p.total = generator_objective(p.adv_G, p.adv_F, p.cyc, p.ide, weights);
  return p;
}

template GeneratorPass<float> generator_pass(const ModelPair<float>&, const Var<float>&, const Var<float>&,
                                             AdversarialMode, const LossWeights&);
template GeneratorPass<double> generator_pass(const ModelPair<double>&, const Var<double>&, const Var<double>&,
                                              AdversarialMode, const LossWeights&);
template Var<float> discriminator_scores(const Discriminator<float>&, const Var<float>&, AdversarialMode);
template Var<double> discriminator_scores(const Discriminator<double>&, const Var<double>&, AdversarialMode);

LossBreakdown Trainer::step(const Tensor<float>& x, const Tensor<float>& y, double lr) {
  auto& s = state_;
  auto& M = s.models;
  const auto mode = s.config.adversarial_mode;
  const int epoch = s.epoch + 1;
  const std::int64_t iteration = s.iteration + 1;

  // generators, discriminators frozen
  set_group(M.D_X.parameters(), M.D_Y.parameters(), false);
  set_group(M.G.parameters(), M.F.parameters(), true);
  const auto X = Var<float>::constant(x);
  const auto Y = Var<float>::constant(y);
  const auto pass = generator_pass(M, X, Y, mode, s.config.weights);

  LossComponents parts;
  parts.adv_G = pass.adv_G.item();
  parts.adv_F = pass.adv_F.item();
  parts.cyc = pass.cyc.item();
  parts.ide = pass.ide.item();
  {
    LossBreakdown partial = total_objective(parts, s.config.weights);
    check_finite(partial, iteration, epoch);
  }
  pass.total.backward();
  auto gen_group = s.generator_group();
  s.generator_opt.step(gen_group, lr);
  M.G.parameters().zero_grad();
  M.F.parameters().zero_grad();

  // discriminators, generators frozen
  set_group(M.G.parameters(), M.F.parameters(), false);
  set_group(M.D_X.parameters(), M.D_Y.parameters(), true);
  const auto pool_y = Var<float>::constant(s.fake_y_pool.push_batch(pass.fake_y.value(), s.rng));
  const auto pool_x = Var<float>::constant(s.fake_x_pool.push_batch(pass.fake_x.value(), s.rng));
  const auto adv_DY =
      discriminator_loss(discriminator_scores(M.D_Y, Y, mode), discriminator_scores(M.D_Y, pool_y, mode), mode);
  const auto adv_DX =
      discriminator_loss(discriminator_scores(M.D_X, X, mode), discriminator_scores(M.D_X, pool_x, mode), mode);
  parts.adv_DX = adv_DX.item();
  parts.adv_DY = adv_DY.item();
  const LossBreakdown out = total_objective(parts, s.config.weights);
  check_finite(out, iteration, epoch);
  ops::add(adv_DX, adv_DY).backward();
  auto disc_group = s.discriminator_group();
  s.discriminator_opt.step(disc_group, lr);
  M.D_X.parameters().zero_grad();
  M.D_Y.parameters().zero_grad();
  set_group(M.G.parameters(), M.F.parameters(), true);

  s.iteration = iteration;
  return out;
}

std::size_t Trainer::steps_per_epoch(std::size_t n_abnormal, std::size_t n_normal, int batch_size) {
  const std::size_t longest = std::max(n_abnormal, n_normal);
  const auto b = static_cast<std::size_t>(batch_size);
  return (longest + b - 1) / b;
}

namespace {

// Shuffled index stream of length `total`, reshuffling after each pass.
std::vector<std::size_t> draw_order(std::size_t n, std::size_t total, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  out.reserve(total);
  std::vector<std::size_t> perm(n);
  while (out.size() < total) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n && out.size() < total; ++i) out.push_back(perm[i]);
  }
  return out;
}

Tensor<float> gather(const std::vector<Tensor<float>>& pool, const std::vector<std::size_t>& order,
                     std::size_t first, int count) {
  std::vector<Tensor<float>> parts;
  parts.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) parts.push_back(pool[order[first + static_cast<std::size_t>(i)]]);
  return concat_batch<float>(parts);
}

}  // namespace

std::vector<LossBreakdown> Trainer::run_epoch(const DomainData& data, const TrainCallbacks& callbacks) {
  if (data.abnormal.empty() || data.normal.empty()) {
    throw ConfigError("training needs at least one image of each class");
  }
  auto& s = state_;
  const int epoch = s.epoch + 1;
  const double lr = lr_at(epoch, s.config);
  const int b = s.config.batch_size;
  const std::size_t steps = steps_per_epoch(data.abnormal.size(), data.normal.size(), b);
  const std::size_t total = steps * static_cast<std::size_t>(b);
  const auto order_x = draw_order(data.abnormal.size(), total, s.rng);
  const auto order_y = draw_order(data.normal.size(), total, s.rng);

  std::vector<LossBreakdown> log;
  log.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t first = k * static_cast<std::size_t>(b);
    const auto x = gather(data.abnormal, order_x, first, b);
    const auto y = gather(data.normal, order_y, first, b);
    log.push_back(step(x, y, lr));
    if (callbacks.on_step) callbacks.on_step(s.iteration, log.back());
  }
  s.epoch = epoch;
  if (callbacks.on_epoch_end) callbacks.on_epoch_end(epoch, s);
  return log;
}

// ---- training log ----

std::string log_header() {
  return "iteration,epoch,adv_G,adv_F,adv_DX,adv_DY,cyc,ide,total_generator,total_discriminator";
}

void append_log_row(std::ostream& out, std::int64_t iteration, int epoch, const LossBreakdown& b) {
  out << iteration << ',' << epoch << std::setprecision(9) << ',' << b.adv_G << ',' << b.adv_F << ','
      << b.adv_DX << ',' << b.adv_DY << ',' << b.cyc << ',' << b.ide << ',' << b.total_generator << ','
      << b.total_discriminator << '\n';
}

namespace {

// Drops rows written after the checkpoint being resumed from.
void trim_log(const fs::path& path, std::int64_t last_iteration) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (keep.empty()) {
      keep.push_back(line);
      continue;
    }
    const auto it = std::stoll(line.substr(0, line.find(',')));
    if (it <= last_iteration) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

std::string checkpoint_name(int epoch) {
  std::ostringstream name;
  name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
  return name.str();
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const SplitPair& split, const TrainOptions& options) {
  cfg.validate();
  if (split.train.count(Label::abnormal) == 0 || split.train.count(Label::normal) == 0) {
    throw ConfigError("training split needs at least one image of each class (abnormal " +
                      std::to_string(split.train.count(Label::abnormal)) + ", normal " +
                      std::to_string(split.train.count(Label::normal)) + ")");
  }
  for (const auto& img : split.train.images()) {
    if (img.pixels.height != cfg.generator.resolution || img.pixels.width != cfg.generator.resolution ||
        img.pixels.channels != cfg.generator.in_channels) {
      throw ShapeError("training image " + img.source_id + " is " + std::to_string(img.pixels.height) + "x" +
                       std::to_string(img.pixels.width) + "x" + std::to_string(img.pixels.channels) +
                       ", model expects " + std::to_string(cfg.generator.resolution) + "x" +
                       std::to_string(cfg.generator.resolution) + "x" + std::to_string(cfg.generator.in_channels));
    }
  }

  std::optional<Trainer> trainer;
  if (options.resume_from) {
    TrainState st = load_checkpoint(*options.resume_from);
    if (st.config.generator != cfg.generator || st.config.discriminator != cfg.discriminator) {
      throw ConfigError("checkpoint architecture does not match the training config");
    }
    if (st.epoch > cfg.epochs) throw ConfigError("checkpoint is past the configured number of epochs");
    st.config = cfg;
    trainer.emplace(std::move(st));
  } else {
    trainer.emplace(cfg);
  }

  std::ofstream log_file;
  fs::path ckpt_dir;
  if (options.out_dir) {
    fs::create_directories(*options.out_dir);
    ckpt_dir = *options.out_dir / "ckpt";
    fs::create_directories(ckpt_dir);
    fs::create_directories(*options.out_dir / "log");
    const auto log_path = *options.out_dir / "log" / "train_log.csv";
    if (options.resume_from) trim_log(log_path, trainer->state().iteration);
    const bool fresh = !fs::exists(log_path) || fs::file_size(log_path) == 0 || !options.resume_from;
    log_file.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log_file) throw DataError("cannot write " + log_path.string());
    if (fresh) log_file << log_header() << '\n';
  }

  const DomainData data = domain_data(split.train);
  std::vector<LossBreakdown> log;
  std::vector<fs::path> checkpoints;

  TrainCallbacks cb = options.callbacks;
  cb.on_step = [&](std::int64_t it, const LossBreakdown& b) {
    if (log_file.is_open()) append_log_row(log_file, it, trainer->state().epoch + 1, b);
    log.push_back(b);
    if (options.callbacks.on_step) options.callbacks.on_step(it, b);
  };

  while (trainer->state().epoch < cfg.epochs) {
    try {
      trainer->run_epoch(data, cb);
    } catch (const DivergenceError& e) {
      if (options.out_dir) {
        json snap{{"iteration", e.iteration}, {"epoch", e.epoch}, {"term", e.term},
                  {"adv_G", e.breakdown.adv_G}, {"adv_F", e.breakdown.adv_F},
                  {"adv_DX", e.breakdown.adv_DX}, {"adv_DY", e.breakdown.adv_DY},
                  {"cyc", e.breakdown.cyc}, {"ide", e.breakdown.ide}};
        std::ofstream(*options.out_dir / "diverged.json") << snap.dump(2) << '\n';
      }
      throw;
    }
    log_file.flush();
    const int epoch = trainer->state().epoch;
    if (options.out_dir && (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)) {
      const auto path = ckpt_dir / checkpoint_name(epoch);
      save_checkpoint(path, trainer->state());
      checkpoints.push_back(path);
      if (options.callbacks.on_checkpoint) options.callbacks.on_checkpoint(path);
    }
  }
  return TrainResult{std::move(trainer->state()), std::move(checkpoints), std::move(log)};
}

// ---- checkpoints ----

namespace {

constexpr const char* kCheckpointFormat = "cyclead-checkpoint";

void add_params(Container& c, const std::string& prefix, const ParameterSet<float>& p) {
  for (const auto& item : p.items()) c.tensors.emplace_back(prefix + "/" + item.name, item.var.value());
}

void load_params(const Container& c, const std::string& prefix, ParameterSet<float>& p) {
  for (auto& item : p.items()) {
    const auto& t = c.tensor(prefix + "/" + item.name);
    if (t.shape() != item.var.shape()) {
      throw ShapeError("checkpoint tensor " + prefix + "/" + item.name + " has shape " + t.shape().str() +
                       ", expected " + item.var.shape().str());
    }
    item.var.mutable_value() = t;
  }
}

void add_adam(Container& c, const std::string& prefix, const AdamState& st) {
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    c.tensors.emplace_back(prefix + ".m/" + std::to_string(i), st.m[i]);
    c.tensors.emplace_back(prefix + ".v/" + std::to_string(i), st.v[i]);
  }
}

void load_adam(const Container& c, const std::string& prefix, std::size_t n, std::int64_t step, AdamState& st) {
  st.step = step;
  st.m.clear();
  st.v.clear();
  if (!c.has(prefix + ".m/0")) return;
  for (std::size_t i = 0; i < n; ++i) {
    st.m.push_back(c.tensor(prefix + ".m/" + std::to_string(i)));
    st.v.push_back(c.tensor(prefix + ".v/" + std::to_string(i)));
  }
}

Container read_checkpoint_container(const fs::path& path) {
  Container c = read_container(path);
  if (c.meta.value("format", "") != kCheckpointFormat) throw DataError(path.string() + " is not a checkpoint");
  const int v = c.meta.value("format_version", 0);
  if (v != kCheckpointFormatVersion) {
    throw DataError("checkpoint format version " + std::to_string(v) + " is not supported (expected " +
                    std::to_string(kCheckpointFormatVersion) + ")");
  }
  return c;
}

}  // namespace

void save_checkpoint(const fs::path& path, const TrainState& s) {
  Container c;
  std::ostringstream rng;
  rng << s.rng;
  c.meta = {{"format", kCheckpointFormat},
            {"format_version", kCheckpointFormatVersion},
            {"artifact_version", kArtifactVersion},
            {"config", to_json(s.config)},
            {"epoch", s.epoch},
            {"iteration", s.iteration},
            {"rng_state", rng.str()},
            {"adam_generator_step", s.generator_opt.state().step},
            {"adam_discriminator_step", s.discriminator_opt.state().step},
            {"pool_fake_x", s.fake_x_pool.size()},
            {"pool_fake_y", s.fake_y_pool.size()}};
  add_params(c, "G", s.models.G.parameters());
  add_params(c, "F", s.models.F.parameters());
  add_params(c, "D_X", s.models.D_X.parameters());
  add_params(c, "D_Y", s.models.D_Y.parameters());
  add_adam(c, "adam.generator", s.generator_opt.state());
  add_adam(c, "adam.discriminator", s.discriminator_opt.state());
  for (std::size_t i = 0; i < s.fake_x_pool.size(); ++i) {
    c.tensors.emplace_back("pool.fake_x/" + std::to_string(i), s.fake_x_pool.images()[i]);
  }
  for (std::size_t i = 0; i < s.fake_y_pool.size(); ++i) {
    c.tensors.emplace_back("pool.fake_y/" + std::to_string(i), s.fake_y_pool.images()[i]);
  }
  write_container(path, c);
}

TrainState load_checkpoint(const fs::path& path) {
  const Container c = read_checkpoint_container(path);
  const TrainConfig cfg = train_config_from_json(c.meta.at("config"));
  TrainState s(cfg);
  load_params(c, "G", s.models.G.parameters());
  load_params(c, "F", s.models.F.parameters());
  load_params(c, "D_X", s.models.D_X.parameters());
  load_params(c, "D_Y", s.models.D_Y.parameters());
  load_adam(c, "adam.generator", s.generator_group().size(), c.meta.at("adam_generator_step").get<std::int64_t>(),
            s.generator_opt.state());
  load_adam(c, "adam.discriminator", s.discriminator_group().size(),
            c.meta.at("adam_discriminator_step").get<std::int64_t>(), s.discriminator_opt.state());
  s.epoch = c.meta.at("epoch").get<int>();
  s.iteration = c.meta.at("iteration").get<std::int64_t>();
  std::istringstream rng(c.meta.at("rng_state").get<std::string>());
  rng >> s.rng;
  if (!rng) throw DataError("corrupt rng state in " + path.string());
  const auto nx = c.meta.at("pool_fake_x").get<std::size_t>();
  const auto ny = c.meta.at("pool_fake_y").get<std::size_t>();
  for (std::size_t i = 0; i < nx; ++i) s.fake_x_pool.images().push_back(c.tensor("pool.fake_x/" + std::to_string(i)));
  for (std::size_t i = 0; i < ny; ++i) s.fake_y_pool.images().push_back(c.tensor("pool.fake_y/" + std::to_string(i)));
  return s;
}

Generator<float> load_generator(const fs::path& path) {
  const Container c = read_checkpoint_container(path);
  const TrainConfig cfg = train_config_from_json(c.meta.at("config"));
  Generator<float> g(cfg.generator, derive_seed(cfg.seed, 0));
  load_params(c, "G", g.parameters());
  return g;
}

}  // namespace cyclead
