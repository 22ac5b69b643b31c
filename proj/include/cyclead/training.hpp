#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyclead/dataset.hpp"
#include "cyclead/losses.hpp"
#include "cyclead/model.hpp"

namespace cyclead {

struct TrainConfig {
  int epochs = 200;
  double lr = 2e-4;
  std::optional<int> decay_start;  // defaults to epochs / 2
  int batch_size = 1;
  int buffer_size = 50;
  LossWeights weights;
  std::uint64_t seed = 0;
  AdversarialMode adversarial_mode = AdversarialMode::least_squares;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int checkpoint_every = 20;
  bool deterministic = true;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;

  int effective_decay_start() const { return decay_start.value_or(std::max(1, epochs / 2)); }
  void validate() const;
};

// Flat key/value form; unknown keys are rejected.
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

// Constant until decay_start, then linear towards zero at epochs + 1.
double lr_at(int epoch, const TrainConfig& cfg);

// Pool of previously generated images fed to the discriminators.
class HistoryBuffer {
 public:
  explicit HistoryBuffer(int capacity = 50) : capacity_(capacity) {}

  // `image` is a single sample [1,C,H,W]. Until full, stores and returns it;
  // afterwards returns it with probability 1/2, otherwise swaps it with a
  // uniformly chosen stored image and returns that one.
  Tensor<float> push_sample(Tensor<float> image, std::mt19937_64& rng);
  // Applies push_sample to each sample of a batch.
  Tensor<float> push_batch(const Tensor<float>& batch, std::mt19937_64& rng);

  int capacity() const { return capacity_; }
  std::size_t size() const { return images_.size(); }
  const std::vector<Tensor<float>>& images() const { return images_; }
  std::vector<Tensor<float>>& images() { return images_; }

 private:
  int capacity_;
  std::vector<Tensor<float>> images_;
};

struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  std::int64_t step = 0;
};

// Adam with bias correction over an ordered parameter group.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Var<float>>& group, double lr);
  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  AdamState state_;
};

struct TrainState {
  TrainConfig config;
  ModelPair<float> models;
  Adam generator_opt;
  Adam discriminator_opt;
  int epoch = 0;  // completed epochs
  std::int64_t iteration = 0;
  HistoryBuffer fake_x_pool;
  HistoryBuffer fake_y_pool;
  std::mt19937_64 rng;

  explicit TrainState(const TrainConfig& cfg);
  TrainState(const TrainConfig& cfg, ModelPair<float> models);

  std::vector<Var<float>> generator_group() const;
  std::vector<Var<float>> discriminator_group() const;
};

// Generator half of one training step: translations, reconstructions,
// identities and every generator-side loss term. Discriminator scores go
// through a sigmoid in log mode.
template <typename T>
struct GeneratorPass {
  Var<T> fake_y;  // G(x)
  Var<T> fake_x;  // F(y)
  Var<T> adv_G;
  Var<T> adv_F;
  Var<T> cyc;
  Var<T> ide;
  Var<T> total;
};

template <typename T>
GeneratorPass<T> generator_pass(const ModelPair<T>& models, const Var<T>& x, const Var<T>& y, AdversarialMode mode,
                                const LossWeights& weights);

template <typename T>
Var<T> discriminator_scores(const Discriminator<T>& D, const Var<T>& in, AdversarialMode mode);

// Training images per domain, already mapped to [-1,1], one [1,C,H,W] each.
struct DomainData {
  std::vector<Tensor<float>> abnormal;  // domain X
  std::vector<Tensor<float>> normal;    // domain Y
};

DomainData domain_data(const LabeledImageSet& set);

struct TrainCallbacks {
  std::function<void(std::int64_t iteration, const LossBreakdown&)> on_step;
  std::function<void(int epoch, const TrainState&)> on_epoch_end;
  std::function<void(const std::filesystem::path&)> on_checkpoint;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);
  explicit Trainer(TrainState state);

  // One alternating update: generators on total_generator, then
  // discriminators on total_discriminator using history-pool fakes.
  // x holds abnormal images, y normal ones, both in [-1,1].
  LossBreakdown step(const Tensor<float>& x, const Tensor<float>& y, double lr);

  // Independent shuffles of both domains; the longer one sets the epoch
  // length and the shorter is re-shuffled until it matches.
  std::vector<LossBreakdown> run_epoch(const DomainData& data, const TrainCallbacks& callbacks = {});

  static std::size_t steps_per_epoch(std::size_t n_abnormal, std::size_t n_normal, int batch_size);

  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }

 private:
  TrainState state_;
};

// Raised when a loss term becomes NaN/Inf; carries the offending step.
struct DivergenceError : NumericalError {
  DivergenceError(std::int64_t iteration, int epoch, std::string term, LossBreakdown breakdown);
  std::int64_t iteration;
  int epoch;
  std::string term;
  LossBreakdown breakdown;
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // ckpt/epoch_NNNN.ckpt and log/train_log.csv
  std::optional<std::filesystem::path> resume_from;
  TrainCallbacks callbacks;
};

struct TrainResult {
  TrainState state;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<LossBreakdown> log;
};

TrainResult train(const TrainConfig& cfg, const SplitPair& split, const TrainOptions& options = {});

// ---- checkpoints ----

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);
// Loads only the abnormal-to-normal generator G.
Generator<float> load_generator(const std::filesystem::path& path);

// Training log: CSV, one row per step.
void append_log_row(std::ostream& out, std::int64_t iteration, int epoch, const LossBreakdown& b);
std::string log_header();

}  // namespace cyclead
