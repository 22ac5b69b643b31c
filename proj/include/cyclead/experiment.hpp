#pragma once

// End-to-end experiment driver and figure helpers.
//
// Output layout:
//   out/manifest.json
//   out/run_<i>/{run.json, split.json, ckpt/, log/, scores.csv, metrics.json, figs/}
//   out/report.json, out/report.txt

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyclead/calibration.hpp"
#include "cyclead/synthetic.hpp"
#include "cyclead/training.hpp"

namespace cyclead {

struct ExtractorChoice {
  enum class Kind { none, random, file } kind = Kind::none;
  std::uint64_t seed = 0;  // random
  int width = 32;          // random
  std::filesystem::path path;
  std::string sha256;
};

struct ExperimentManifest {
  std::variant<std::filesystem::path, SyntheticSpec> dataset;
  std::string dataset_name;
  bool grayscale = false;
  std::optional<std::filesystem::path> exclusions;
  std::string augment = "full";
  TrainConfig train;  // train.generator.resolution is the working resolution
  int n_runs = 5;
  std::uint64_t base_seed = 0;
  std::filesystem::path out;
  ExtractorChoice extractor;
  int top_k = 4;

  void validate() const;
};

nlohmann::json to_json(const ExperimentManifest& m);
// Relative dataset/output paths are resolved against `base_dir`.
ExperimentManifest experiment_manifest_from_json(const nlohmann::json& j,
                                                 const std::filesystem::path& base_dir = {});
ExperimentManifest load_experiment_manifest(const std::filesystem::path& path);

// Loads (or synthesizes) and preprocesses the full labeled set.
LabeledImageSet resolve_dataset(const ExperimentManifest& m);

std::optional<FeatureExtractor> make_extractor(const ExtractorChoice& choice, int channels);

struct ExperimentOptions {
  std::function<void(const std::string&)> log;
  TrainCallbacks train_callbacks;
};

struct ExperimentResult {
  MetricsReport report;
  std::vector<RunMetrics> runs;
};

// Any stage failure is rethrown with its error kind and prefixed by the run
// index and stage name; finished runs stay on disk.
ExperimentResult run_experiment(const ExperimentManifest& m, const ExperimentOptions& options = {});

// Rebuilds the aggregate report from out/run_*/scores.csv alone.
MetricsReport regenerate_report(const std::filesystem::path& out_dir);

// ---- figures ----

// Original | generated | difference (display-normalized), each panel scaled
// up by nearest neighbour to at least `min_panel` pixels.
void write_triptych(const std::filesystem::path& png, const Reconstruction& r, int min_panel = 128);
Image difference_image(const DifferenceMap& map);

// Writes triptychs for the k highest and k lowest SSE scores.
void write_extreme_triptychs(const std::filesystem::path& dir, const std::vector<Reconstruction>& recs,
                             const std::vector<ScoreRecord>& scores, int k);

struct DemoResult {
  Reconstruction reconstruction;
  double sse = 0;
  std::optional<double> fid;
  std::vector<std::string> notices;
};

// Writes original.png, generated.png, difference.png, triptych.png and
// scores.txt. Images at another resolution are resampled (with a notice).
DemoResult demo_reconstruct(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                            const std::filesystem::path& out_dir, const FeatureExtractor* extractor = nullptr);

}  // namespace cyclead
