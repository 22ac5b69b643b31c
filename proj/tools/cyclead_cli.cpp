// cyclead command-line front end.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cyclead/calibration.hpp"
#include "cyclead/container.hpp"
#include "cyclead/error.hpp"
#include "cyclead/experiment.hpp"
#include "cyclead/synthetic.hpp"
#include "cyclead/training.hpp"
#include "cyclead/version.hpp"

namespace fs = std::filesystem;
using namespace cyclead;

namespace {

void note(const std::string& s) { std::cerr << "[cyclead] " << s << std::endl; }

struct ExtractorArgs {
  std::string spec;  // "", "random", or a weights file
  std::uint64_t seed = 0;
  std::string sha256;

  void add(CLI::App* app) {
    app->add_option("--extractor", spec, "Feature extractor for FID: 'random' or a weights file");
    app->add_option("--extractor-seed", seed, "Seed of the random stand-in extractor");
    app->add_option("--extractor-sha256", sha256, "Expected SHA-256 of the extractor weights file");
  }

  std::optional<FeatureExtractor> make(int channels) const {
    if (spec.empty()) return std::nullopt;
    if (spec == "random") return FeatureExtractor::random(channels, seed);
    return FeatureExtractor::load(spec, sha256);
  }
};

LabeledImageSet load_preprocessed(const fs::path& dir, const TrainConfig& cfg, const std::string& exclusions) {
  std::vector<std::string> excl;
  if (!exclusions.empty()) excl = read_exclusion_manifest(exclusions);
  auto loaded = load_dataset(dir, cfg.generator.in_channels == 1, excl);
  note("loaded " + std::to_string(loaded.report.loaded) + " images, skipped " +
       std::to_string(loaded.report.skipped.size()) + ", excluded " + std::to_string(loaded.report.excluded.size()) +
       " (resampling: " + loaded.report.resample_kernel + ")");
  for (const auto& [path, why] : loaded.report.skipped) note("skipped " + path + ": " + why);
  return preprocess(loaded.set, cfg.generator.resolution);
}

std::string percent(double f) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100 * f << "%";
  return s.str();
}

Image mask_image(const DefectMask& m) {
  Image img(m.height, m.width, 1);
  for (std::size_t i = 0; i < m.data.size(); ++i) img.pixels[i] = m.data[i] ? 1.0f : 0.0f;
  return img;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cycle-GAN reconstruction-based anomaly detection"};
  app.require_subcommand(0, 1);
  bool show_version = false;
  app.add_flag("--version", show_version, "Print artifact and checkpoint-format versions");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model pair on a dataset directory");
  std::string config_path, data_dir, out_dir, resume, exclusions, split_path;
  std::string augment_name = "full";
  bool deterministic = false;
  std::optional<std::uint64_t> split_seed;
  train_cmd->add_option("--config", config_path, "Training config (JSON)")->required();
  train_cmd->add_option("--data", data_dir, "Dataset root with normal/ and abnormal/")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");
  train_cmd->add_flag("--deterministic", deterministic, "Force deterministic execution");
  train_cmd->add_option("--split-seed", split_seed, "Seed of the train/test split (default: config seed)");
  train_cmd->add_option("--split", split_path, "Reuse a stored split record instead of drawing one");
  train_cmd->add_option("--augment", augment_name, "Augmentation policy: full, hflip, identity");
  train_cmd->add_option("--exclusions", exclusions, "File of source ids to exclude");

  // reconstruct
  auto* recon_cmd = app.add_subcommand("reconstruct", "Reconstruct one image and write a triptych");
  std::string ckpt, image_path;
  ExtractorArgs recon_ex;
  recon_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  recon_cmd->add_option("--image", image_path, "Input image")->required();
  recon_cmd->add_option("--out", out_dir, "Output directory")->required();
  recon_ex.add(recon_cmd);

  // score
  auto* score_cmd = app.add_subcommand("score", "Score images with a trained generator");
  std::string scores_out;
  ExtractorArgs score_ex;
  score_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  score_cmd->add_option("--data", data_dir, "Dataset root")->required();
  score_cmd->add_option("--split", split_path, "Split record; only its test images are scored");
  score_cmd->add_option("--out", scores_out, "Scores CSV to write")->required();
  score_cmd->add_option("--exclusions", exclusions, "File of source ids to exclude");
  score_ex.add(score_cmd);

  // calibrate
  auto* cal_cmd = app.add_subcommand("calibrate", "Compute a decision threshold");
  std::string scores_path, policy_name = "zfn", metric_name = "sse";
  cal_cmd->add_option("--scores", scores_path, "Scores CSV")->required();
  cal_cmd->add_option("--policy", policy_name, "zfn or acc");
  cal_cmd->add_option("--metric", metric_name, "sse or fid");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate one scores file");
  std::string report_out;
  eval_cmd->add_option("--scores", scores_path, "Scores CSV")->required();
  eval_cmd->add_option("--out", report_out, "Report path prefix (writes .json, .txt and histograms)")->required();

  // report
  auto* report_cmd = app.add_subcommand("report", "Aggregate run directories into a report");
  std::string runs_dir;
  report_cmd->add_option("--runs", runs_dir, "Experiment directory holding run_<i>/")->required();
  report_cmd->add_option("--out", out_dir, "Output directory for report.json, report.txt and plots")->required();

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "Run a full multi-run experiment from a manifest");
  std::string manifest_path;
  exp_cmd->add_option("--manifest", manifest_path, "Experiment manifest (JSON)")->required();
  exp_cmd->add_option("--out", out_dir, "Override the manifest's output directory");
  exp_cmd->add_flag("--deterministic", deterministic, "Force deterministic execution");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic defect dataset");
  SyntheticSpec syn;
  std::string defect_name = "blob", background_name = "stripes";
  synth_cmd->add_option("--out", out_dir, "Output dataset root")->required();
  synth_cmd->add_option("--resolution", syn.resolution, "Image side length");
  synth_cmd->add_option("--channels", syn.channels, "1 or 3");
  synth_cmd->add_option("--n-normal", syn.n_normal, "Number of normal images");
  synth_cmd->add_option("--n-abnormal", syn.n_abnormal, "Number of abnormal images");
  synth_cmd->add_option("--defect", defect_name, "blob, crack or scratch");
  synth_cmd->add_option("--background", background_name, "stripes, checker or noise");
  synth_cmd->add_option("--contrast", syn.contrast, "Defect contrast in [0,1]");
  synth_cmd->add_option("--size-fraction", syn.size_fraction, "Defect size relative to the image side");
  synth_cmd->add_option("--seed", syn.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorKind::config);
  }

  try {
    if (show_version) {
      std::cout << "cyclead " << kArtifactVersion << " (checkpoint format " << kCheckpointFormatVersion
                << ", scores format " << kScoresFormatVersion << ")\n";
      return 0;
    }

    if (*train_cmd) {
      TrainConfig cfg = load_train_config(config_path);
      if (deterministic) cfg.deterministic = true;
      const auto set = load_preprocessed(data_dir, cfg, exclusions);
      SplitPair split = split_path.empty() ? make_split(set, split_seed.value_or(cfg.seed))
                                           : apply_split_record(set, read_split_record(split_path));
      fs::create_directories(out_dir);
      write_split_record(fs::path(out_dir) / "split.json", split_record(split));
      split.train = augment(split.train, AugmentPolicy::from_name(augment_name));
      note("training on " + std::to_string(split.train.size()) + " images (" +
           std::to_string(split.train.count(Label::abnormal)) + " abnormal), test set " +
           std::to_string(split.test.size()));
      TrainOptions opts;
      opts.out_dir = fs::path(out_dir);
      if (!resume.empty()) opts.resume_from = fs::path(resume);
      opts.callbacks.on_epoch_end = [&](int epoch, const TrainState&) {
        note("epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.epochs));
      };
      opts.callbacks.on_checkpoint = [](const fs::path& p) { note("wrote " + p.string()); };
      train(cfg, split, opts);
      return 0;
    }

    if (*recon_cmd) {
      const auto probe = load_generator(ckpt);
      const auto ex = recon_ex.make(probe.spec().in_channels);
      const auto r = demo_reconstruct(ckpt, image_path, out_dir, ex ? &*ex : nullptr);
      for (const auto& n : r.notices) note(n);
      std::cout << std::setprecision(10) << "sse " << r.sse << "\n";
      if (r.fid) std::cout << "fid " << *r.fid << "\n";
      return 0;
    }

    if (*score_cmd) {
      if (!fs::exists(ckpt)) throw DataError("checkpoint not found: " + ckpt);
      const auto G = load_generator(ckpt);
      TrainConfig cfg;
      cfg.generator = G.spec();
      const auto set = load_preprocessed(data_dir, cfg, exclusions);
      const auto target = split_path.empty() ? set : apply_split_record(set, read_split_record(split_path)).test;
      const auto ex = score_ex.make(G.spec().in_channels);
      const auto scores = score_all(reconstruct_all(G, target), ex ? &*ex : nullptr);
      write_scores(scores_out, scores, sha256_file(ckpt));
      note("scored " + std::to_string(scores.size()) + " images into " + scores_out);
      return 0;
    }

    if (*cal_cmd) {
      const auto records = read_scores(scores_path).records;
      const auto metric = score_metric_from_string(metric_name);
      const auto policy = policy_from_string(policy_name);
      double tau = 0;
      if (policy == PolicyKind::zfn) {
        tau = zfn_threshold(records, metric);
      } else {
        tau = acc_threshold(records, metric).tau;
      }
      const auto c = confusion_at(records, metric, tau);
      std::cout << std::setprecision(17) << "policy " << to_string(policy) << "\nmetric " << to_string(metric)
                << "\nthreshold " << tau << "\naccuracy " << std::setprecision(6) << c.accuracy() << "\nrecall "
                << c.recall() << "\ntp " << c.tp << "\nfp " << c.fp << "\ntn " << c.tn << "\nfn " << c.fn << "\n";
      return 0;
    }

    if (*eval_cmd) {
      const auto file = read_scores(scores_path);
      const auto run = evaluate_run(scores_path);
      const auto report = aggregate_runs({run}, fs::path(scores_path).parent_path().filename().string());
      fs::path prefix(report_out);
      fs::path json_path = prefix, txt_path = prefix;
      json_path.replace_extension(".json");
      txt_path.replace_extension(".txt");
      write_report(json_path, txt_path, report);
      for (const auto& [metric, t] : run.metrics) {
        fs::path png = prefix;
        png.replace_filename(prefix.stem().string() + "_hist_" + to_string(metric) + ".png");
        plot_histogram(png, file.records, metric, prefix.stem().string());
        std::cout << to_string(metric) << ": ZFN " << percent(t.zfn_acc) << ", ACC " << percent(t.max_acc)
                  << ", AUC " << percent(t.auc) << "\n";
      }
      return 0;
    }

    if (*report_cmd) {
      const auto report = regenerate_report(runs_dir);
      const fs::path out(out_dir);
      write_report(out / "report.json", out / "report.txt", report);
      for (const auto& e : fs::directory_iterator(runs_dir)) {
        const auto scores = e.path() / "scores.csv";
        if (!e.is_directory() || !fs::exists(scores)) continue;
        const auto records = read_scores(scores).records;
        for (const auto& [metric, cells] : report.cells) {
          plot_histogram(out / "figs" / (e.path().filename().string() + "_hist_" + to_string(metric) + ".png"),
                         records, metric, report.dataset + " " + e.path().filename().string());
        }
      }
      std::cout << render_table(report);
      return 0;
    }

    if (*exp_cmd) {
      auto m = load_experiment_manifest(manifest_path);
      if (!out_dir.empty()) m.out = out_dir;
      if (deterministic) m.train.deterministic = true;
      ExperimentOptions opts;
      opts.log = note;
      const auto result = run_experiment(m, opts);
      std::cout << render_table(result.report);
      return 0;
    }

    if (*synth_cmd) {
      syn.defect = defect_kind_from_string(defect_name);
      syn.background = background_kind_from_string(background_name);
      syn.validate();
      const auto set = synthesize_toy_dataset(syn);
      const fs::path root(out_dir);
      int ni = 0, ai = 0;
      for (const auto& img : set.images()) {
        std::ostringstream name;
        if (img.label == Label::normal) {
          name << std::setw(4) << std::setfill('0') << ni++ << ".png";
          write_image(root / "normal" / name.str(), img.pixels);
        } else {
          name << std::setw(4) << std::setfill('0') << ai++ << ".png";
          write_image(root / "abnormal" / name.str(), img.pixels);
          if (img.meta.defect_mask) write_image(root / "masks" / name.str(), mask_image(*img.meta.defect_mask));
        }
      }
      note("wrote " + std::to_string(ni) + " normal and " + std::to_string(ai) + " abnormal images to " + out_dir);
      return 0;
    }

    std::cout << app.help();
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_code(ErrorKind::data);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << std::endl;
    return 1;
  }
}
