#include "cyclead/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include "cyclead/container.hpp"
#include "cyclead/error.hpp"
#include "cyclead/version.hpp"

namespace cyclead {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- manifest ----

void ExperimentManifest::validate() const {
  if (n_runs < 1) throw ConfigError("n_runs must be >= 1");
  if (top_k < 0) throw ConfigError("top_k must be >= 0");
  if (out.empty()) throw ConfigError("manifest needs an output directory");
  AugmentPolicy::from_name(augment);
  train.validate();
  if (const auto* s = std::get_if<SyntheticSpec>(&dataset)) {
    s->validate();
    if (s->channels != train.generator.in_channels) {
      throw ConfigError("synthetic channels differ from the model's channel count");
    }
  } else if ((grayscale ? 1 : 3) != train.generator.in_channels) {
    throw ConfigError("grayscale=" + std::string(grayscale ? "true" : "false") + " does not match channels=" +
                      std::to_string(train.generator.in_channels));
  }
  if (extractor.kind == ExtractorChoice::Kind::file && extractor.path.empty()) {
    throw ConfigError("extractor file path missing");
  }
}

namespace {

json synthetic_json(const SyntheticSpec& s) {
  return {{"resolution", s.resolution}, {"channels", s.channels},       {"n_normal", s.n_normal},
          {"n_abnormal", s.n_abnormal}, {"defect", to_string(s.defect)}, {"contrast", s.contrast},
          {"size_fraction", s.size_fraction}, {"background", to_string(s.background)}, {"seed", s.seed}};
}

SyntheticSpec synthetic_from_json(const json& j) {
  static const std::set<std::string> known{"resolution", "channels", "n_normal",   "n_abnormal", "defect",
                                           "contrast",   "size_fraction", "background", "seed"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown synthetic key '" + k + "'");
  }
  SyntheticSpec s;
  s.resolution = j.value("resolution", s.resolution);
  s.channels = j.value("channels", s.channels);
  s.n_normal = j.value("n_normal", s.n_normal);
  s.n_abnormal = j.value("n_abnormal", s.n_abnormal);
  if (j.contains("defect")) s.defect = defect_kind_from_string(j.at("defect").get<std::string>());
  s.contrast = j.value("contrast", s.contrast);
  s.size_fraction = j.value("size_fraction", s.size_fraction);
  if (j.contains("background")) s.background = background_kind_from_string(j.at("background").get<std::string>());
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

json extractor_json(const ExtractorChoice& e) {
  switch (e.kind) {
    case ExtractorChoice::Kind::none:
      return nullptr;
    case ExtractorChoice::Kind::random:
      return {{"kind", "random"}, {"seed", e.seed}, {"width", e.width}};
    case ExtractorChoice::Kind::file:
      return {{"kind", "file"}, {"path", e.path.string()}, {"sha256", e.sha256}};
  }
  return nullptr;
}

ExtractorChoice extractor_from_json(const json& j, const fs::path& base) {
  ExtractorChoice e;
  if (j.is_null()) return e;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "random") {
    e.kind = ExtractorChoice::Kind::random;
    e.seed = j.value("seed", std::uint64_t{0});
    e.width = j.value("width", 32);
  } else if (kind == "file") {
    e.kind = ExtractorChoice::Kind::file;
    e.path = j.at("path").get<std::string>();
    if (e.path.is_relative() && !base.empty()) e.path = base / e.path;
    e.sha256 = j.value("sha256", std::string{});
  } else {
    throw ConfigError("unknown extractor kind '" + kind + "' (expected random or file)");
  }
  return e;
}

}  // namespace

json to_json(const ExperimentManifest& m) {
  json j;
  if (const auto* s = std::get_if<SyntheticSpec>(&m.dataset)) {
    j["dataset"] = {{"synthetic", synthetic_json(*s)}};
  } else {
    j["dataset"] = std::get<fs::path>(m.dataset).string();
  }
  j["dataset_name"] = m.dataset_name;
  j["grayscale"] = m.grayscale;
  if (m.exclusions) j["exclusions"] = m.exclusions->string();
  j["augment"] = m.augment;
  j["train"] = to_json(m.train);
  j["n_runs"] = m.n_runs;
  j["base_seed"] = m.base_seed;
  j["out"] = m.out.string();
  j["extractor"] = extractor_json(m.extractor);
  j["top_k"] = m.top_k;
  return j;
}

ExperimentManifest experiment_manifest_from_json(const json& j, const fs::path& base) {
  static const std::set<std::string> known{"dataset", "dataset_name", "grayscale", "exclusions", "augment",
                                           "train",   "resolution",   "n_runs",    "base_seed",  "out",
                                           "extractor", "top_k"};
  if (!j.is_object()) throw ConfigError("manifest must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown manifest key '" + k + "'");
  }
  auto resolve = [&](fs::path p) { return p.is_relative() && !base.empty() ? base / p : p; };
  ExperimentManifest m;
  try {
    const auto& d = j.at("dataset");
    if (d.is_object()) {
      m.dataset = synthetic_from_json(d.at("synthetic"));
    } else {
      m.dataset = resolve(d.get<std::string>());
    }
    m.grayscale = j.value("grayscale", false);
    if (j.contains("exclusions")) m.exclusions = resolve(j.at("exclusions").get<std::string>());
    m.augment = j.value("augment", m.augment);
    json train = j.value("train", json::object());
    if (j.contains("resolution")) train["resolution"] = j.at("resolution");
    if (!train.contains("channels")) {
      const auto* s = std::get_if<SyntheticSpec>(&m.dataset);
      train["channels"] = s ? s->channels : (m.grayscale ? 1 : 3);
    }
    if (!train.contains("resolution")) {
      if (const auto* s = std::get_if<SyntheticSpec>(&m.dataset)) train["resolution"] = s->resolution;
    }
    m.train = train_config_from_json(train);
    m.n_runs = j.value("n_runs", m.n_runs);
    m.base_seed = j.value("base_seed", m.base_seed);
    m.out = resolve(j.at("out").get<std::string>());
    m.extractor = extractor_from_json(j.value("extractor", json(nullptr)), base);
    m.top_k = j.value("top_k", m.top_k);
    if (j.contains("dataset_name")) {
      m.dataset_name = j.at("dataset_name").get<std::string>();
    } else if (std::holds_alternative<SyntheticSpec>(m.dataset)) {
      m.dataset_name = "synthetic-" + to_string(std::get<SyntheticSpec>(m.dataset).defect);
    } else {
      m.dataset_name = std::get<fs::path>(m.dataset).filename().string();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad manifest: ") + e.what());
  }
  m.validate();
  return m;
}

ExperimentManifest load_experiment_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse manifest " + path.string() + ": " + e.what());
  }
  return experiment_manifest_from_json(j, path.parent_path());
}

LabeledImageSet resolve_dataset(const ExperimentManifest& m) {
  const int res = m.train.generator.resolution;
  if (const auto* s = std::get_if<SyntheticSpec>(&m.dataset)) {
    auto set = synthesize_toy_dataset(*s);
    return s->resolution == res ? set : preprocess(set, res);
  }
  std::vector<std::string> excl;
  if (m.exclusions) excl = read_exclusion_manifest(*m.exclusions);
  auto loaded = load_dataset(std::get<fs::path>(m.dataset), m.grayscale, excl);
  return preprocess(loaded.set, res);
}

std::optional<FeatureExtractor> make_extractor(const ExtractorChoice& c, int channels) {
  switch (c.kind) {
    case ExtractorChoice::Kind::none:
      return std::nullopt;
    case ExtractorChoice::Kind::random:
      return FeatureExtractor::random(channels, c.seed, c.width);
    case ExtractorChoice::Kind::file:
      return FeatureExtractor::load(c.path, c.sha256);
  }
  return std::nullopt;
}

// ---- figures ----

Image difference_image(const DifferenceMap& map) {
  Image img(map.height, map.width, 1);
  for (std::size_t i = 0; i < map.display.size(); ++i) img.pixels[i] = map.display[i];
  return img;
}

namespace {

Image to_rgb(const Image& src) {
  if (src.channels == 3) return src;
  Image out(src.height, src.width, 3);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = src.at(y, x, 0);
    }
  }
  return out;
}

Image upscale(const Image& src, int factor) {
  if (factor <= 1) return src;
  Image out(src.height * factor, src.width * factor, src.channels);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(y / factor, x / factor, c);
    }
  }
  return out;
}

std::string safe_name(const std::string& id) {
  std::string s = std::regex_replace(id, std::regex("[^A-Za-z0-9._-]+"), "_");
  return s.size() > 80 ? s.substr(s.size() - 80) : s;
}

}  // namespace

void write_triptych(const fs::path& png, const Reconstruction& r, int min_panel) {
  const auto map = difference_map(r);
  const int factor = std::max(1, (min_panel + r.original.width - 1) / std::max(1, r.original.width));
  const Image panels[3] = {upscale(to_rgb(r.original), factor), upscale(to_rgb(r.generated), factor),
                           upscale(to_rgb(difference_image(map)), factor)};
  const int gap = 4;
  const int w = panels[0].width, h = panels[0].height;
  Image out(h, 3 * w + 2 * gap, 3, 1.0f);
  for (int p = 0; p < 3; ++p) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) out.at(y, p * (w + gap) + x, c) = panels[p].at(y, x, c);
      }
    }
  }
  write_image(png, out);
}

void write_extreme_triptychs(const fs::path& dir, const std::vector<Reconstruction>& recs,
                             const std::vector<ScoreRecord>& scores, int k) {
  std::vector<std::size_t> order(recs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a].sse > scores[b].sse; });
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, k)), order.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& top = recs[order[i]];
    const auto& bottom = recs[order[order.size() - 1 - i]];
    std::ostringstream a, b;
    a << "top_" << std::setw(2) << std::setfill('0') << i + 1 << "_" << to_string(top.label) << "_"
      << safe_name(top.source_id) << ".png";
    b << "bottom_" << std::setw(2) << std::setfill('0') << i + 1 << "_" << to_string(bottom.label) << "_"
      << safe_name(bottom.source_id) << ".png";
    write_triptych(dir / a.str(), top);
    write_triptych(dir / b.str(), bottom);
  }
}

// ---- experiment ----

namespace {

template <typename Fn>
auto stage(int run, const char* name, Fn&& fn) -> decltype(fn()) {
  const std::string where = (run >= 0 ? "run " + std::to_string(run) + ", " : std::string()) + "stage " + name + ": ";
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), where + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::data, where + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(17) << j.dump(2) << '\n';
}

json run_metrics_json(const RunMetrics& r) {
  json j = json::object();
  for (const auto& [m, t] : r.metrics) {
    j[to_string(m)] = {{"zfn_acc", t.zfn_acc}, {"max_acc", t.max_acc}, {"auc", t.auc},
                       {"zfn_tau", t.zfn_tau}, {"acc_tau", std::isfinite(t.acc_tau) ? json(t.acc_tau) : json("-inf")}};
  }
  return j;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentManifest& m, const ExperimentOptions& options) {
  m.validate();
  auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };
  fs::create_directories(m.out);
  write_json(m.out / "manifest.json", to_json(m));

  const LabeledImageSet set = stage(-1, "dataset", [&] { return resolve_dataset(m); });
  log("dataset " + m.dataset_name + ": " + std::to_string(set.count(Label::normal)) + " normal, " +
      std::to_string(set.count(Label::abnormal)) + " abnormal at " + std::to_string(m.train.generator.resolution) +
      "px");
  const auto extractor = stage(-1, "extractor", [&] { return make_extractor(m.extractor, m.train.generator.in_channels); });
  const auto policy = AugmentPolicy::from_name(m.augment);

  ExperimentResult result;
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < m.n_runs; ++i) {
    const std::uint64_t seed = m.base_seed + static_cast<std::uint64_t>(i);
    seeds.push_back(seed);
    const fs::path dir = m.out / ("run_" + std::to_string(i));
    stage(i, "setup", [&] {
      fs::create_directories(dir);
      write_json(dir / "run.json", {{"run", i}, {"seed", seed}, {"dataset", m.dataset_name}});
    });

    const SplitPair split = stage(i, "split", [&] {
      SplitPair s = make_split(set, seed);
      write_split_record(dir / "split.json", split_record(s));
      return s;
    });
    log("run " + std::to_string(i) + " (seed " + std::to_string(seed) + "): train " + std::to_string(split.train.size()) +
        ", test " + std::to_string(split.test.size()));

    TrainConfig cfg = m.train;
    cfg.seed = seed;
    const TrainResult trained = stage(i, "train", [&] {
      SplitPair augmented{augment(split.train, policy), split.test, split.seed};
      TrainOptions opts;
      opts.out_dir = dir;
      opts.callbacks = options.train_callbacks;
      auto user_epoch = options.train_callbacks.on_epoch_end;
      opts.callbacks.on_epoch_end = [&, user_epoch](int epoch, const TrainState& st) {
        if (epoch % 10 == 0 || epoch == cfg.epochs) {
          log("run " + std::to_string(i) + " epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.epochs));
        }
        if (user_epoch) user_epoch(epoch, st);
      };
      return train(cfg, augmented, opts);
    });
    const fs::path final_ckpt = trained.checkpoints.back();

    const auto recs = stage(i, "reconstruct", [&] { return reconstruct_all(load_generator(final_ckpt), split.test); });
    const auto scores = stage(i, "score", [&] {
      auto s = score_all(recs, extractor ? &*extractor : nullptr);
      write_scores(dir / "scores.csv", s, sha256_file(final_ckpt));
      return s;
    });
    const RunMetrics run = stage(i, "evaluate", [&] {
      RunMetrics r = evaluate_run(dir / "scores.csv");
      write_json(dir / "metrics.json", run_metrics_json(r));
      return r;
    });
    stage(i, "figures", [&] {
      for (const auto& [metric, t] : run.metrics) {
        plot_histogram(dir / "figs" / ("hist_" + to_string(metric) + ".png"), scores, metric,
                       m.dataset_name + " run " + std::to_string(i));
      }
      write_extreme_triptychs(dir / "figs", recs, scores, m.top_k);
      return 0;
    });
    const auto& sse = run.metrics.at(ScoreMetric::sse);
    std::ostringstream msg;
    msg << std::fixed << std::setprecision(2) << "run " << i << " SSE: ZFN " << 100 * sse.zfn_acc << "%, ACC "
        << 100 * sse.max_acc << "%, AUC " << 100 * sse.auc << "%";
    log(msg.str());
    result.runs.push_back(run);
  }

  result.report = aggregate_runs(result.runs, m.dataset_name, seeds);
  write_report(m.out / "report.json", m.out / "report.txt", result.report);
  return result;
}

MetricsReport regenerate_report(const fs::path& out_dir) {
  std::vector<std::pair<int, fs::path>> dirs;
  if (!fs::is_directory(out_dir)) throw DataError("not a directory: " + out_dir.string());
  const std::regex pattern("run_([0-9]+)");
  for (const auto& e : fs::directory_iterator(out_dir)) {
    std::smatch match;
    const std::string name = e.path().filename().string();
    if (e.is_directory() && std::regex_match(name, match, pattern) && fs::exists(e.path() / "scores.csv")) {
      dirs.emplace_back(std::stoi(match[1]), e.path());
    }
  }
  if (dirs.empty()) throw DataError("no run_<i>/scores.csv under " + out_dir.string());
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunMetrics> runs;
  std::vector<std::uint64_t> seeds;
  std::string dataset;
  for (const auto& [idx, dir] : dirs) {
    runs.push_back(evaluate_run(dir / "scores.csv"));
    if (fs::exists(dir / "run.json")) {
      std::ifstream in(dir / "run.json");
      const json j = json::parse(in);
      seeds.push_back(j.at("seed").get<std::uint64_t>());
      dataset = j.value("dataset", dataset);
    }
  }
  if (seeds.size() != runs.size()) seeds.clear();
  return aggregate_runs(runs, dataset, seeds);
}

// ---- demo ----

DemoResult demo_reconstruct(const fs::path& checkpoint, const fs::path& image_path, const fs::path& out_dir,
                            const FeatureExtractor* extractor) {
  if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint.string());
  if (!fs::exists(image_path)) throw DataError("image not found: " + image_path.string());
  const Generator<float> G = load_generator(checkpoint);
  const auto& spec = G.spec();
  DemoResult out;
  Image img = read_image(image_path, spec.in_channels == 1);
  if (img.size() == 0) throw DataError("cannot decode image " + image_path.string());
  if (img.height != spec.resolution || img.width != spec.resolution) {
    out.notices.push_back("resampled " + std::to_string(img.height) + "x" + std::to_string(img.width) + " input to " +
                          std::to_string(spec.resolution) + "x" + std::to_string(spec.resolution));
    img = resize_bicubic(img, spec.resolution, spec.resolution);
  }
  LabeledImage li{img, Label::normal, image_path.filename().string(), {}};
  out.reconstruction = reconstruct(G, li);
  out.sse = sse_score(out.reconstruction.original, out.reconstruction.generated);
  if (extractor) out.fid = fid_score(*extractor, out.reconstruction);

  fs::create_directories(out_dir);
  write_image(out_dir / "original.png", out.reconstruction.original);
  write_image(out_dir / "generated.png", out.reconstruction.generated);
  write_image(out_dir / "difference.png", difference_image(difference_map(out.reconstruction)));
  write_triptych(out_dir / "triptych.png", out.reconstruction);
  std::ofstream txt(out_dir / "scores.txt", std::ios::trunc);
  txt << std::setprecision(10) << "image " << image_path.string() << "\ncheckpoint " << checkpoint.string()
      << "\nsse " << out.sse << "\n";
  if (out.fid) txt << "fid " << *out.fid << "\n";
  for (const auto& n : out.notices) txt << "notice " << n << "\n";
  return out;
}

}  // namespace cyclead
