#include "cyclead/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "cyclead/error.hpp"

namespace fs = std::filesystem;

namespace cyclead {

std::string to_string(Label label) { return label == Label::normal ? "normal" : "abnormal"; }

Label label_from_string(const std::string& s) {
  if (s == "normal") return Label::normal;
  if (s == "abnormal") return Label::abnormal;
  throw DataError("unknown label '" + s + "'");
}

std::size_t DefectMask::area() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
}

LabeledImageSet::LabeledImageSet(std::string name, std::vector<LabeledImage> images)
    : name_(std::move(name)), images_(std::move(images)) {
  for (const auto& img : images_) ++counts_[static_cast<std::size_t>(img.label)];
}

std::vector<std::size_t> LabeledImageSet::indices(Label label) const {
  std::vector<std::size_t> out;
  out.reserve(count(label));
  for (std::size_t i = 0; i < images_.size(); ++i) {
    if (images_[i].label == label) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// loading

namespace {

bool has_image_extension(const fs::path& p) {
  static const std::set<std::string> kExt{".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"};
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return kExt.count(ext) > 0;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && has_image_extension(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

LoadedDataset load_dataset(const fs::path& root, bool grayscale,
                           const std::vector<std::string>& exclusions) {
  for (const char* sub : {"normal", "abnormal"}) {
    if (!fs::is_directory(root / sub)) {
      throw ConfigError("dataset root " + root.string() + " has no '" + sub + "/' directory");
    }
  }
  const std::unordered_set<std::string> excluded(exclusions.begin(), exclusions.end());
  LoadReport report;
  std::vector<LabeledImage> images;
  for (Label label : {Label::normal, Label::abnormal}) {
    const fs::path dir = root / to_string(label);
    for (const auto& file : list_images(dir)) {
      const std::string id = fs::relative(file, root).generic_string();
      if (excluded.count(id)) {
        report.excluded.push_back(id);
        continue;
      }
      Image img = read_image(file, grayscale);
      if (img.size() == 0) {
        report.skipped.emplace_back(file.string(), "unreadable or unsupported image");
        continue;
      }
      LabeledImage li{std::move(img), label, id, {}};
      const fs::path rel_parent = fs::relative(file.parent_path(), dir);
      if (label == Label::abnormal && rel_parent != ".") li.meta.subclass = rel_parent.generic_string();
      images.push_back(std::move(li));
    }
  }
  LabeledImageSet set(root.filename().string(), std::move(images));
  if (set.count(Label::normal) == 0 || set.count(Label::abnormal) == 0) {
    throw EmptyClassError("dataset " + root.string() + " has " +
                          std::to_string(set.count(Label::normal)) + " normal and " +
                          std::to_string(set.count(Label::abnormal)) + " abnormal images");
  }
  report.loaded = set.size();
  return {std::move(set), std::move(report)};
}

std::vector<std::string> read_exclusion_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open exclusion manifest " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(first, last - first + 1));
  }
  return ids;
}

// ---------------------------------------------------------------------------
// splitting

SplitPair make_split(const LabeledImageSet& set, std::uint64_t seed) {
  const std::size_t n_normal = set.count(Label::normal);
  const std::size_t n_abnormal = set.count(Label::abnormal);
  const Label minority = n_abnormal <= n_normal ? Label::abnormal : Label::normal;
  const Label majority = minority == Label::abnormal ? Label::normal : Label::abnormal;
  if (set.count(minority) < 2) {
    throw SplitInfeasibleError("minority class (" + to_string(minority) + ") has " +
                               std::to_string(set.count(minority)) +
                               " images; a balanced split needs at least 2");
  }
  {
    std::unordered_set<std::string> ids;
    for (const auto& img : set.images()) {
      if (!ids.insert(img.source_id).second) {
        throw DataError("duplicate source_id '" + img.source_id + "' cannot be split");
      }
    }
  }
  const std::size_t m = set.count(minority) / 2;

  std::mt19937_64 rng(seed);
  std::vector<bool> in_test(set.size(), false);
  for (Label label : {minority, majority}) {
    auto idx = set.indices(label);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < m; ++i) in_test[idx[i]] = true;
  }
  std::vector<LabeledImage> train, test;
  for (std::size_t i = 0; i < set.size(); ++i) (in_test[i] ? test : train).push_back(set[i]);
  return {LabeledImageSet(set.name() + "/train", std::move(train)),
          LabeledImageSet(set.name() + "/test", std::move(test)), seed};
}

SplitRecord split_record(const SplitPair& split) {
  SplitRecord r;
  const auto& name = split.train.name();
  r.dataset = name.substr(0, name.rfind('/'));
  r.seed = split.seed;
  for (const auto& img : split.train.images()) r.train_ids.push_back(img.source_id);
  for (const auto& img : split.test.images()) r.test_ids.push_back(img.source_id);
  return r;
}

void write_split_record(const fs::path& path, const SplitRecord& record) {
  nlohmann::json j;
  j["format"] = "cyclead-split";
  j["version"] = 1;
  j["dataset"] = record.dataset;
  j["seed"] = record.seed;
  j["train"] = record.train_ids;
  j["test"] = record.test_ids;
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split record " + path.string());
  out << j.dump(1) << '\n';
}

SplitRecord read_split_record(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open split record " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("format") != "cyclead-split") throw DataError("not a split record");
    SplitRecord r;
    r.dataset = j.at("dataset").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.train_ids = j.at("train").get<std::vector<std::string>>();
    r.test_ids = j.at("test").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed split record " + path.string() + ": " + e.what());
  }
}

SplitPair apply_split_record(const LabeledImageSet& set, const SplitRecord& record) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < set.size(); ++i) by_id.emplace(set[i].source_id, i);
  auto gather = [&](const std::vector<std::string>& ids) {
    std::vector<LabeledImage> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("split record references unknown source_id '" + id + "'");
      out.push_back(set[it->second]);
    }
    return out;
  };
  return {LabeledImageSet(set.name() + "/train", gather(record.train_ids)),
          LabeledImageSet(set.name() + "/test", gather(record.test_ids)), record.seed};
}

// ---------------------------------------------------------------------------
// preprocessing

namespace {

constexpr double kCubicA = -0.5;

double cubic_kernel(double x) {
  x = std::abs(x);
  if (x < 1.0) return ((kCubicA + 2.0) * x - (kCubicA + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * kCubicA;
  return 0.0;
}

struct Taps {
  int first = 0;
  std::vector<double> weights;
};

// Per-output-sample taps along one axis, normalized to unit sum.
std::vector<Taps> resample_taps(int in_size, int out_size) {
  const double scale = static_cast<double>(in_size) / out_size;
  const double filter_scale = std::max(scale, 1.0);
  const double support = 2.0 * filter_scale;
  std::vector<Taps> taps(out_size);
  for (int i = 0; i < out_size; ++i) {
    const double center = (i + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(center - support + 0.5));
    const int hi = std::min(in_size, static_cast<int>(center + support + 0.5));
    Taps& t = taps[i];
    t.first = lo;
    double total = 0.0;
    for (int x = lo; x < hi; ++x) {
      const double w = cubic_kernel((x - center + 0.5) / filter_scale);
      t.weights.push_back(w);
      total += w;
    }
    if (total != 0.0) {
      for (auto& w : t.weights) w /= total;
    }
  }
  return taps;
}

}  // namespace

Image resize_bicubic(const Image& image, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) throw ConfigError("resize target must be positive");
  const int c = image.channels;
  const auto htaps = resample_taps(image.width, out_width);
  const auto vtaps = resample_taps(image.height, out_height);

  std::vector<double> tmp(static_cast<std::size_t>(image.height) * out_width * c);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const Taps& t = htaps[x];
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.weights.size(); ++k) {
          acc += t.weights[k] * image.at(y, t.first + static_cast<int>(k), ch);
        }
        tmp[(static_cast<std::size_t>(y) * out_width + x) * c + ch] = acc;
      }
    }
  }
  Image out(out_height, out_width, c);
  for (int y = 0; y < out_height; ++y) {
    const Taps& t = vtaps[y];
    for (int x = 0; x < out_width; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.weights.size(); ++k) {
          acc += t.weights[k] *
                 tmp[((static_cast<std::size_t>(t.first) + k) * out_width + x) * c + ch];
        }
        out.at(y, x, ch) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
    }
  }
  return out;
}

namespace {

DefectMask resize_mask_nearest(const DefectMask& mask, int resolution) {
  DefectMask out{resolution, resolution, std::vector<std::uint8_t>(static_cast<std::size_t>(resolution) * resolution)};
  for (int y = 0; y < resolution; ++y) {
    const int sy = std::min(mask.height - 1, static_cast<int>((y + 0.5) * mask.height / resolution));
    for (int x = 0; x < resolution; ++x) {
      const int sx = std::min(mask.width - 1, static_cast<int>((x + 0.5) * mask.width / resolution));
      out.data[static_cast<std::size_t>(y) * resolution + x] = mask.data[static_cast<std::size_t>(sy) * mask.width + sx];
    }
  }
  return out;
}

}  // namespace

LabeledImage preprocess(const LabeledImage& image, int resolution) {
  if (resolution <= 0) throw ConfigError("resolution must be positive, got " + std::to_string(resolution));
  LabeledImage out = image;
  out.pixels = resize_bicubic(image.pixels, resolution, resolution);
  if (image.meta.defect_mask && (image.meta.defect_mask->height != resolution ||
                                 image.meta.defect_mask->width != resolution)) {
    out.meta.defect_mask = resize_mask_nearest(*image.meta.defect_mask, resolution);
  }
  return out;
}

LabeledImageSet preprocess(const LabeledImageSet& set, int resolution) {
  std::vector<LabeledImage> out;
  out.reserve(set.size());
  for (const auto& img : set.images()) out.push_back(preprocess(img, resolution));
  return LabeledImageSet(set.name(), std::move(out));
}

// ---------------------------------------------------------------------------
// augmentation

std::string AugmentTransform::tag() const {
  std::string t = "r" + std::to_string(rotation);
  if (flip == Flip::horizontal) t += "h";
  if (flip == Flip::vertical) t += "v";
  return t;
}

AugmentPolicy AugmentPolicy::full() {
  AugmentPolicy p;
  for (Flip f : {Flip::none, Flip::horizontal}) {
    for (int r : {0, 90, 180, 270}) p.transforms.push_back({r, f});
  }
  p.transforms.push_back({0, Flip::none});
  return p;
}

AugmentPolicy AugmentPolicy::identity() { return AugmentPolicy{{{0, Flip::none}}}; }

AugmentPolicy AugmentPolicy::horizontal_flip() {
  return AugmentPolicy{{{0, Flip::none}, {0, Flip::horizontal}}};
}

AugmentPolicy AugmentPolicy::product(const std::vector<int>& rotations, const std::vector<Flip>& flips) {
  AugmentPolicy p;
  for (Flip f : flips) {
    for (int r : rotations) {
      if (r % 90 != 0 || r < 0 || r >= 360) {
        throw ConfigError("rotation must be one of 0, 90, 180, 270; got " + std::to_string(r));
      }
      p.transforms.push_back({r, f});
    }
  }
  return p;
}

AugmentPolicy AugmentPolicy::from_name(const std::string& name) {
  if (name == "full") return full();
  if (name == "identity" || name == "none") return identity();
  if (name == "hflip") return horizontal_flip();
  throw ConfigError("unknown augmentation policy '" + name + "' (expected full|identity|hflip)");
}

Image apply_transform(const Image& image, const AugmentTransform& t) {
  if (t.is_identity()) return image;
  const int h = image.height;
  const int w = image.width;
  const int c = image.channels;
  const int quarter = ((t.rotation / 90) % 4 + 4) % 4;
  const bool swap = quarter % 2 == 1;
  Image out(swap ? w : h, swap ? h : w, c);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      // Undo the counter-clockwise rotation to find the flipped-image pixel.
      int fy = y, fx = x;
      switch (quarter) {
        case 1: fy = x; fx = w - 1 - y; break;
        case 2: fy = h - 1 - y; fx = w - 1 - x; break;
        case 3: fy = h - 1 - x; fx = y; break;
        default: break;
      }
      if (t.flip == Flip::horizontal) fx = w - 1 - fx;
      if (t.flip == Flip::vertical) fy = h - 1 - fy;
      for (int ch = 0; ch < c; ++ch) out.at(y, x, ch) = image.at(fy, fx, ch);
    }
  }
  return out;
}

namespace {

DefectMask transform_mask(const DefectMask& mask, const AugmentTransform& t) {
  Image as_image(mask.height, mask.width, 1);
  for (std::size_t i = 0; i < mask.data.size(); ++i) as_image.pixels[i] = mask.data[i];
  Image moved = apply_transform(as_image, t);
  DefectMask out{moved.height, moved.width, std::vector<std::uint8_t>(moved.pixels.size())};
  for (std::size_t i = 0; i < moved.pixels.size(); ++i) out.data[i] = moved.pixels[i] != 0.0f ? 1 : 0;
  return out;
}

}  // namespace

LabeledImageSet augment(const LabeledImageSet& set, const AugmentPolicy& policy) {
  if (policy.transforms.empty()) throw ConfigError("augmentation policy has no transforms");
  std::vector<LabeledImage> out;
  out.reserve(set.size() * policy.multiplier());
  for (const auto& img : set.images()) {
    for (const auto& t : policy.transforms) {
      LabeledImage copy = img;
      if (!t.is_identity()) {
        copy.pixels = apply_transform(img.pixels, t);
        copy.source_id += "@" + t.tag();
        if (img.meta.defect_mask) copy.meta.defect_mask = transform_mask(*img.meta.defect_mask, t);
      }
      out.push_back(std::move(copy));
    }
  }
  return LabeledImageSet(set.name(), std::move(out));
}

}  // namespace cyclead
