#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cyclead/image.hpp"

namespace cyclead {

// normal = domain Y, abnormal = domain X.
enum class Label { normal, abnormal };

std::string to_string(Label label);
Label label_from_string(const std::string& s);

struct DefectMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  std::size_t area() const;
  bool contains(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x] != 0; }
  bool operator==(const DefectMask&) const = default;
};

struct ImageMetadata {
  std::string subclass;  // abnormal sub-class directory, merged into one label
  std::optional<DefectMask> defect_mask;
  std::optional<std::uint64_t> background_seed;
  bool operator==(const ImageMetadata&) const = default;
};

struct LabeledImage {
  Image pixels;
  Label label = Label::normal;
  std::string source_id;
  ImageMetadata meta;

  bool operator==(const LabeledImage&) const = default;
};

// Immutable once constructed; per-label counts are cached.
class LabeledImageSet {
 public:
  LabeledImageSet() = default;
  LabeledImageSet(std::string name, std::vector<LabeledImage> images);

  const std::string& name() const { return name_; }
  const std::vector<LabeledImage>& images() const { return images_; }
  const LabeledImage& operator[](std::size_t i) const { return images_[i]; }
  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  std::size_t count(Label label) const { return counts_[static_cast<std::size_t>(label)]; }

  // Indices of every image carrying `label`, in set order.
  std::vector<std::size_t> indices(Label label) const;

  bool operator==(const LabeledImageSet&) const = default;

 private:
  std::string name_;
  std::vector<LabeledImage> images_;
  std::array<std::size_t, 2> counts_{0, 0};
};

// ---- loading ----

struct LoadReport {
  std::size_t loaded = 0;
  std::vector<std::pair<std::string, std::string>> skipped;  // (path, reason)
  std::vector<std::string> excluded;                          // source_ids removed by manifest
  std::string resample_kernel = "bicubic catmull-rom (a = -0.5)";
};

struct LoadedDataset {
  LabeledImageSet set;
  LoadReport report;
};

// Expects <root>/normal and <root>/abnormal. Files inside sub-directories of
// abnormal/ are merged into the abnormal label with the sub-directory kept as
// metadata. Source ids are paths relative to root.
LoadedDataset load_dataset(const std::filesystem::path& root, bool grayscale,
                           const std::vector<std::string>& exclusions = {});

// One source_id per line; blank lines and '#' comments ignored.
std::vector<std::string> read_exclusion_manifest(const std::filesystem::path& path);

// ---- splitting ----

struct SplitPair {
  LabeledImageSet train;
  LabeledImageSet test;
  std::uint64_t seed = 0;
};

// Balanced test set: half (floored) of the minority class plus as many
// randomly drawn majority images; everything else goes to train.
SplitPair make_split(const LabeledImageSet& set, std::uint64_t seed);

struct SplitRecord {
  std::string dataset;
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

SplitRecord split_record(const SplitPair& split);
void write_split_record(const std::filesystem::path& path, const SplitRecord& record);
SplitRecord read_split_record(const std::filesystem::path& path);
// Rebuilds a split from a record; every id must exist in `set`.
SplitPair apply_split_record(const LabeledImageSet& set, const SplitRecord& record);

// ---- preprocessing ----

// Separable bicubic (Catmull-Rom) resampling with the kernel support widened
// by the scale factor when downsampling; output clamped to [0,1].
Image resize_bicubic(const Image& image, int out_height, int out_width);

LabeledImage preprocess(const LabeledImage& image, int resolution);
LabeledImageSet preprocess(const LabeledImageSet& set, int resolution);

// ---- augmentation ----

enum class Flip { none, horizontal, vertical };

// Rotation (counter-clockwise, multiple of 90 degrees) applied after the flip.
struct AugmentTransform {
  int rotation = 0;
  Flip flip = Flip::none;

  std::string tag() const;
  bool is_identity() const { return rotation == 0 && flip == Flip::none; }
  bool operator==(const AugmentTransform&) const = default;
};

struct AugmentPolicy {
  std::vector<AugmentTransform> transforms;

  std::size_t multiplier() const { return transforms.size(); }

  // The eight dihedral transforms plus a second identity (multiplier 9).
  static AugmentPolicy full();
  static AugmentPolicy identity();
  // Identity and horizontal flip only.
  static AugmentPolicy horizontal_flip();
  // Every rotation combined with every flip.
  static AugmentPolicy product(const std::vector<int>& rotations, const std::vector<Flip>& flips);
  // "full", "identity"/"none", "hflip".
  static AugmentPolicy from_name(const std::string& name);
};

Image apply_transform(const Image& image, const AugmentTransform& t);

// Image-major order: every transform of image 0, then of image 1, ...
LabeledImageSet augment(const LabeledImageSet& set, const AugmentPolicy& policy);

}  // namespace cyclead
