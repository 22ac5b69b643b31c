#pragma once

// Reconstruction through G and the per-image discrepancy scores (SSE and a
// Frechet distance between per-image feature statistics).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cyclead/dataset.hpp"
#include "cyclead/image.hpp"
#include "cyclead/model.hpp"

namespace cyclead {

struct Reconstruction {
  Image original;
  Image generated;  // in [0,1]
  std::string source_id;
  Label label = Label::normal;
};

Reconstruction reconstruct(const Generator<float>& G, const LabeledImage& image);
// Same as calling reconstruct per image, batched through the generator.
std::vector<Reconstruction> reconstruct_all(const Generator<float>& G, const LabeledImageSet& set,
                                            int batch_size = 8);

// Sum over pixels and channels of squared differences; no normalization.
double sse_score(const Image& original, const Image& generated);

struct DifferenceMap {
  int height = 0;
  int width = 0;
  std::vector<double> raw;     // channel-summed squared difference per pixel
  std::vector<float> display;  // raw / max(raw), all zero when raw is
  double sum() const;
};

DifferenceMap difference_map(const Image& original, const Image& generated);
inline DifferenceMap difference_map(const Reconstruction& r) { return difference_map(r.original, r.generated); }

// ---- feature statistics ----

struct FeatureStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  int n_samples = 0;
};

// Mean and unbiased covariance over the spatial positions of a [1,C,H,W]
// activation grid (rows = positions).
FeatureStats grid_stats(const Tensor<double>& grid);
FeatureStats grid_stats(const Tensor<float>& grid);

inline constexpr double kCovarianceEpsilon = 1e-6;

// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}). The square-root trace is
// taken as Tr((S1^{1/2} S2 S1^{1/2})^{1/2}) with symmetric eigensolves; eps*I
// is added to both covariances only if that product is not numerically PSD.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

struct ExtractorLayer {
  Tensor<float> weight;  // [Cout, Cin, k, k]
  Tensor<float> bias;    // [1, Cout, 1, 1]
  int stride = 1;
  int padding = 0;
  bool relu = true;
};

// Plain convolutional stack applied to images mapped to [-1,1]; the last
// layer's activation grid is the feature map.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::vector<ExtractorLayer> layers, std::string name);

  // Fixed random stand-in: 3x3 convs (stride 1, 2, 2) with He-scaled
  // Gaussian weights, giving an (H/4)x(W/4) grid of `width` channels.
  static FeatureExtractor random(int in_channels, std::uint64_t seed, int width = 32);
  // Loads weights written by save(); when `expected_sha256` is non-empty the
  // file digest must match it.
  static FeatureExtractor load(const std::filesystem::path& path, const std::string& expected_sha256 = {});
  void save(const std::filesystem::path& path) const;

  Tensor<float> grid(const Image& image) const;
  int in_channels() const;
  int out_channels() const;
  const std::string& name() const { return name_; }
  const std::vector<ExtractorLayer>& layers() const { return layers_; }

 private:
  std::vector<ExtractorLayer> layers_;
  std::string name_;
};

FeatureStats extract_features(const FeatureExtractor& extractor, const Image& image);
double fid_score(const FeatureExtractor& extractor, const Reconstruction& r);

// ---- score records ----

struct ScoreRecord {
  std::string source_id;
  Label label = Label::normal;
  double sse = 0;
  std::optional<double> fid;
};

ScoreRecord score(const Reconstruction& r, const FeatureExtractor* extractor);
std::vector<ScoreRecord> score_all(const std::vector<Reconstruction>& recs, const FeatureExtractor* extractor);

struct ScoresFile {
  std::string artifact_version;
  std::string checkpoint_sha256;
  std::vector<ScoreRecord> records;
};

// CSV with a leading '#' line carrying artifact version and checkpoint hash,
// then a header row source_id,label,sse,fid. fid is blank when absent.
void write_scores(const std::filesystem::path& path, const std::vector<ScoreRecord>& records,
                  const std::string& checkpoint_sha256);
ScoresFile read_scores(const std::filesystem::path& path);

}  // namespace cyclead
