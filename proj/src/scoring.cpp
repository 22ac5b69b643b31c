#include "cyclead/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "cyclead/container.hpp"
#include "cyclead/error.hpp"
#include "cyclead/version.hpp"

namespace cyclead {

namespace fs = std::filesystem;

// ---- reconstruction ----

namespace {

void check_input(const Generator<float>& G, const LabeledImage& img) {
  const auto& s = G.spec();
  if (img.pixels.height != s.resolution || img.pixels.width != s.resolution || img.pixels.channels != s.in_channels) {
    throw ShapeError("image " + img.source_id + " is " + std::to_string(img.pixels.height) + "x" +
                     std::to_string(img.pixels.width) + "x" + std::to_string(img.pixels.channels) +
                     ", generator expects " + std::to_string(s.resolution) + "x" + std::to_string(s.resolution) +
                     "x" + std::to_string(s.in_channels));
  }
}

void check_same(const Image& a, const Image& b) {
  if (!a.same_extent(b)) {
    throw ShapeError("image extents differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) + "x" +
                     std::to_string(a.channels) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + "x" + std::to_string(b.channels));
  }
}

}  // namespace

Reconstruction reconstruct(const Generator<float>& G, const LabeledImage& image) {
  check_input(G, image);
  const auto out = G(to_model_tensor(image.pixels));
  return {image.pixels, from_model_tensor(out, 0), image.source_id, image.label};
}

std::vector<Reconstruction> reconstruct_all(const Generator<float>& G, const LabeledImageSet& set, int batch_size) {
  std::vector<Reconstruction> out;
  out.reserve(set.size());
  const std::size_t b = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t first = 0; first < set.size(); first += b) {
    const std::size_t last = std::min(set.size(), first + b);
    std::vector<const Image*> batch;
    for (std::size_t i = first; i < last; ++i) {
      check_input(G, set[i]);
      batch.push_back(&set[i].pixels);
    }
    const auto gen = G(to_model_tensor(batch));
    for (std::size_t i = first; i < last; ++i) {
      out.push_back({set[i].pixels, from_model_tensor(gen, static_cast<int>(i - first)), set[i].source_id,
                     set[i].label});
    }
  }
  return out;
}

// ---- SSE and difference maps ----

namespace {

// Both sse_score and difference_map go through this so sums agree exactly.
std::vector<double> pixel_errors(const Image& a, const Image& b) {
  check_same(a, b);
  const std::size_t n = static_cast<std::size_t>(a.height) * a.width;
  std::vector<double> raw(n, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    double s = 0;
    for (int c = 0; c < a.channels; ++c) {
      const double d = static_cast<double>(a.pixels[p * a.channels + c]) - b.pixels[p * a.channels + c];
      s += d * d;
    }
    raw[p] = s;
  }
  return raw;
}

double ordered_sum(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

double sse_score(const Image& original, const Image& generated) {
  return ordered_sum(pixel_errors(original, generated));
}

double DifferenceMap::sum() const { return ordered_sum(raw); }

DifferenceMap difference_map(const Image& original, const Image& generated) {
  DifferenceMap m;
  m.height = original.height;
  m.width = original.width;
  m.raw = pixel_errors(original, generated);
  const double peak = m.raw.empty() ? 0.0 : *std::max_element(m.raw.begin(), m.raw.end());
  m.display.resize(m.raw.size(), 0.0f);
  if (peak > 0) {
    for (std::size_t i = 0; i < m.raw.size(); ++i) m.display[i] = static_cast<float>(m.raw[i] / peak);
  }
  return m;
}

// ---- feature statistics ----

namespace {

template <typename T>
FeatureStats grid_stats_impl(const Tensor<T>& grid) {
  const Shape& s = grid.shape();
  if (s.n != 1) throw ShapeError("feature grid must hold one sample, got " + s.str());
  const int n = s.h * s.w;
  if (n < 2) {
    throw InsufficientSamplesError("feature grid has " + std::to_string(n) +
                                   " spatial position(s); covariance needs at least 2");
  }
  Eigen::MatrixXd rows(n, s.c);
  for (int c = 0; c < s.c; ++c) {
    const T* plane = grid.data() + static_cast<std::size_t>(c) * n;
    for (int i = 0; i < n; ++i) rows(i, c) = static_cast<double>(plane[i]);
  }
  FeatureStats st;
  st.n_samples = n;
  st.mu = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - st.mu.transpose();
  st.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
  st.sigma = 0.5 * (st.sigma + st.sigma.transpose());
  return st;
}

struct SqrtTrace {
  double value = 0;
  double min_eig = 0;
  double max_eig = 0;
  bool ok = false;
};

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m, double& min_eig, double& max_eig) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) {
    min_eig = max_eig = std::nan("");
    return {};
  }
  const Eigen::VectorXd ev = es.eigenvalues();
  min_eig = ev.minCoeff();
  max_eig = ev.maxCoeff();
  const Eigen::VectorXd root = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

SqrtTrace sqrt_product_trace(const Eigen::MatrixXd& s1, const Eigen::MatrixXd& s2) {
  SqrtTrace out;
  double lo1 = 0, hi1 = 0;
  const Eigen::MatrixXd r1 = sym_sqrt(s1, lo1, hi1);
  if (!std::isfinite(lo1)) return out;
  Eigen::MatrixXd m = r1 * s2 * r1;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) return out;
  const Eigen::VectorXd ev = es.eigenvalues();
  out.min_eig = std::min(lo1, ev.minCoeff());
  out.max_eig = std::max(hi1, ev.maxCoeff());
  const double scale = std::max({1.0, std::abs(out.max_eig), s1.trace(), s2.trace()});
  // A clearly negative eigenvalue means an input was not PSD.
  out.ok = std::isfinite(ev.sum()) && out.min_eig >= -1e-10 * scale;
  out.value = ev.cwiseMax(0.0).cwiseSqrt().sum();
  return out;
}

}  // namespace

FeatureStats grid_stats(const Tensor<double>& grid) { return grid_stats_impl(grid); }
FeatureStats grid_stats(const Tensor<float>& grid) { return grid_stats_impl(grid); }

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  const auto d = a.mu.size();
  if (b.mu.size() != d || a.sigma.rows() != d || a.sigma.cols() != d || b.sigma.rows() != d || b.sigma.cols() != d) {
    throw ShapeError("feature dimensions differ: " + std::to_string(a.mu.size()) + " vs " +
                     std::to_string(b.mu.size()));
  }
  // identical Gaussians: skip the sqrt so roundoff can't leave a residue
  if (a.mu == b.mu && a.sigma == b.sigma) return 0.0;
  Eigen::MatrixXd s1 = 0.5 * (a.sigma + a.sigma.transpose());
  Eigen::MatrixXd s2 = 0.5 * (b.sigma + b.sigma.transpose());
  SqrtTrace tr = sqrt_product_trace(s1, s2);
  if (!tr.ok) {
    const Eigen::MatrixXd eps = kCovarianceEpsilon * Eigen::MatrixXd::Identity(d, d);
    s1 += eps;
    s2 += eps;
    tr = sqrt_product_trace(s1, s2);
    if (!tr.ok) {
      std::ostringstream msg;
      msg << "matrix square root failed after eps regularization (eigenvalues in [" << tr.min_eig << ", "
          << tr.max_eig << "], condition ~ " << std::abs(tr.max_eig) / std::max(std::abs(tr.min_eig), 1e-300) << ")";
      throw NumericalError(msg.str());
    }
  }
  const double dist = (a.mu - b.mu).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr.value;
  if (!std::isfinite(dist)) throw NumericalError("non-finite Frechet distance");
  if (dist < 0) {
    const double tol = 1e-6 * std::max(1.0, s1.trace() + s2.trace());
    if (dist < -tol) throw NumericalError("Frechet distance is negative beyond tolerance: " + std::to_string(dist));
    return 0.0;
  }
  return dist;
}

// ---- feature extractor ----

FeatureExtractor::FeatureExtractor(std::vector<ExtractorLayer> layers, std::string name)
    : layers_(std::move(layers)), name_(std::move(name)) {
  if (layers_.empty()) throw SpecError("feature extractor needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const Shape& w = l.weight.shape();
    if (w.h != w.w || l.bias.shape() != Shape{1, w.n, 1, 1}) {
      throw SpecError("extractor layer " + std::to_string(i) + " has inconsistent shapes");
    }
    if (i > 0 && w.c != layers_[i - 1].weight.shape().n) {
      throw SpecError("extractor layer " + std::to_string(i) + " input channels do not chain");
    }
    if (l.stride < 1 || l.padding < 0) throw SpecError("extractor layer " + std::to_string(i) + " geometry invalid");
  }
}

FeatureExtractor FeatureExtractor::random(int in_channels, std::uint64_t seed, int width) {
  if (in_channels < 1 || width < 1) throw SpecError("random extractor needs positive channel counts");
  std::mt19937_64 rng(derive_seed(seed, 0x5eed));
  std::vector<ExtractorLayer> layers;
  int prev = in_channels;
  for (int stride : {1, 2, 2}) {
    ExtractorLayer l;
    l.weight = Tensor<float>(Shape{width, prev, 3, 3});
    l.bias = Tensor<float>(Shape{1, width, 1, 1});
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (prev * 9)));
    for (auto& v : l.weight.storage()) v = static_cast<float>(dist(rng));
    l.stride = stride;
    l.padding = 1;
    layers.push_back(std::move(l));
    prev = width;
  }
  return FeatureExtractor(std::move(layers), "random-conv(seed=" + std::to_string(seed) + ")");
}

FeatureExtractor FeatureExtractor::load(const fs::path& path, const std::string& expected_sha256) {
  if (!expected_sha256.empty()) {
    const auto got = sha256_file(path);
    if (got != expected_sha256) {
      throw DataError("extractor weights " + path.string() + " have sha256 " + got + ", expected " + expected_sha256);
    }
  }
  const Container c = read_container(path);
  if (c.meta.value("format", "") != "cyclead-extractor") throw DataError(path.string() + " is not an extractor file");
  std::vector<ExtractorLayer> layers;
  const auto& spec = c.meta.at("layers");
  for (std::size_t i = 0; i < spec.size(); ++i) {
    ExtractorLayer l;
    l.weight = c.tensor("layer" + std::to_string(i) + ".weight");
    l.bias = c.tensor("layer" + std::to_string(i) + ".bias");
    l.stride = spec[i].at("stride").get<int>();
    l.padding = spec[i].at("padding").get<int>();
    l.relu = spec[i].at("relu").get<bool>();
    layers.push_back(std::move(l));
  }
  return FeatureExtractor(std::move(layers), c.meta.value("name", path.filename().string()));
}

void FeatureExtractor::save(const fs::path& path) const {
  Container c;
  c.meta["format"] = "cyclead-extractor";
  c.meta["name"] = name_;
  c.meta["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    c.meta["layers"].push_back({{"stride", l.stride}, {"padding", l.padding}, {"relu", l.relu}});
    c.tensors.emplace_back("layer" + std::to_string(i) + ".weight", l.weight);
    c.tensors.emplace_back("layer" + std::to_string(i) + ".bias", l.bias);
  }
  write_container(path, c);
}

int FeatureExtractor::in_channels() const { return layers_.front().weight.shape().c; }
int FeatureExtractor::out_channels() const { return layers_.back().weight.shape().n; }

Tensor<float> FeatureExtractor::grid(const Image& image) const {
  if (image.channels != in_channels()) {
    throw ShapeError("extractor expects " + std::to_string(in_channels()) + " channels, image has " +
                     std::to_string(image.channels));
  }
  auto x = Var<float>::constant(to_model_tensor(image));
  for (const auto& l : layers_) {
    x = ops::conv2d(x, Var<float>::constant(l.weight), Var<float>::constant(l.bias),
                    ops::ConvGeometry{l.weight.shape().h, l.stride, l.padding});
    if (l.relu) x = ops::relu(x);
  }
  return x.value();
}

FeatureStats extract_features(const FeatureExtractor& extractor, const Image& image) {
  return grid_stats(extractor.grid(image));
}

double fid_score(const FeatureExtractor& extractor, const Reconstruction& r) {
  check_same(r.original, r.generated);
  return frechet_distance(extract_features(extractor, r.original), extract_features(extractor, r.generated));
}

// ---- records ----

ScoreRecord score(const Reconstruction& r, const FeatureExtractor* extractor) {
  ScoreRecord rec{r.source_id, r.label, sse_score(r.original, r.generated), std::nullopt};
  if (extractor) rec.fid = fid_score(*extractor, r);
  return rec;
}

std::vector<ScoreRecord> score_all(const std::vector<Reconstruction>& recs, const FeatureExtractor* extractor) {
  std::vector<ScoreRecord> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(score(r, extractor));
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

std::vector<std::string> split_csv(const std::string& line, const std::string& source, std::size_t lineno) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (quoted) throw ParseError(source, lineno, "unterminated quoted field");
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, const std::string& what, const std::string& source, std::size_t lineno) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError(source, lineno, what + " '" + s + "' is not a number");
  }
  if (used != s.size()) throw ParseError(source, lineno, what + " '" + s + "' is not a number");
  if (!std::isfinite(v)) throw ParseError(source, lineno, what + " is not finite");
  if (v < 0) throw ParseError(source, lineno, what + " is negative");
  return v;
}

}  // namespace

void write_scores(const fs::path& path, const std::vector<ScoreRecord>& records, const std::string& checkpoint_sha256) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# cyclead-scores artifact_version=" << kArtifactVersion << " format_version=" << kScoresFormatVersion
      << " checkpoint_sha256=" << (checkpoint_sha256.empty() ? "none" : checkpoint_sha256) << '\n';
  out << "source_id,label,sse,fid\n";
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << csv_field(r.source_id) << ',' << to_string(r.label) << ',' << r.sse << ',';
    if (r.fid) out << *r.fid;
    out << '\n';
  }
}

ScoresFile read_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scores file " + path.string());
  const std::string source = path.string();
  ScoresFile file;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream words(line.substr(1));
      std::string w;
      while (words >> w) {
        const auto eq = w.find('=');
        if (eq == std::string::npos) continue;
        const auto key = w.substr(0, eq);
        const auto val = w.substr(eq + 1);
        if (key == "artifact_version") file.artifact_version = val;
        if (key == "checkpoint_sha256") file.checkpoint_sha256 = val;
      }
      continue;
    }
    const auto fields = split_csv(line, source, lineno);
    if (!header) {
      if (fields.size() < 3 || fields[0] != "source_id" || fields[1] != "label" || fields[2] != "sse") {
        throw ParseError(source, lineno, "expected header 'source_id,label,sse[,fid]'");
      }
      header = true;
      continue;
    }
    if (fields.size() < 3 || fields.size() > 4) {
      throw ParseError(source, lineno, "expected 3 or 4 fields, got " + std::to_string(fields.size()));
    }
    ScoreRecord r;
    r.source_id = fields[0];
    if (r.source_id.empty()) throw ParseError(source, lineno, "empty source_id");
    try {
      r.label = label_from_string(fields[1]);
    } catch (const Error&) {
      throw ParseError(source, lineno, "unknown label '" + fields[1] + "'");
    }
    r.sse = parse_number(fields[2], "sse", source, lineno);
    if (fields.size() == 4 && !fields[3].empty()) r.fid = parse_number(fields[3], "fid", source, lineno);
    file.records.push_back(std::move(r));
  }
  if (!header) throw ParseError(source, lineno, "missing header row");
  return file;
}

}  // namespace cyclead
