#include "cyclead/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cyclead/error.hpp"
#include "cyclead/version.hpp"

namespace cyclead {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(ScoreMetric m) { return m == ScoreMetric::sse ? "sse" : "fid"; }

ScoreMetric score_metric_from_string(const std::string& s) {
  if (s == "sse") return ScoreMetric::sse;
  if (s == "fid") return ScoreMetric::fid;
  throw ConfigError("unknown score metric '" + s + "' (expected sse or fid)");
}

std::string to_string(PolicyKind p) { return p == PolicyKind::zfn ? "zfn" : "acc"; }

PolicyKind policy_from_string(const std::string& s) {
  if (s == "zfn") return PolicyKind::zfn;
  if (s == "acc") return PolicyKind::acc;
  throw ConfigError("unknown threshold policy '" + s + "' (expected zfn or acc)");
}

std::vector<double> metric_values(const std::vector<ScoreRecord>& records, ScoreMetric metric) {
  std::vector<double> v;
  v.reserve(records.size());
  for (const auto& r : records) {
    double s = r.sse;
    if (metric == ScoreMetric::fid) {
      if (!r.fid) throw CalibrationError("record " + r.source_id + " has no fid score");
      s = *r.fid;
    }
    if (std::isnan(s)) throw CalibrationError("record " + r.source_id + " has a NaN score");
    v.push_back(s);
  }
  return v;
}

namespace {

struct Counts {
  std::size_t abnormal = 0;
  std::size_t normal = 0;
};

Counts class_counts(const std::vector<ScoreRecord>& records) {
  Counts c;
  for (const auto& r : records) (r.label == Label::abnormal ? c.abnormal : c.normal) += 1;
  return c;
}

void require_both(const std::vector<ScoreRecord>& records, const char* what) {
  const Counts c = class_counts(records);
  if (c.abnormal == 0 || c.normal == 0) {
    throw CalibrationError(std::string(what) + " needs both classes (abnormal " + std::to_string(c.abnormal) +
                           ", normal " + std::to_string(c.normal) + ")");
  }
}

}  // namespace

Confusion confusion_at(const std::vector<ScoreRecord>& records, ScoreMetric metric, double tau) {
  const auto v = metric_values(records, metric);
  Confusion c;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool flagged = v[i] >= tau;
    if (records[i].label == Label::abnormal) {
      (flagged ? c.tp : c.fn) += 1;
    } else {
      (flagged ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

double zfn_threshold(const std::vector<ScoreRecord>& records, ScoreMetric metric) {
  const auto v = metric_values(records, metric);
  double tau = std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (records[i].label == Label::abnormal) {
      tau = std::min(tau, v[i]);
      any = true;
    }
  }
  if (!any) throw CalibrationError("ZFN threshold needs at least one abnormal record");
  return tau;
}

AccThreshold acc_threshold(const std::vector<ScoreRecord>& records, ScoreMetric metric) {
  require_both(records, "ACC threshold");
  const auto v = metric_values(records, metric);
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  const Counts total = class_counts(records);

  // tau = -inf flags everything.
  Confusion cur{total.abnormal, total.normal, 0, 0};
  AccThreshold best{-std::numeric_limits<double>::infinity(), cur.accuracy(), cur};
  std::size_t i = 0;
  while (i < order.size()) {
    const double tau = v[order[i]];
    // Confusion at tau: everything strictly below tau is unflagged.
    if (cur.accuracy() >= best.accuracy) best = {tau, cur.accuracy(), cur};
    while (i < order.size() && v[order[i]] == tau) {
      if (records[order[i]].label == Label::abnormal) {
        --cur.tp;
        ++cur.fn;
      } else {
        --cur.fp;
        ++cur.tn;
      }
      ++i;
    }
  }
  return best;
}

double auc_roc(const std::vector<ScoreRecord>& records, ScoreMetric metric) {
  require_both(records, "AUCROC");
  const auto v = metric_values(records, metric);
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  // Sum of mid-ranks of abnormal records (ranks from 1).
  double rank_sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (records[order[k]].label == Label::abnormal) rank_sum += mid;
    }
    i = j;
  }
  const Counts c = class_counts(records);
  const double na = static_cast<double>(c.abnormal);
  const double nn = static_cast<double>(c.normal);
  return (rank_sum - na * (na + 1) / 2) / (na * nn);
}

// ---- runs ----

RunMetrics evaluate_scores(const std::vector<ScoreRecord>& records) {
  require_both(records, "evaluation");
  RunMetrics run;
  std::vector<ScoreMetric> metrics{ScoreMetric::sse};
  if (std::all_of(records.begin(), records.end(), [](const ScoreRecord& r) { return r.fid.has_value(); })) {
    metrics.push_back(ScoreMetric::fid);
  }
  for (const auto m : metrics) {
    MetricTriple t;
    t.zfn_tau = zfn_threshold(records, m);
    t.zfn_acc = confusion_at(records, m, t.zfn_tau).accuracy();
    const auto acc = acc_threshold(records, m);
    t.acc_tau = acc.tau;
    t.max_acc = acc.accuracy;
    t.auc = auc_roc(records, m);
    run.metrics[m] = t;
  }
  return run;
}

RunMetrics evaluate_run(const fs::path& scores_file) {
  RunMetrics run = evaluate_scores(read_scores(scores_file).records);
  run.source = scores_file.string();
  return run;
}

namespace {

CellStats cell(const std::vector<double>& fractions) {
  CellStats c;
  for (double f : fractions) c.values.push_back(100.0 * f);
  const double n = static_cast<double>(c.values.size());
  c.mean = std::accumulate(c.values.begin(), c.values.end(), 0.0) / n;
  double ss = 0;
  for (double v : c.values) ss += (v - c.mean) * (v - c.mean);
  c.std = std::sqrt(ss / n);
  return c;
}

}  // namespace

MetricsReport aggregate_runs(const std::vector<RunMetrics>& runs, const std::string& dataset,
                             const std::vector<std::uint64_t>& seeds) {
  if (runs.empty()) throw AggregationError("no runs to aggregate");
  for (std::size_t i = 1; i < runs.size(); ++i) {
    bool same = runs[i].metrics.size() == runs[0].metrics.size();
    for (const auto& [m, t] : runs[0].metrics) same = same && runs[i].metrics.count(m);
    if (!same) {
      throw AggregationError("run " + std::to_string(i) + " (" + runs[i].source +
                             ") has a different set of score metrics than run 0");
    }
  }
  MetricsReport report;
  report.dataset = dataset;
  report.seeds = seeds;
  for (const auto& [m, first] : runs[0].metrics) {
    std::vector<double> z, a, u;
    for (const auto& r : runs) {
      const auto& t = r.metrics.at(m);
      z.push_back(t.zfn_acc);
      a.push_back(t.max_acc);
      u.push_back(t.auc);
    }
    report.cells[m] = {cell(z), cell(a), cell(u)};
  }
  return report;
}

namespace {

json cell_json(const CellStats& c) { return {{"mean", c.mean}, {"std", c.std}, {"values", c.values}}; }

CellStats cell_from_json(const json& j) {
  CellStats c;
  c.mean = j.at("mean").get<double>();
  c.std = j.at("std").get<double>();
  c.values = j.at("values").get<std::vector<double>>();
  return c;
}

bool same_cell(const CellStats& a, const CellStats& b) {
  return a.mean == b.mean && a.std == b.std && a.values == b.values;
}

}  // namespace

bool MetricsReport::operator==(const MetricsReport& o) const {
  if (dataset != o.dataset || seeds != o.seeds || std_kind != o.std_kind ||
      threshold_protocol != o.threshold_protocol || cells.size() != o.cells.size()) {
    return false;
  }
  for (const auto& [m, c] : cells) {
    const auto it = o.cells.find(m);
    if (it == o.cells.end()) return false;
    if (!same_cell(c.zfn, it->second.zfn) || !same_cell(c.acc, it->second.acc) || !same_cell(c.auc, it->second.auc)) {
      return false;
    }
  }
  return true;
}

json to_json(const MetricsReport& r) {
  json j;
  j["format"] = "cyclead-report";
  j["artifact_version"] = kArtifactVersion;
  j["dataset"] = r.dataset;
  j["seeds"] = r.seeds;
  j["std_kind"] = r.std_kind;
  j["threshold_protocol"] = r.threshold_protocol;
  j["caveat"] = kCalibrationCaveat;
  j["units"] = "percent";
  j["metrics"] = json::object();
  for (const auto& [m, c] : r.cells) {
    j["metrics"][to_string(m)] = {{"zfn", cell_json(c.zfn)}, {"acc", cell_json(c.acc)}, {"auc", cell_json(c.auc)}};
  }
  return j;
}

MetricsReport metrics_report_from_json(const json& j) {
  MetricsReport r;
  try {
    r.dataset = j.at("dataset").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.std_kind = j.at("std_kind").get<std::string>();
    r.threshold_protocol = j.at("threshold_protocol").get<std::string>();
    for (const auto& [name, c] : j.at("metrics").items()) {
      r.cells[score_metric_from_string(name)] = {cell_from_json(c.at("zfn")), cell_from_json(c.at("acc")),
                                                 cell_from_json(c.at("auc"))};
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string render_table(const MetricsReport& r) {
  auto fmt = [](const CellStats& c) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << c.mean << " ± " << c.std;
    return s.str();
  };
  const std::string name = r.dataset.empty() ? "dataset" : r.dataset;
  const std::size_t name_w = std::max<std::size_t>(7, name.size());
  const int col = 16;
  std::ostringstream out;
  out << "NOTE: " << kCalibrationCaveat << "\n";
  out << "Values: mean ± " << r.std_kind << " std in percent over " << (r.cells.empty() ? 0 : r.cells.begin()->second.zfn.values.size())
      << " run(s).\n\n";
  out << std::left << std::setw(static_cast<int>(name_w)) << "";
  for (const auto& [m, c] : r.cells) {
    std::string head = to_string(m);
    std::transform(head.begin(), head.end(), head.begin(), ::toupper);
    out << " | " << std::setw(3 * col + 6) << head;
  }
  out << "\n" << std::setw(static_cast<int>(name_w)) << "Dataset";
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    out << " | " << std::setw(col) << "ZFN" << " | " << std::setw(col) << "ACC" << " | " << std::setw(col) << "AUC";
  }
  out << "\n" << std::string(name_w, '-');
  for (std::size_t i = 0; i < r.cells.size(); ++i) out << std::string(3 * (col + 3), '-');
  out << "\n" << std::setw(static_cast<int>(name_w)) << name;
  // "±" is two bytes in UTF-8, so pad one extra.
  for (const auto& [m, c] : r.cells) {
    out << " | " << std::setw(col + 1) << fmt(c.zfn) << " | " << std::setw(col + 1) << fmt(c.acc) << " | "
        << std::setw(col + 1) << fmt(c.auc);
  }
  out << "\n";
  return out.str();
}

void write_report(const fs::path& json_path, const fs::path& text_path, const MetricsReport& report) {
  for (const auto& p : {json_path, text_path}) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
  }
  {
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + json_path.string());
    out << std::setprecision(17) << to_json(report).dump(2) << '\n';
  }
  std::ofstream out(text_path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + text_path.string());
  out << render_table(report);
}

MetricsReport read_report(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw DataError("cannot open report " + json_path.string());
  try {
    return metrics_report_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw DataError("cannot parse report " + json_path.string() + ": " + e.what());
  }
}

// ---- plots ----

namespace {

void dashed_line(cv::Mat& img, cv::Point a, cv::Point b, const cv::Scalar& color, int thickness, int dash = 8) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const int n = std::max(1, static_cast<int>(len / dash));
  for (int i = 0; i < n; i += 2) {
    const double t0 = static_cast<double>(i) / n;
    const double t1 = std::min(1.0, static_cast<double>(i + 1) / n);
    cv::line(img, {a.x + static_cast<int>((b.x - a.x) * t0), a.y + static_cast<int>((b.y - a.y) * t0)},
             {a.x + static_cast<int>((b.x - a.x) * t1), a.y + static_cast<int>((b.y - a.y) * t1)}, color, thickness,
             cv::LINE_AA);
  }
}

}  // namespace

void plot_histogram(const fs::path& png, const std::vector<ScoreRecord>& records, ScoreMetric metric,
                    const std::string& title, int bins) {
  require_both(records, "histogram");
  const auto v = metric_values(records, metric);
  const double zfn = zfn_threshold(records, metric);
  const auto acc = acc_threshold(records, metric);
  const double zfn_acc = confusion_at(records, metric, zfn).accuracy();

  double lo = *std::min_element(v.begin(), v.end());
  double hi = *std::max_element(v.begin(), v.end());
  if (hi <= lo) hi = lo + 1.0;
  bins = std::max(1, bins);
  std::vector<int> hn(bins, 0), ha(bins, 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    int b = static_cast<int>((v[i] - lo) / (hi - lo) * bins);
    b = std::clamp(b, 0, bins - 1);
    (records[i].label == Label::abnormal ? ha : hn)[b] += 1;
  }
  const int peak = std::max(*std::max_element(hn.begin(), hn.end()), *std::max_element(ha.begin(), ha.end()));

  const int W = 800, H = 480, L = 60, R = 20, T = 60, B = 50;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  const double pw = W - L - R, ph = H - T - B;
  auto xpix = [&](double s) { return L + static_cast<int>((s - lo) / (hi - lo) * pw); };
  auto ypix = [&](int count) { return H - B - static_cast<int>(ph * count / std::max(1, peak)); };
  const cv::Scalar green(60, 160, 40), red(40, 40, 210), grey(150, 150, 150), black(0, 0, 0);

  for (int b = 0; b < bins; ++b) {
    const int x0 = L + static_cast<int>(pw * b / bins);
    const int x1 = L + static_cast<int>(pw * (b + 1) / bins);
    if (hn[b]) {
      cv::Mat over = img.clone();
      cv::rectangle(over, {x0, ypix(hn[b])}, {x1, H - B}, green, cv::FILLED);
      cv::addWeighted(over, 0.35, img, 0.65, 0, img);
    }
    if (ha[b]) {
      cv::Mat over = img.clone();
      cv::rectangle(over, {x0, ypix(ha[b])}, {x1, H - B}, red, cv::FILLED);
      cv::addWeighted(over, 0.35, img, 0.65, 0, img);
    }
  }
  // Outline polylines through bin centres.
  for (int b = 0; b + 1 < bins; ++b) {
    const int xa = L + static_cast<int>(pw * (b + 0.5) / bins);
    const int xb = L + static_cast<int>(pw * (b + 1.5) / bins);
    cv::line(img, {xa, ypix(hn[b])}, {xb, ypix(hn[b + 1])}, green, 2, cv::LINE_AA);
    dashed_line(img, {xa, ypix(ha[b])}, {xb, ypix(ha[b + 1])}, red, 2, 6);
  }
  cv::line(img, {L, H - B}, {W - R, H - B}, black, 1);
  cv::line(img, {L, T}, {L, H - B}, black, 1);
  dashed_line(img, {xpix(zfn), T}, {xpix(zfn), H - B}, grey, 2);
  if (std::isfinite(acc.tau)) dashed_line(img, {xpix(acc.tau), T}, {xpix(acc.tau), H - B}, black, 2);

  auto text = [&](const std::string& s, cv::Point p, double scale, const cv::Scalar& c) {
    cv::putText(img, s, p, cv::FONT_HERSHEY_SIMPLEX, scale, c, 1, cv::LINE_AA);
  };
  std::ostringstream s1, s2, lo_s, hi_s;
  s1 << std::fixed << std::setprecision(2) << "ZFN acc " << 100 * zfn_acc << "%";
  s2 << std::fixed << std::setprecision(2) << "ACC acc " << 100 * acc.accuracy << "%";
  lo_s << std::setprecision(4) << lo;
  hi_s << std::setprecision(4) << hi;
  std::string metric_name = to_string(metric);
  std::transform(metric_name.begin(), metric_name.end(), metric_name.begin(), ::toupper);
  text(title + " (" + metric_name + ")", {L, 25}, 0.6, black);
  text(s1.str(), {L, 48}, 0.45, grey);
  text(s2.str(), {L + 200, 48}, 0.45, black);
  text("normal", {W - 200, 25}, 0.45, green);
  text("abnormal", {W - 120, 25}, 0.45, red);
  text(lo_s.str(), {L - 10, H - B + 20}, 0.4, black);
  text(hi_s.str(), {W - R - 60, H - B + 20}, 0.4, black);
  text("anomaly score", {W / 2 - 50, H - 12}, 0.45, black);
  text(std::to_string(peak), {10, T + 5}, 0.4, black);

  if (png.has_parent_path()) fs::create_directories(png.parent_path());
  if (!cv::imwrite(png.string(), img)) throw DataError("cannot write " + png.string());
}

}  // namespace cyclead
