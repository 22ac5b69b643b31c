#pragma once

// Threshold calibration (zero-false-negative and max-accuracy), AUCROC, and
// multi-run aggregation in percent. Decision rule: abnormal iff score >= tau.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyclead/scoring.hpp"

namespace cyclead {

enum class ScoreMetric { sse, fid };
enum class PolicyKind { zfn, acc };

std::string to_string(ScoreMetric m);
ScoreMetric score_metric_from_string(const std::string& s);
std::string to_string(PolicyKind p);
PolicyKind policy_from_string(const std::string& s);

inline constexpr const char* kCalibrationCaveat =
    "Thresholds are calibrated on the test set itself; accuracies overestimate the classification "
    "performance and measure how well the score separates normal from abnormal test images.";

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  double accuracy() const { return total() ? static_cast<double>(tp + tn) / static_cast<double>(total()) : 0.0; }
  double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  bool operator==(const Confusion&) const = default;
};

// Scores for `metric`; a record lacking that metric is a calibration error.
std::vector<double> metric_values(const std::vector<ScoreRecord>& records, ScoreMetric metric);

Confusion confusion_at(const std::vector<ScoreRecord>& records, ScoreMetric metric, double tau);

// Minimum abnormal score.
double zfn_threshold(const std::vector<ScoreRecord>& records, ScoreMetric metric);

struct AccThreshold {
  double tau = 0;  // may be -infinity
  double accuracy = 0;
  Confusion confusion;
};

// Best tau among {-inf} and the observed scores; the largest maximizer wins ties.
AccThreshold acc_threshold(const std::vector<ScoreRecord>& records, ScoreMetric metric);

// Mann-Whitney statistic with ties counted 1/2.
double auc_roc(const std::vector<ScoreRecord>& records, ScoreMetric metric);

struct MetricTriple {
  double zfn_acc = 0;  // fractions in [0,1]
  double max_acc = 0;
  double auc = 0;
  double zfn_tau = 0;
  double acc_tau = 0;
};

struct RunMetrics {
  std::string source;
  std::map<ScoreMetric, MetricTriple> metrics;
};

// SSE always, FID when every record has it.
RunMetrics evaluate_scores(const std::vector<ScoreRecord>& records);
RunMetrics evaluate_run(const std::filesystem::path& scores_file);

struct CellStats {
  double mean = 0;  // percent
  double std = 0;   // population std, percent
  std::vector<double> values;
};

struct MetricCells {
  CellStats zfn;
  CellStats acc;
  CellStats auc;
};

struct MetricsReport {
  std::string dataset;
  std::vector<std::uint64_t> seeds;
  std::map<ScoreMetric, MetricCells> cells;
  std::string std_kind = "population";
  std::string threshold_protocol = "test-set calibration";

  bool operator==(const MetricsReport&) const;
};

MetricsReport aggregate_runs(const std::vector<RunMetrics>& runs, const std::string& dataset = {},
                             const std::vector<std::uint64_t>& seeds = {});

nlohmann::json to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

// Table-2 style text: one row, ZFN / ACC / AUC columns per score metric.
std::string render_table(const MetricsReport& report);

void write_report(const std::filesystem::path& json_path, const std::filesystem::path& text_path,
                  const MetricsReport& report);
MetricsReport read_report(const std::filesystem::path& json_path);

// Score histograms: normal solid green, abnormal dashed red, ZFN threshold
// dashed grey, ACC threshold dashed black.
void plot_histogram(const std::filesystem::path& png, const std::vector<ScoreRecord>& records, ScoreMetric metric,
                    const std::string& title, int bins = 30);

}  // namespace cyclead
