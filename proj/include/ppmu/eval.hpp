#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ppmu/eventlog.hpp"

namespace ppmu {

double mae(const std::vector<double>& y_true, const std::vector<double>& y_pred);

// Mann-Whitney form; ties count one half. Throws on single-class input.
double auc_roc(const std::vector<int>& y_true, const std::vector<double>& scores);

enum class RetentionMetric { MAE, AUC };

struct RetentionRecord {
  double uncertainty = 0.0;
  double error = 0.0;  // |y - point|, used by MAE curves
  double score = 0.0;  // positive-class probability, used by AUC curves
  int label = 0;       // binary label, used by AUC curves
};

struct RetentionCurve {
  std::vector<double> thresholds;  // descending
  std::vector<std::optional<double>> metric_at;  // empty = undefined (one-class slice)
  std::vector<int> n_retained;
};

inline std::vector<double> default_retention_thresholds() {
  return {1.0, 0.75, 0.50, 0.25, 0.10, 0.05};
}

RetentionCurve retention_curve(
    const std::vector<RetentionRecord>& records, RetentionMetric metric,
    std::vector<double> thresholds = default_retention_thresholds());

struct CalRecord {
  double y = 0.0;
  double point = 0.0;
  double total = 0.0;  // total uncertainty, a variance
};

struct CalCheckpoint {
  int at = 0;  // number of samples seen when the window closes
  std::vector<double> critical_values;          // per level
  std::vector<std::optional<double>> coverage;  // per level, on the following window
  int n_eval = 0;  // samples the coverage was measured on
};

struct CalibrationReport {
  std::vector<double> levels;
  int window = 0;
  int stride = 0;
  std::vector<CalCheckpoint> checkpoints;
};

inline std::vector<double> default_confidence_levels() {
  return {0.50, 0.75, 0.90, 0.95, 0.99};
}

CalibrationReport calibrate_intervals(
    const std::vector<CalRecord>& records, int window = 5000, int stride = 1000,
    std::vector<double> levels = default_confidence_levels());

struct EarlyBucket {
  std::optional<double> fraction;  // empty = "all"
  double max_duration_days = 0.0;
  int n = 0;
  RetentionCurve curve;
};

struct EarlyBucketReport {
  double median_case_duration_days = 0.0;
  std::vector<EarlyBucket> buckets;
};

inline std::vector<std::optional<double>> default_bucket_fractions() {
  return {0.05, 0.10, 0.25, 0.50, 1.0, std::nullopt};
}

// prefixes and records are parallel: records[i] belongs to prefixes[i].
EarlyBucketReport early_buckets(
    const std::vector<PrefixSample>& prefixes,
    const std::vector<RetentionRecord>& records, RetentionMetric metric,
    std::vector<std::optional<double>> fractions = default_bucket_fractions());

std::vector<PrefixSample> bucket_train_filter(const std::vector<PrefixSample>& prefixes,
                                              double max_duration_days);

double median_case_duration(const std::vector<PrefixSample>& prefixes);

std::string retention_to_json(const RetentionCurve& curve);
std::string calibration_to_json(const CalibrationReport& report);
std::string buckets_to_json(const EarlyBucketReport& report);

void write_retention_csv(const RetentionCurve& curve, const std::string& path);
void write_calibration_csv(const CalibrationReport& report, const std::string& path);
void write_buckets_csv(const EarlyBucketReport& report, const std::string& path);

}  // namespace ppmu
