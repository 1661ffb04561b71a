#include "ppmu/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>

#include "json.hpp"
#include "ppmu/errors.hpp"
#include "ppmu/tensor.hpp"

namespace ppmu {

double mae(const std::vector<double>& y_true, const std::vector<double>& y_pred) {
  if (y_true.empty()) throw DimensionError("mae of an empty vector is undefined");
  if (y_true.size() != y_pred.size())
    throw DimensionError("mae: length mismatch " + std::to_string(y_true.size()) +
                         " vs " + std::to_string(y_pred.size()));
  std::vector<double> abs_err(y_true.size());
  for (size_t i = 0; i < y_true.size(); ++i) abs_err[i] = std::abs(y_true[i] - y_pred[i]);
  return compensated_sum(abs_err) / static_cast<double>(abs_err.size());
}

double auc_roc(const std::vector<int>& y_true, const std::vector<double>& scores) {
  if (y_true.size() != scores.size())
    throw DimensionError("auc_roc: length mismatch");
  if (y_true.empty()) throw DimensionError("auc_roc of an empty vector is undefined");
  std::size_t n_pos = 0;
  for (int y : y_true) {
    if (y != 0 && y != 1) throw DataError("auc_roc labels must be 0 or 1");
    n_pos += y;
  }
  const std::size_t n = y_true.size(), n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw NumericError("auc_roc undefined: only one class present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // average ranks over tied scores
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (y_true[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

RetentionCurve retention_curve(const std::vector<RetentionRecord>& records,
                               RetentionMetric metric, std::vector<double> thresholds) {
  if (records.empty()) throw DimensionError("retention curve needs records");
  for (const auto& r : records)
    if (!std::isfinite(r.uncertainty))
      throw NumericError("retention curve saw a nonfinite uncertainty");
  for (double t : thresholds)
    if (t <= 0.0 || t > 1.0)
      throw ConfigError("retention thresholds must lie in (0,1]");
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].uncertainty < records[b].uncertainty;
  });

  RetentionCurve curve;
  curve.thresholds = thresholds;
  const std::size_t n = records.size();
  for (double t : thresholds) {
    std::size_t k = static_cast<std::size_t>(std::ceil(t * static_cast<double>(n)));
    if (k < 1) k = 1;
    if (k > n) k = n;
    curve.n_retained.push_back(static_cast<int>(k));
    if (metric == RetentionMetric::MAE) {
      std::vector<double> errs(k);
      for (std::size_t j = 0; j < k; ++j) errs[j] = records[order[j]].error;
      curve.metric_at.push_back(compensated_sum(errs) / static_cast<double>(k));
    } else {
      std::vector<int> labels(k);
      std::vector<double> scores(k);
      for (std::size_t j = 0; j < k; ++j) {
        labels[j] = records[order[j]].label;
        scores[j] = records[order[j]].score;
      }
      try {
        curve.metric_at.push_back(auc_roc(labels, scores));
      } catch (const NumericError&) {
        curve.metric_at.push_back(std::nullopt);  // one-class slice
      }
    }
  }
  return curve;
}

namespace {

double quantile_ceil(std::vector<double> sorted_ascending, double level) {
  const std::size_t w = sorted_ascending.size();
  std::size_t idx = static_cast<std::size_t>(
      std::ceil(level * static_cast<double>(w)));
  if (idx < 1) idx = 1;
  if (idx > w) idx = w;
  return sorted_ascending[idx - 1];
}

double normalized_residual(const CalRecord& r) {
  if (!std::isfinite(r.y) || !std::isfinite(r.point) || !std::isfinite(r.total))
    throw NumericError("calibration saw a nonfinite record");
  if (r.total < 0.0) throw NumericError("calibration saw a negative total uncertainty");
  const double sd = std::sqrt(r.total);
  const double resid = std::abs(r.y - r.point);
  if (sd == 0.0) return resid == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return resid / sd;
}

}  // namespace

CalibrationReport calibrate_intervals(const std::vector<CalRecord>& records, int window,
                                      int stride, std::vector<double> levels) {
  if (records.empty()) throw DimensionError("calibration needs records");
  if (window < 2) throw ConfigError("calibration window must be at least 2");
  if (stride < 1) throw ConfigError("calibration stride must be positive");
  for (double l : levels)
    if (l <= 0.0 || l >= 1.0)
      throw ConfigError("confidence levels must lie in (0,1)");
  std::sort(levels.begin(), levels.end());

  const int n = static_cast<int>(records.size());
  std::vector<double> normalized(records.size());
  for (size_t i = 0; i < records.size(); ++i) normalized[i] = normalized_residual(records[i]);

  CalibrationReport report;
  report.levels = levels;
  report.window = window;
  report.stride = stride;

  std::vector<int> checkpoints;
  if (n < window) {
    std::cerr << "warning: only " << n << " records for calibration window " << window
              << "; using a single checkpoint over all data\n";
    checkpoints.push_back(n);
  } else {
    for (int p = window; p <= n; p += stride) checkpoints.push_back(p);
  }

  for (int p : checkpoints) {
    CalCheckpoint cp;
    cp.at = p;
    const int w = std::min(p, window);
    std::vector<double> sorted(normalized.begin() + (p - w), normalized.begin() + p);
    std::sort(sorted.begin(), sorted.end());
    for (double level : levels) cp.critical_values.push_back(quantile_ceil(sorted, level));

    const int eval_end = std::min(n, p + window);
    cp.n_eval = eval_end - p;
    for (size_t li = 0; li < levels.size(); ++li) {
      if (cp.n_eval == 0) {
        cp.coverage.push_back(std::nullopt);
        continue;
      }
      const double z = cp.critical_values[li];
      int covered = 0;
      for (int i = p; i < eval_end; ++i) {
        const double sd = std::sqrt(records[i].total);
        if (std::abs(records[i].y - records[i].point) <= z * sd) ++covered;
      }
      cp.coverage.push_back(static_cast<double>(covered) / cp.n_eval);
    }
    report.checkpoints.push_back(std::move(cp));
  }
  return report;
}

double median_case_duration(const std::vector<PrefixSample>& prefixes) {
  std::map<std::string, double> durations;
  for (const auto& p : prefixes)
    durations[p.case_id] = p.prefix_duration_days + p.target_remaining_days;
  if (durations.empty()) throw DimensionError("no cases to take a median over");
  std::vector<double> d;
  d.reserve(durations.size());
  for (const auto& [_, v] : durations) d.push_back(v);
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  if (n % 2 == 1) return d[n / 2];
  return 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

EarlyBucketReport early_buckets(const std::vector<PrefixSample>& prefixes,
                                const std::vector<RetentionRecord>& records,
                                RetentionMetric metric,
                                std::vector<std::optional<double>> fractions) {
  if (prefixes.size() != records.size())
    throw DimensionError("early_buckets: prefixes and records must be parallel");
  const double median = median_case_duration(prefixes);
  if (median <= 0.0) throw DataError("median test-case duration must be positive");

  EarlyBucketReport report;
  report.median_case_duration_days = median;
  for (const auto& f : fractions) {
    EarlyBucket bucket;
    bucket.fraction = f;
    bucket.max_duration_days =
        f ? *f * median : std::numeric_limits<double>::infinity();
    std::vector<RetentionRecord> subset;
    for (size_t i = 0; i < prefixes.size(); ++i)
      if (prefixes[i].prefix_duration_days <= bucket.max_duration_days)
        subset.push_back(records[i]);
    bucket.n = static_cast<int>(subset.size());
    if (!subset.empty()) bucket.curve = retention_curve(subset, metric);
    report.buckets.push_back(std::move(bucket));
  }
  return report;
}

std::vector<PrefixSample> bucket_train_filter(const std::vector<PrefixSample>& prefixes,
                                              double max_duration_days) {
  if (max_duration_days < 0.0) throw ConfigError("max duration must be nonnegative");
  std::vector<PrefixSample> out;
  for (const auto& p : prefixes)
    if (p.prefix_duration_days <= max_duration_days) out.push_back(p);
  return out;
}

// ---- report serialization ----

namespace {

nlohmann::ordered_json curve_json(const RetentionCurve& curve) {
  nlohmann::ordered_json j;
  j["thresholds"] = curve.thresholds;
  nlohmann::ordered_json metric = nlohmann::ordered_json::array();
  for (const auto& v : curve.metric_at) {
    if (v)
      metric.push_back(*v);
    else
      metric.push_back(nullptr);
  }
  j["metric"] = std::move(metric);
  j["n_retained"] = curve.n_retained;
  return j;
}

}  // namespace

std::string retention_to_json(const RetentionCurve& curve) {
  return curve_json(curve).dump(2) + "\n";
}

std::string calibration_to_json(const CalibrationReport& report) {
  nlohmann::ordered_json j;
  j["levels"] = report.levels;
  j["window"] = report.window;
  j["stride"] = report.stride;
  nlohmann::ordered_json cps = nlohmann::ordered_json::array();
  for (const auto& cp : report.checkpoints) {
    nlohmann::ordered_json c;
    c["at"] = cp.at;
    c["critical_values"] = cp.critical_values;
    nlohmann::ordered_json cov = nlohmann::ordered_json::array();
    for (const auto& v : cp.coverage) {
      if (v) cov.push_back(*v);
      else cov.push_back(nullptr);
    }
    c["coverage"] = std::move(cov);
    c["n_eval"] = cp.n_eval;
    cps.push_back(std::move(c));
  }
  j["checkpoints"] = std::move(cps);
  return j.dump(2) + "\n";
}

std::string buckets_to_json(const EarlyBucketReport& report) {
  nlohmann::ordered_json j;
  j["median_case_duration_days"] = report.median_case_duration_days;
  nlohmann::ordered_json buckets = nlohmann::ordered_json::array();
  for (const auto& b : report.buckets) {
    nlohmann::ordered_json jb;
    if (b.fraction)
      jb["fraction"] = *b.fraction;
    else
      jb["fraction"] = "all";
    jb["max_duration_days"] = std::isfinite(b.max_duration_days)
                                  ? nlohmann::ordered_json(b.max_duration_days)
                                  : nlohmann::ordered_json("inf");
    jb["n"] = b.n;
    jb["curve"] = b.n > 0 ? curve_json(b.curve) : nlohmann::ordered_json(nullptr);
    buckets.push_back(std::move(jb));
  }
  j["buckets"] = std::move(buckets);
  return j.dump(2) + "\n";
}

void write_retention_csv(const RetentionCurve& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "threshold,n_retained,metric\n";
  for (size_t i = 0; i < curve.thresholds.size(); ++i) {
    out << format_double(curve.thresholds[i]) << "," << curve.n_retained[i] << ",";
    if (curve.metric_at[i]) out << format_double(*curve.metric_at[i]);
    out << "\n";
  }
}

void write_calibration_csv(const CalibrationReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "at,level,critical_value,coverage,n_eval\n";
  for (const auto& cp : report.checkpoints)
    for (size_t li = 0; li < report.levels.size(); ++li) {
      out << cp.at << "," << format_double(report.levels[li]) << ","
          << format_double(cp.critical_values[li]) << ",";
      if (cp.coverage[li]) out << format_double(*cp.coverage[li]);
      out << "," << cp.n_eval << "\n";
    }
}

void write_buckets_csv(const EarlyBucketReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "fraction,max_duration_days,n,threshold,n_retained,metric\n";
  for (const auto& b : report.buckets) {
    const std::string frac = b.fraction ? format_double(*b.fraction) : "all";
    const std::string cap =
        std::isfinite(b.max_duration_days) ? format_double(b.max_duration_days) : "inf";
    if (b.n == 0) {
      out << frac << "," << cap << ",0,,,\n";
      continue;
    }
    for (size_t i = 0; i < b.curve.thresholds.size(); ++i) {
      out << frac << "," << cap << "," << b.n << ","
          << format_double(b.curve.thresholds[i]) << "," << b.curve.n_retained[i] << ",";
      if (b.curve.metric_at[i]) out << format_double(*b.curve.metric_at[i]);
      out << "\n";
    }
  }
}

}  // namespace ppmu
