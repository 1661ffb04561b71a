#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "ppmu/errors.hpp"
#include "ppmu/eval.hpp"
#include "ppmu/tensor.hpp"

using namespace ppmu;

namespace {

// Quadratic pair-count oracle for the area under the ROC curve; ties between
// a positive and a negative score count one half.
double auc_pairs(const std::vector<int>& y, const std::vector<double>& s) {
  double wins = 0.0;
  long pairs = 0;
  for (size_t i = 0; i < y.size(); ++i)
    for (size_t j = 0; j < y.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  return wins / pairs;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("mae matches a plain loop") {
  std::vector<double> y = {1.0, 2.0, 3.0};
  std::vector<double> p = {1.5, 1.0, 3.0};
  CHECK(mae(y, p) == doctest::Approx((0.5 + 1.0 + 0.0) / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(mae({}, {}), DimensionError);
  CHECK_THROWS_AS(mae({1.0}, {1.0, 2.0}), DimensionError);
}

TEST_CASE("auc hits the textbook extremes") {
  CHECK(auc_roc({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9}) == doctest::Approx(1.0));
  CHECK(auc_roc({0, 0, 1, 1}, {0.9, 0.8, 0.2, 0.1}) == doctest::Approx(0.0));
  CHECK(auc_roc({0, 1}, {0.5, 0.5}) == doctest::Approx(0.5));
}

TEST_CASE("auc agrees with the pair-count oracle, ties included") {
  RngStream rng(31, "auc");
  for (int rep = 0; rep < 20; ++rep) {
    RngStream r = rng.substream("rep", rep);
    const int n = 5 + r.uniform_int(40);
    std::vector<int> y(n);
    std::vector<double> s(n);
    bool has0 = false, has1 = false;
    for (int i = 0; i < n; ++i) {
      y[i] = r.uniform_int(2);
      s[i] = r.uniform_int(6) / 5.0;  // coarse grid forces ties
      if (y[i] == 0) has0 = true;
      else has1 = true;
    }
    if (!has0 || !has1) continue;
    CHECK(auc_roc(y, s) == doctest::Approx(auc_pairs(y, s)).epsilon(1e-12));
  }
}

TEST_CASE("auc needs both classes and clean labels") {
  CHECK_THROWS_AS(auc_roc({1, 1, 1}, {0.1, 0.2, 0.3}), NumericError);
  CHECK_THROWS_AS(auc_roc({0, 0}, {0.1, 0.2}), NumericError);
  CHECK_THROWS_AS(auc_roc({0, 2}, {0.1, 0.2}), DataError);
}

TEST_CASE("retention keeps the most certain fraction") {
  // uncertainty ascending with error: retaining less should shrink MAE
  std::vector<RetentionRecord> records;
  for (int i = 0; i < 100; ++i) {
    RetentionRecord r;
    r.uncertainty = i;
    r.error = i * 0.1;
    records.push_back(r);
  }
  RetentionCurve curve = retention_curve(records, RetentionMetric::MAE);
  REQUIRE(curve.thresholds.size() == 6);
  CHECK(curve.thresholds.front() == 1.0);
  CHECK(curve.n_retained[0] == 100);
  CHECK(curve.n_retained[2] == 50);   // ceil(0.5*100)
  CHECK(curve.n_retained[5] == 5);    // ceil(0.05*100)

  // oracle: MAE over the k smallest uncertainties
  for (size_t t = 0; t < curve.thresholds.size(); ++t) {
    const int k = curve.n_retained[t];
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += i * 0.1;
    REQUIRE(curve.metric_at[t].has_value());
    CHECK(*curve.metric_at[t] == doctest::Approx(sum / k).epsilon(1e-12));
  }
  for (size_t t = 1; t < curve.thresholds.size(); ++t)
    CHECK(*curve.metric_at[t] <= *curve.metric_at[t - 1]);
}

TEST_CASE("retention sorting is stable under tied uncertainty") {
  std::vector<RetentionRecord> records(4);
  for (int i = 0; i < 4; ++i) {
    records[i].uncertainty = 1.0;
    records[i].error = i;  // 0,1,2,3 in input order
  }
  RetentionCurve curve = retention_curve(records, RetentionMetric::MAE, {0.5});
  // ceil(0.5*4) = 2; the first two input rows stay
  CHECK(curve.n_retained[0] == 2);
  CHECK(*curve.metric_at[0] == doctest::Approx(0.5));
}

TEST_CASE("ceil rule picks at least one record") {
  std::vector<RetentionRecord> records(3);
  for (int i = 0; i < 3; ++i) {
    records[i].uncertainty = i;
    records[i].error = 1.0;
  }
  RetentionCurve curve = retention_curve(records, RetentionMetric::MAE, {0.05});
  CHECK(curve.n_retained[0] == 1);
}

TEST_CASE("auc retention reports empty metrics for one-class slices") {
  std::vector<RetentionRecord> records;
  for (int i = 0; i < 10; ++i) {
    RetentionRecord r;
    r.uncertainty = i;
    r.score = 0.5;
    r.label = i < 8 ? 0 : 1;  // positives only in the most uncertain tail
    records.push_back(r);
  }
  RetentionCurve curve = retention_curve(records, RetentionMetric::AUC, {1.0, 0.25});
  CHECK(curve.metric_at[0].has_value());
  CHECK_FALSE(curve.metric_at[1].has_value());  // slice holds only label 0
}

TEST_CASE("retention rejects nonfinite uncertainty and bad thresholds") {
  std::vector<RetentionRecord> records(3);
  records[1].uncertainty = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(retention_curve(records, RetentionMetric::MAE), NumericError);
  std::vector<RetentionRecord> ok(3);
  CHECK_THROWS_AS(retention_curve(ok, RetentionMetric::MAE, {0.0}), ConfigError);
  CHECK_THROWS_AS(retention_curve(ok, RetentionMetric::MAE, {1.5}), ConfigError);
}

TEST_CASE("calibration critical values are window order statistics") {
  // |y - point| / sqrt(total): residuals 1..5 in the first window
  std::vector<CalRecord> records;
  for (int i = 1; i <= 9; ++i) {
    CalRecord r;
    r.y = i;  // residual magnitude i with point 0, total 1
    r.point = 0.0;
    r.total = 1.0;
    records.push_back(r);
  }
  CalibrationReport rep = calibrate_intervals(records, 5, 2, {0.5, 0.9});
  REQUIRE(rep.checkpoints.size() == 3);  // at 5, 7, 9
  CHECK(rep.checkpoints[0].at == 5);
  CHECK(rep.checkpoints[1].at == 7);
  CHECK(rep.checkpoints[2].at == 9);

  // window 1..5 sorted: u_(ceil(0.5*5)) = u_3 = 3; u_(ceil(0.9*5)) = u_5 = 5
  CHECK(rep.checkpoints[0].critical_values[0] == doctest::Approx(3.0));
  CHECK(rep.checkpoints[0].critical_values[1] == doctest::Approx(5.0));
  // window 3..7: u_3 = 5, u_5 = 7
  CHECK(rep.checkpoints[1].critical_values[0] == doctest::Approx(5.0));
  CHECK(rep.checkpoints[1].critical_values[1] == doctest::Approx(7.0));

  // coverage for checkpoint 0 on records 6..9: |resid| <= 3 never holds
  REQUIRE(rep.checkpoints[0].coverage[0].has_value());
  CHECK(*rep.checkpoints[0].coverage[0] == doctest::Approx(0.0));
  CHECK(rep.checkpoints[0].n_eval == 4);
  // final checkpoint has nothing to evaluate on
  CHECK_FALSE(rep.checkpoints[2].coverage[0].has_value());
}

TEST_CASE("calibration handles fewer records than one window") {
  std::vector<CalRecord> records(3);
  for (int i = 0; i < 3; ++i) {
    records[i].y = i + 1.0;
    records[i].total = 1.0;
  }
  CalibrationReport rep = calibrate_intervals(records, 5000, 1000, {0.5});
  REQUIRE(rep.checkpoints.size() == 1);
  CHECK(rep.checkpoints[0].at == 3);
}

TEST_CASE("calibration recovers nominal coverage on standard normal data") {
  RngStream rng(8, "cal");
  const int n = 15000;
  std::vector<CalRecord> records(n);
  for (int i = 0; i < n; ++i) {
    records[i].y = rng.normal();
    records[i].point = 0.0;
    records[i].total = 1.0;
  }
  const std::vector<double> levels = {0.5, 0.75, 0.9, 0.95, 0.99};
  CalibrationReport rep = calibrate_intervals(records, 5000, 1000, levels);

  // z(0.95) for |N(0,1)| is 1.96
  for (const auto& cp : rep.checkpoints)
    CHECK(cp.critical_values[3] == doctest::Approx(1.96).epsilon(0.05));

  for (const auto& cp : rep.checkpoints) {
    if (cp.n_eval < 5000) continue;
    for (size_t l = 0; l < levels.size(); ++l) {
      REQUIRE(cp.coverage[l].has_value());
      CHECK(std::abs(*cp.coverage[l] - levels[l]) < 0.03);
    }
  }
}

TEST_CASE("calibration rejects negative total variance") {
  std::vector<CalRecord> records(6);
  records[2].total = -1.0;
  CHECK_THROWS_AS(calibrate_intervals(records, 3, 1, {0.5}), NumericError);
}

TEST_CASE("zero variance scales residuals to zero or infinity") {
  std::vector<CalRecord> records;
  for (int i = 0; i < 4; ++i) {
    CalRecord r;
    r.y = i < 2 ? 0.0 : 1.0;  // two exact hits, two misses
    r.point = 0.0;
    r.total = 0.0;
    records.push_back(r);
  }
  CalibrationReport rep = calibrate_intervals(records, 4, 1, {0.5});
  // sorted normalized residuals: 0, 0, inf, inf; u_2 = 0
  CHECK(rep.checkpoints[0].critical_values[0] == 0.0);
}

TEST_CASE("median case duration comes from prefix bookkeeping") {
  std::vector<PrefixSample> prefixes;
  auto add_case = [&](const std::string& id, double duration) {
    // two prefixes per case; duration split differently across them
    PrefixSample a;
    a.case_id = id;
    a.prefix_len = 1;
    a.prefix_duration_days = 0.0;
    a.target_remaining_days = duration;
    PrefixSample b = a;
    b.prefix_len = 2;
    b.prefix_duration_days = duration * 0.3;
    b.target_remaining_days = duration * 0.7;
    prefixes.push_back(a);
    prefixes.push_back(b);
  };
  add_case("a", 2.0);
  add_case("b", 6.0);
  add_case("c", 10.0);
  CHECK(median_case_duration(prefixes) == doctest::Approx(6.0));
  add_case("d", 20.0);
  CHECK(median_case_duration(prefixes) == doctest::Approx(8.0));  // mean of middle two
}

TEST_CASE("early buckets accumulate prefixes by elapsed time") {
  std::vector<PrefixSample> prefixes;
  std::vector<RetentionRecord> records;
  // one case of duration 10 with prefixes at elapsed 0, 2, 5, 9
  for (double el : {0.0, 2.0, 5.0, 9.0}) {
    PrefixSample p;
    p.case_id = "a";
    p.prefix_duration_days = el;
    p.target_remaining_days = 10.0 - el;
    prefixes.push_back(p);
    RetentionRecord r;
    r.uncertainty = 1.0;
    r.error = el;  // arbitrary but distinct
    records.push_back(r);
  }
  EarlyBucketReport rep = early_buckets(prefixes, records, RetentionMetric::MAE,
                                        {0.25, 0.75, std::nullopt});
  CHECK(rep.median_case_duration_days == doctest::Approx(10.0));
  REQUIRE(rep.buckets.size() == 3);
  CHECK(rep.buckets[0].n == 2);  // elapsed <= 2.5
  CHECK(rep.buckets[1].n == 3);  // elapsed <= 7.5
  CHECK(rep.buckets[2].n == 4);  // "all"
  CHECK_FALSE(rep.buckets[2].fraction.has_value());
  CHECK(rep.buckets[0].max_duration_days == doctest::Approx(2.5));

  // bucket MAE at full retention equals the oracle over its members
  REQUIRE(rep.buckets[0].curve.metric_at[0].has_value());
  CHECK(*rep.buckets[0].curve.metric_at[0] == doctest::Approx(1.0));  // (0+2)/2
}

TEST_CASE("empty buckets stay empty without failing") {
  std::vector<PrefixSample> prefixes;
  std::vector<RetentionRecord> records;
  PrefixSample p;
  p.case_id = "a";
  p.prefix_duration_days = 9.0;
  p.target_remaining_days = 1.0;
  prefixes.push_back(p);
  records.push_back(RetentionRecord{});
  EarlyBucketReport rep =
      early_buckets(prefixes, records, RetentionMetric::MAE, {0.05, std::nullopt});
  CHECK(rep.buckets[0].n == 0);
  CHECK(rep.buckets[1].n == 1);
}

TEST_CASE("bucket train filter keeps early prefixes only") {
  std::vector<PrefixSample> prefixes(3);
  prefixes[0].prefix_duration_days = 0.5;
  prefixes[1].prefix_duration_days = 2.0;
  prefixes[2].prefix_duration_days = 1.0;
  auto kept = bucket_train_filter(prefixes, 1.0);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].prefix_duration_days == 0.5);
  CHECK(kept[1].prefix_duration_days == 1.0);
}

TEST_CASE("report serializers emit parseable output") {
  std::vector<RetentionRecord> records(10);
  for (int i = 0; i < 10; ++i) {
    records[i].uncertainty = i;
    records[i].error = i;
  }
  RetentionCurve curve = retention_curve(records, RetentionMetric::MAE);
  const std::string js = retention_to_json(curve);
  CHECK(js.find("\"thresholds\"") != std::string::npos);
  CHECK(js.find("\"n_retained\"") != std::string::npos);
}

}  // TEST_SUITE
