#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ppmu/eventlog.hpp"

namespace ppmu {

// sigma(x) = a + b*x on [x0, x1); segments must tile [0, 1].
struct NoiseSegment {
  double x0 = 0.0;
  double x1 = 1.0;
  double a = 0.1;
  double b = 0.0;
};

struct SynthSpec {
  int n_samples = 2000;
  int n_test = 201;  // evenly spaced over [0,1], endpoints included
  std::vector<NoiseSegment> noise{NoiseSegment{}};
  std::vector<std::pair<double, double>> gap_regions;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Synth1D {
  std::vector<double> train_x, train_y;
  std::vector<double> test_x, test_y;
  // Ground truth for oracle checks.
  std::vector<double> train_f, train_sigma;
  std::vector<double> test_f, test_sigma;
};

double synth_f(double x);  // 0.5 + 0.5*sin(2*pi*x)
double synth_sigma(const SynthSpec& spec, double x);

Synth1D gen_1d_regression(const SynthSpec& spec);

void write_xy_csv(const std::vector<double>& xs, const std::vector<double>& ys,
                  const std::string& path);
std::string synth1d_truth_json(const SynthSpec& spec, const Synth1D& data);

struct ActivityDuration {
  double mean_days = 1.0;
  double sd_days = 0.0;
};

struct SynthProcessSpec {
  int n_cases = 100;
  std::vector<std::string> activities;
  // n rows, n+1 columns; the extra column is the probability of ending.
  std::vector<std::vector<double>> transition;
  std::vector<ActivityDuration> durations;
  int start_activity = 0;
  std::optional<double> outcome_threshold_days;  // outcome = duration > threshold
  // With the default durations (about two to five days per case) this leaves
  // enough non-overlapping early cases for a debiased temporal split even on
  // logs of twenty cases.
  double arrival_spacing_days = 0.5;
  int max_events = 200;
  std::uint64_t seed = 1;
  std::string case_prefix = "c";
  std::string t0 = "2024-01-01T00:00:00Z";

  void validate() const;
};

// A small default process: five activities with a loop and a shortcut, so case
// lengths and durations vary.
SynthProcessSpec default_process_spec();

EventLog gen_process_log(const SynthProcessSpec& spec);

}  // namespace ppmu
