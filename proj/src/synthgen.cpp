#include "ppmu/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "ppmu/errors.hpp"
#include "ppmu/tensor.hpp"

namespace ppmu {

void SynthSpec::validate() const {
  if (n_samples < 1) throw ConfigError("n_samples must be positive");
  if (n_test < 2) throw ConfigError("n_test must be at least 2");
  if (noise.empty()) throw ConfigError("noise function needs at least one segment");
  double cover = 0.0;
  for (const auto& seg : noise) {
    if (seg.x1 <= seg.x0) throw ConfigError("noise segment has x1 <= x0");
    cover = std::max(cover, seg.x1);
    // sigma must be nonnegative on [x0, x1]; a + b*x is monotone in x
    const double lo = std::min(seg.a + seg.b * seg.x0, seg.a + seg.b * seg.x1);
    if (lo < 0.0) throw ConfigError("noise sigma goes negative inside a segment");
  }
  double total_gap = 0.0;
  std::vector<std::pair<double, double>> gaps = gap_regions;
  std::sort(gaps.begin(), gaps.end());
  double reach = 0.0;
  for (const auto& [g0, g1] : gaps) {
    if (g0 < 0.0 || g1 > 1.0 || g1 <= g0)
      throw ConfigError("gap regions must be proper subintervals of [0,1]");
    const double lo = std::max(g0, reach);
    if (g1 > lo) total_gap += g1 - lo;
    reach = std::max(reach, g1);
  }
  if (total_gap >= 1.0 - 1e-9)
    throw ConfigError("gap regions cover the whole domain; no training inputs remain");
}

double synth_f(double x) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  return 0.5 + 0.5 * std::sin(two_pi * x);
}

double synth_sigma(const SynthSpec& spec, double x) {
  for (const auto& seg : spec.noise)
    if (x >= seg.x0 && x < seg.x1) return seg.a + seg.b * x;
  // x == 1.0 falls off the last half-open segment
  const auto& last = spec.noise.back();
  return last.a + last.b * x;
}

Synth1D gen_1d_regression(const SynthSpec& spec) {
  spec.validate();
  RngStream root(spec.seed, "synth1d");
  RngStream xs = root.substream("train-x");
  RngStream noise = root.substream("train-noise");
  RngStream test_noise = root.substream("test-noise");

  auto in_gap = [&](double x) {
    for (const auto& [g0, g1] : spec.gap_regions)
      if (x >= g0 && x < g1) return true;
    return false;
  };

  Synth1D out;
  out.train_x.reserve(spec.n_samples);
  while (static_cast<int>(out.train_x.size()) < spec.n_samples) {
    const double x = xs.uniform();
    if (!in_gap(x)) out.train_x.push_back(x);
  }
  for (double x : out.train_x) {
    const double f = synth_f(x), s = synth_sigma(spec, x);
    out.train_f.push_back(f);
    out.train_sigma.push_back(s);
    out.train_y.push_back(f + s * noise.normal());
  }
  for (int i = 0; i < spec.n_test; ++i) {
    const double x = static_cast<double>(i) / (spec.n_test - 1);
    const double f = synth_f(x), s = synth_sigma(spec, x);
    out.test_x.push_back(x);
    out.test_f.push_back(f);
    out.test_sigma.push_back(s);
    out.test_y.push_back(f + s * test_noise.normal());
  }
  return out;
}

void write_xy_csv(const std::vector<double>& xs, const std::vector<double>& ys,
                  const std::string& path) {
  if (xs.size() != ys.size()) throw DimensionError("x/y length mismatch");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "x,y\n";
  for (size_t i = 0; i < xs.size(); ++i)
    out << format_double(xs[i]) << "," << format_double(ys[i]) << "\n";
}

std::string synth1d_truth_json(const SynthSpec& spec, const Synth1D& data) {
  nlohmann::ordered_json j;
  j["seed"] = spec.seed;
  j["n_samples"] = spec.n_samples;
  nlohmann::ordered_json gaps = nlohmann::ordered_json::array();
  for (const auto& [g0, g1] : spec.gap_regions) gaps.push_back({g0, g1});
  j["gap_regions"] = std::move(gaps);
  nlohmann::ordered_json noise = nlohmann::ordered_json::array();
  for (const auto& seg : spec.noise)
    noise.push_back({{"x0", seg.x0}, {"x1", seg.x1}, {"a", seg.a}, {"b", seg.b}});
  j["noise"] = std::move(noise);
  j["test_x"] = data.test_x;
  j["test_f"] = data.test_f;
  j["test_sigma"] = data.test_sigma;
  return j.dump(2) + "\n";
}

void SynthProcessSpec::validate() const {
  if (n_cases < 1) throw ConfigError("n_cases must be positive");
  const size_t n = activities.size();
  if (n == 0) throw ConfigError("need at least one activity");
  if (durations.size() != n)
    throw ConfigError("need one duration law per activity");
  if (transition.size() != n)
    throw ConfigError("transition table needs one row per activity");
  for (size_t i = 0; i < n; ++i) {
    if (transition[i].size() != n + 1)
      throw ConfigError("transition row " + std::to_string(i) + " needs " +
                        std::to_string(n + 1) + " entries (targets + end)");
    double sum = 0.0;
    for (double p : transition[i]) {
      if (p < 0.0) throw ConfigError("transition probabilities must be nonnegative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("transition row " + std::to_string(i) +
                        " sums to " + std::to_string(sum) + ", want 1");
  }
  for (const auto& d : durations) {
    if (d.mean_days <= 0.0) throw ConfigError("step duration means must be positive");
    if (d.sd_days < 0.0) throw ConfigError("step duration sigma must be nonnegative");
  }
  if (start_activity < 0 || start_activity >= static_cast<int>(n))
    throw ConfigError("start_activity out of range");
  if (arrival_spacing_days < 0.0) throw ConfigError("arrival spacing must be nonnegative");
  if (max_events < 1) throw ConfigError("max_events must be positive");
}

SynthProcessSpec default_process_spec() {
  SynthProcessSpec spec;
  spec.activities = {"register", "review", "extend", "decide", "archive"};
  spec.transition = {
      // register -> review
      {0.0, 1.0, 0.0, 0.0, 0.0, 0.0},
      // review -> extend 30%, decide 70%
      {0.0, 0.0, 0.3, 0.7, 0.0, 0.0},
      // extend -> review again 60%, decide 40%
      {0.0, 0.6, 0.0, 0.4, 0.0, 0.0},
      // decide -> archive 80%, end 20%
      {0.0, 0.0, 0.0, 0.0, 0.8, 0.2},
      // archive -> end
      {0.0, 0.0, 0.0, 0.0, 0.0, 1.0},
  };
  spec.durations = {{0.2, 0.05}, {1.0, 0.3}, {2.0, 0.6}, {0.5, 0.15}, {0.3, 0.1}};
  return spec;
}

EventLog gen_process_log(const SynthProcessSpec& spec) {
  spec.validate();
  const std::int64_t t0 = parse_iso8601_us(spec.t0);
  const int n = static_cast<int>(spec.activities.size());
  RngStream root(spec.seed, "synthproc");

  int width = 1;
  for (int v = spec.n_cases; v >= 10; v /= 10) ++width;

  EventLog log;
  bool truncated = false;
  for (int k = 0; k < spec.n_cases; ++k) {
    RngStream rng = root.substream("case", static_cast<std::uint64_t>(k));
    Case c;
    std::string num = std::to_string(k + 1);
    c.case_id = spec.case_prefix + std::string(width - std::min<int>(width, num.size()), '0') + num;

    std::int64_t t = t0 + static_cast<std::int64_t>(
                              std::llround(k * spec.arrival_spacing_days * 86400.0 * 1e6));
    int state = spec.start_activity;
    for (int step = 0; step < spec.max_events; ++step) {
      Event e;
      e.case_id = c.case_id;
      e.activity = spec.activities[state];
      e.ts_us = t;
      c.events.push_back(std::move(e));

      // pick the next state; column n means the case ends here
      const double u = rng.uniform();
      double acc = 0.0;
      int next = n;
      for (int j = 0; j <= n; ++j) {
        acc += spec.transition[state][j];
        if (u < acc) {
          next = j;
          break;
        }
      }
      if (next == n) break;
      if (step + 1 == spec.max_events) {
        truncated = true;
        break;
      }
      const auto& law = spec.durations[state];
      double dur = law.mean_days + law.sd_days * rng.normal();
      if (dur < 0.0) dur = 0.0;
      t += static_cast<std::int64_t>(std::llround(dur * 86400.0 * 1e6));
      state = next;
    }
    c.start_us = c.events.front().ts_us;
    c.end_us = c.events.back().ts_us;
    for (auto& e : c.events)
      e.elapsed_days = static_cast<double>(e.ts_us - c.start_us) / (86400.0 * 1e6);
    if (spec.outcome_threshold_days)
      c.outcome = c.duration_days() > *spec.outcome_threshold_days ? 1 : 0;
    log.cases.push_back(std::move(c));
  }
  if (truncated)
    std::cerr << "warning: some cases hit the max_events cutoff of "
              << spec.max_events << "\n";
  std::sort(log.cases.begin(), log.cases.end(), [](const Case& a, const Case& b) {
    if (a.start_us != b.start_us) return a.start_us < b.start_us;
    return a.case_id < b.case_id;
  });
  return log;
}

}  // namespace ppmu
