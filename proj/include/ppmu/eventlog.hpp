#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ppmu {

// Timestamps are microseconds since the Unix epoch, UTC.
std::int64_t parse_iso8601_us(const std::string& text);
std::string format_iso8601_us(std::int64_t us);

struct Event {
  std::string case_id;
  std::string activity;
  std::int64_t ts_us = 0;
  double elapsed_days = 0.0;  // fractional days since case start
  int activity_id = -1;       // filled by engineer_features
  double elapsed_std = 0.0;   // standardized elapsed_days, ditto
};

struct Case {
  std::string case_id;
  std::vector<Event> events;  // sorted by timestamp
  std::optional<int> outcome;
  std::int64_t start_us = 0;
  std::int64_t end_us = 0;
  double duration_days() const;
};

struct EventLog {
  std::vector<Case> cases;  // sorted by (start, case_id)
  std::map<std::string, int> activity_vocab;  // ids from 2; 0 = pad, 1 = oov
  bool encoded = false;
  double elapsed_mean = 0.0;
  double elapsed_sd = 1.0;

  std::size_t n_events() const;
};

struct CsvSchema {
  std::string case_id = "case_id";
  std::string activity = "activity";
  std::string timestamp = "timestamp";
  std::string outcome = "outcome";
};

struct PrefixSample {
  std::string case_id;
  int prefix_len = 0;
  std::vector<int> activity_ids;    // length max_len, left-padded with 0
  std::vector<double> elapsed_std;  // length max_len, 0 at pad positions
  double target_remaining_days = 0.0;
  std::optional<int> target_outcome;
  double prefix_duration_days = 0.0;
};

struct SplitResult {
  EventLog train;
  EventLog test;
  int removed_overlap = 0;
  int removed_debias = 0;
};

struct DatasetStats {
  std::size_t n_cases = 0;
  std::size_t n_events = 0;
  double avg_case_days = 0.0;
  double avg_events_per_case = 0.0;
  std::optional<double> pct_positive_outcome;  // percent, e.g. 50.0
  std::size_t n_activity_levels = 0;
};

EventLog parse_csv(std::istream& in, const CsvSchema& schema = {},
                   int max_bad_rows = 0);
EventLog parse_csv_file(const std::string& path, const CsvSchema& schema = {},
                        int max_bad_rows = 0);

SplitResult temporal_split(const EventLog& log, double test_fraction = 0.2,
                           bool debias = true);

std::pair<EventLog, EventLog> engineer_features(const EventLog& train,
                                                const EventLog& other);

// require_outcome: fail if a case lacks the binary outcome (classification runs).
std::vector<PrefixSample> extract_prefixes(const EventLog& log, int max_len,
                                           bool require_outcome = false);

EventLog subsample_fraction(const EventLog& train, double fraction,
                            std::uint64_t seed);

DatasetStats dataset_stats(const EventLog& log);
std::string stats_to_json(const DatasetStats& stats);

void write_event_csv(const EventLog& log, std::ostream& out);
void write_event_csv_file(const EventLog& log, const std::string& path);
void write_prefix_csv(const std::vector<PrefixSample>& samples, int max_len,
                      std::ostream& out);
void write_prefix_csv_file(const std::vector<PrefixSample>& samples, int max_len,
                           const std::string& path);
std::vector<PrefixSample> read_prefix_csv(std::istream& in, int* max_len_out = nullptr);
std::vector<PrefixSample> read_prefix_csv_file(const std::string& path,
                                               int* max_len_out = nullptr);

// Formats a double with enough digits to round-trip exactly.
std::string format_double(double x);

}  // namespace ppmu
