#include "ppmu/eventlog.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "ppmu/errors.hpp"
#include "ppmu/tensor.hpp"

namespace ppmu {

namespace {

constexpr double kUsPerDay = 86400.0 * 1e6;

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y += m <= 2;
}

unsigned days_in_month(std::int64_t y, unsigned m) {
  static const unsigned lengths[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m == 2 && ((y % 4 == 0 && y % 100 != 0) || y % 400 == 0)) return 29;
  return lengths[m - 1];
}

bool read_digits(const std::string& s, size_t pos, size_t n, long& out) {
  if (pos + n > s.size()) return false;
  long v = 0;
  for (size_t i = 0; i < n; ++i) {
    char c = s[pos + i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

}  // namespace

std::int64_t parse_iso8601_us(const std::string& text) {
  auto fail = [&]() -> std::int64_t {
    throw DataError("unparseable timestamp '" + text + "'");
  };
  long y, mo, d;
  if (!read_digits(text, 0, 4, y) || text.size() < 10 || text[4] != '-' ||
      !read_digits(text, 5, 2, mo) || text[7] != '-' || !read_digits(text, 8, 2, d))
    return fail();
  if (mo < 1 || mo > 12 || d < 1 ||
      d > static_cast<long>(days_in_month(y, static_cast<unsigned>(mo))))
    return fail();

  long h = 0, mi = 0, sec = 0;
  std::int64_t frac_us = 0;
  long off_min = 0;
  size_t pos = 10;
  if (pos < text.size()) {
    if (text[pos] != 'T' && text[pos] != ' ') return fail();
    ++pos;
    if (!read_digits(text, pos, 2, h) || pos + 8 > text.size() || text[pos + 2] != ':' ||
        !read_digits(text, pos + 3, 2, mi) || text[pos + 5] != ':' ||
        !read_digits(text, pos + 6, 2, sec))
      return fail();
    if (h > 23 || mi > 59 || sec > 59) return fail();
    pos += 8;
    if (pos < text.size() && text[pos] == '.') {
      ++pos;
      size_t start = pos;
      std::int64_t scale = 100000;
      while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
        if (scale > 0) frac_us += (text[pos] - '0') * scale;
        scale /= 10;
        ++pos;
      }
      if (pos == start) return fail();
    }
    if (pos < text.size()) {
      char c = text[pos];
      if (c == 'Z') {
        ++pos;
      } else if (c == '+' || c == '-') {
        long oh, om = 0;
        ++pos;
        if (!read_digits(text, pos, 2, oh)) return fail();
        pos += 2;
        if (pos < text.size() && text[pos] == ':') ++pos;
        if (pos < text.size() && read_digits(text, pos, 2, om)) pos += 2;
        if (oh > 14 || om > 59) return fail();
        off_min = (c == '+' ? 1 : -1) * (oh * 60 + om);
      }
    }
    if (pos != text.size()) return fail();
  }

  std::int64_t days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  std::int64_t secs = days * 86400 + h * 3600 + mi * 60 + sec - off_min * 60;
  return secs * 1000000 + frac_us;
}

std::string format_iso8601_us(std::int64_t us) {
  std::int64_t secs = us / 1000000;
  std::int64_t frac = us % 1000000;
  if (frac < 0) {
    frac += 1000000;
    secs -= 1;
  }
  std::int64_t days = secs / 86400;
  std::int64_t rem = secs % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  std::int64_t y;
  unsigned mo, d;
  civil_from_days(days, y, mo, d);
  char buf[40];
  if (frac == 0) {
    std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ",
                  static_cast<long long>(y), mo, d, static_cast<long long>(rem / 3600),
                  static_cast<long long>((rem / 60) % 60), static_cast<long long>(rem % 60));
  } else {
    std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lld.%06lldZ",
                  static_cast<long long>(y), mo, d, static_cast<long long>(rem / 3600),
                  static_cast<long long>((rem / 60) % 60), static_cast<long long>(rem % 60),
                  static_cast<long long>(frac));
  }
  return buf;
}

std::string format_double(double x) {
  std::array<char, 40> buf;
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), res.ptr);
}

double Case::duration_days() const {
  return static_cast<double>(end_us - start_us) / kUsPerDay;
}

std::size_t EventLog::n_events() const {
  std::size_t n = 0;
  for (const auto& c : cases) n += c.events.size();
  return n;
}

// ---- CSV plumbing ----

namespace {

std::vector<std::string> split_csv_line(const std::string& line, int line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted)
    throw DataError("line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

double parse_double_field(const std::string& s, int line_no) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError("line " + std::to_string(line_no) + ": bad number '" + s + "'");
  return v;
}

int parse_int_field(const std::string& s, int line_no) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError("line " + std::to_string(line_no) + ": bad integer '" + s + "'");
  return v;
}

int find_column(const std::vector<std::string>& header, const std::string& name) {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

void finalize_case(Case& c) {
  std::stable_sort(c.events.begin(), c.events.end(),
                   [](const Event& a, const Event& b) { return a.ts_us < b.ts_us; });
  c.start_us = c.events.front().ts_us;
  c.end_us = c.events.back().ts_us;
  for (auto& e : c.events)
    e.elapsed_days = static_cast<double>(e.ts_us - c.start_us) / kUsPerDay;
}

void sort_cases(EventLog& log) {
  std::sort(log.cases.begin(), log.cases.end(), [](const Case& a, const Case& b) {
    if (a.start_us != b.start_us) return a.start_us < b.start_us;
    return a.case_id < b.case_id;
  });
}

}  // namespace

EventLog parse_csv(std::istream& in, const CsvSchema& schema, int max_bad_rows) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty input: no header row");
  auto header = split_csv_line(strip_cr(line), 1);
  const int ci = find_column(header, schema.case_id);
  const int ai = find_column(header, schema.activity);
  const int ti = find_column(header, schema.timestamp);
  const int oi = find_column(header, schema.outcome);
  if (ci < 0 || ai < 0 || ti < 0) {
    std::string missing;
    if (ci < 0) missing += schema.case_id + " ";
    if (ai < 0) missing += schema.activity + " ";
    if (ti < 0) missing += schema.timestamp;
    throw DataError("missing required column(s): " + missing);
  }

  std::unordered_map<std::string, size_t> case_index;
  std::vector<Case> cases;
  std::vector<std::string> bad_rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    try {
      auto fields = split_csv_line(line, line_no);
      if (fields.size() != header.size())
        throw DataError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields, got " +
                        std::to_string(fields.size()));
      Event e;
      e.case_id = fields[ci];
      e.activity = fields[ai];
      e.ts_us = parse_iso8601_us(fields[ti]);
      if (e.case_id.empty())
        throw DataError("line " + std::to_string(line_no) + ": empty case_id");
      std::optional<int> outcome;
      if (oi >= 0 && !fields[oi].empty()) {
        if (fields[oi] == "0") outcome = 0;
        else if (fields[oi] == "1") outcome = 1;
        else
          throw DataError("line " + std::to_string(line_no) + ": outcome must be 0 or 1, got '" +
                          fields[oi] + "'");
      }
      auto it = case_index.find(e.case_id);
      if (it == case_index.end()) {
        case_index.emplace(e.case_id, cases.size());
        cases.push_back(Case{e.case_id, {}, outcome, 0, 0});
        it = case_index.find(e.case_id);
      }
      Case& c = cases[it->second];
      if (outcome) {
        if (c.outcome && *c.outcome != *outcome)
          throw DataError("line " + std::to_string(line_no) + ": case '" + e.case_id +
                          "' has conflicting outcomes");
        c.outcome = outcome;
      }
      c.events.push_back(std::move(e));
    } catch (const DataError& err) {
      std::string note = err.what();
      // errors from helpers without row context still get located
      if (note.rfind("line ", 0) != 0)
        note = "line " + std::to_string(line_no) + ": " + note;
      bad_rows.push_back(std::move(note));
      if (static_cast<int>(bad_rows.size()) > max_bad_rows) {
        std::string msg = "too many malformed rows (" + std::to_string(bad_rows.size()) +
                          " > " + std::to_string(max_bad_rows) + "):";
        for (size_t i = 0; i < bad_rows.size() && i < 5; ++i) msg += "\n  " + bad_rows[i];
        throw DataError(msg);
      }
    }
  }

  EventLog log;
  for (auto& c : cases) {
    if (c.events.empty()) continue;
    finalize_case(c);
    log.cases.push_back(std::move(c));
  }
  sort_cases(log);
  for (const auto& msg : bad_rows) std::cerr << "warning: skipped " << msg << "\n";
  return log;
}

EventLog parse_csv_file(const std::string& path, const CsvSchema& schema,
                        int max_bad_rows) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return parse_csv(in, schema, max_bad_rows);
}

SplitResult temporal_split(const EventLog& log, double test_fraction, bool debias) {
  if (log.cases.empty()) throw DataError("cannot split an empty log");
  if (test_fraction <= 0.0 || test_fraction >= 1.0)
    throw ConfigError("test_fraction must lie in (0,1), got " +
                      std::to_string(test_fraction));
  const int n = static_cast<int>(log.cases.size());
  int n_test = static_cast<int>(std::ceil(test_fraction * n));
  if (n_test >= n) n_test = n - 1;
  if (n_test < 1) n_test = 1;

  // Cases are kept sorted by (start, case_id); the most recent starters
  // form the test block.
  SplitResult out;
  const int first_test = n - n_test;
  for (int i = first_test; i < n; ++i) out.test.cases.push_back(log.cases[i]);
  const std::int64_t test_start = out.test.cases.front().start_us;
  std::int64_t test_end = test_start;
  for (const auto& c : out.test.cases) test_end = std::max(test_end, c.end_us);
  const double span_days = static_cast<double>(test_end - test_start) / kUsPerDay;

  for (int i = 0; i < first_test; ++i) {
    const Case& c = log.cases[i];
    if (c.end_us > test_start) {
      ++out.removed_overlap;
      continue;
    }
    if (debias && c.duration_days() > span_days) {
      ++out.removed_debias;
      continue;
    }
    out.train.cases.push_back(c);
  }
  if (out.train.cases.empty())
    throw DataError("temporal split removed every training case");
  return out;
}

std::pair<EventLog, EventLog> engineer_features(const EventLog& train,
                                                const EventLog& other) {
  if (train.cases.empty()) throw DataError("cannot fit features on an empty training log");

  std::set<std::string> labels;
  std::vector<double> elapsed;
  for (const auto& c : train.cases)
    for (const auto& e : c.events) {
      labels.insert(e.activity);
      elapsed.push_back(e.elapsed_days);
    }

  std::map<std::string, int> vocab;
  int next_id = 2;  // 0 pad, 1 oov
  for (const auto& l : labels) vocab[l] = next_id++;

  const double mean = compensated_sum(elapsed) / static_cast<double>(elapsed.size());
  std::vector<double> sq(elapsed.size());
  for (size_t i = 0; i < elapsed.size(); ++i)
    sq[i] = (elapsed[i] - mean) * (elapsed[i] - mean);
  double sd = std::sqrt(compensated_sum(sq) / static_cast<double>(sq.size()));
  if (sd == 0.0) {
    std::cerr << "warning: elapsed-time std is zero on the training data; using 1\n";
    sd = 1.0;
  }

  auto apply = [&](const EventLog& src) {
    EventLog out = src;
    out.activity_vocab = vocab;
    out.elapsed_mean = mean;
    out.elapsed_sd = sd;
    out.encoded = true;
    for (auto& c : out.cases)
      for (auto& e : c.events) {
        auto it = vocab.find(e.activity);
        e.activity_id = it == vocab.end() ? 1 : it->second;
        e.elapsed_std = (e.elapsed_days - mean) / sd;
      }
    return out;
  };
  return {apply(train), apply(other)};
}

std::vector<PrefixSample> extract_prefixes(const EventLog& log, int max_len,
                                           bool require_outcome) {
  if (max_len < 1) throw ConfigError("max_len must be positive");
  if (!log.encoded && !log.cases.empty())
    throw DataError("extract_prefixes needs an encoded log (run engineer_features)");
  std::vector<PrefixSample> out;
  for (const auto& c : log.cases) {
    if (require_outcome && !c.outcome)
      throw DataError("case '" + c.case_id + "' lacks an outcome label");
    const int n = static_cast<int>(c.events.size());
    const double dur = c.duration_days();
    for (int p = 1; p <= n; ++p) {
      PrefixSample s;
      s.case_id = c.case_id;
      s.prefix_len = p;
      s.activity_ids.assign(max_len, 0);
      s.elapsed_std.assign(max_len, 0.0);
      for (int slot = 0; slot < max_len; ++slot) {
        const int idx = p - max_len + slot;
        if (idx < 0) continue;
        s.activity_ids[slot] = c.events[idx].activity_id;
        s.elapsed_std[slot] = c.events[idx].elapsed_std;
      }
      s.prefix_duration_days = c.events[p - 1].elapsed_days;
      s.target_remaining_days = dur - s.prefix_duration_days;
      s.target_outcome = c.outcome;
      out.push_back(std::move(s));
    }
  }
  return out;
}

EventLog subsample_fraction(const EventLog& train, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw ConfigError("subsample fraction must lie in (0,1], got " +
                      std::to_string(fraction));
  const int n = static_cast<int>(train.cases.size());
  int k = static_cast<int>(std::ceil(fraction * n));
  if (k > n) k = n;
  EventLog out = train;
  if (k == n) return out;

  RngStream rng(seed, "subsample");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < k; ++i) {
    const int j = i + rng.uniform_int(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  out.cases.clear();
  for (int i : idx) out.cases.push_back(train.cases[i]);
  return out;
}

DatasetStats dataset_stats(const EventLog& log) {
  DatasetStats st;
  st.n_cases = log.cases.size();
  st.n_events = log.n_events();
  std::set<std::string> labels;
  double day_sum = 0.0;
  int n_outcome = 0, n_positive = 0;
  for (const auto& c : log.cases) {
    day_sum += c.duration_days();
    for (const auto& e : c.events) labels.insert(e.activity);
    if (c.outcome) {
      ++n_outcome;
      n_positive += *c.outcome;
    }
  }
  st.n_activity_levels = labels.size();
  if (st.n_cases > 0) {
    st.avg_case_days = day_sum / static_cast<double>(st.n_cases);
    st.avg_events_per_case =
        static_cast<double>(st.n_events) / static_cast<double>(st.n_cases);
  }
  if (n_outcome > 0)
    st.pct_positive_outcome = 100.0 * n_positive / static_cast<double>(n_outcome);
  return st;
}

std::string stats_to_json(const DatasetStats& stats) {
  nlohmann::ordered_json j;
  j["n_cases"] = stats.n_cases;
  j["n_events"] = stats.n_events;
  j["avg_case_days"] = stats.avg_case_days;
  j["avg_events_per_case"] = stats.avg_events_per_case;
  if (stats.pct_positive_outcome)
    j["pct_positive_outcome"] = *stats.pct_positive_outcome;
  else
    j["pct_positive_outcome"] = nullptr;
  j["n_activity_levels"] = stats.n_activity_levels;
  return j.dump(2) + "\n";
}

void write_event_csv(const EventLog& log, std::ostream& out) {
  bool any_outcome = false;
  for (const auto& c : log.cases)
    if (c.outcome) any_outcome = true;
  out << "case_id,activity,timestamp";
  if (any_outcome) out << ",outcome";
  out << "\n";
  for (const auto& c : log.cases)
    for (const auto& e : c.events) {
      out << csv_escape(c.case_id) << "," << csv_escape(e.activity) << ","
          << format_iso8601_us(e.ts_us);
      if (any_outcome) {
        out << ",";
        if (c.outcome) out << *c.outcome;
      }
      out << "\n";
    }
}

void write_event_csv_file(const EventLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_event_csv(log, out);
}

void write_prefix_csv(const std::vector<PrefixSample>& samples, int max_len,
                      std::ostream& out) {
  out << "case_id,prefix_len";
  for (int i = 1; i <= max_len; ++i) out << ",activity_" << i;
  for (int i = 1; i <= max_len; ++i) out << ",elapsed_" << i;
  out << ",target_remaining,target_outcome,prefix_duration\n";
  for (const auto& s : samples) {
    if (static_cast<int>(s.activity_ids.size()) != max_len ||
        static_cast<int>(s.elapsed_std.size()) != max_len)
      throw DimensionError("prefix sample does not match max_len " +
                           std::to_string(max_len));
    out << csv_escape(s.case_id) << "," << s.prefix_len;
    for (int v : s.activity_ids) out << "," << v;
    for (double v : s.elapsed_std) out << "," << format_double(v);
    out << "," << format_double(s.target_remaining_days) << ",";
    if (s.target_outcome) out << *s.target_outcome;
    out << "," << format_double(s.prefix_duration_days) << "\n";
  }
}

void write_prefix_csv_file(const std::vector<PrefixSample>& samples, int max_len,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_prefix_csv(samples, max_len, out);
}

std::vector<PrefixSample> read_prefix_csv(std::istream& in, int* max_len_out) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty prefix file: no header");
  auto header = split_csv_line(strip_cr(line), 1);
  int max_len = 0;
  for (const auto& h : header)
    if (h.rfind("activity_", 0) == 0) ++max_len;
  if (max_len == 0) throw DataError("prefix header has no activity_i columns");
  const size_t want = 2 + 2 * static_cast<size_t>(max_len) + 3;
  if (header.size() != want)
    throw DataError("prefix header has " + std::to_string(header.size()) +
                    " columns, want " + std::to_string(want));

  std::vector<PrefixSample> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    auto f = split_csv_line(line, line_no);
    if (f.size() != want)
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(want) + " fields, got " + std::to_string(f.size()));
    PrefixSample s;
    size_t i = 0;
    s.case_id = f[i++];
    s.prefix_len = parse_int_field(f[i++], line_no);
    s.activity_ids.resize(max_len);
    for (int k = 0; k < max_len; ++k) s.activity_ids[k] = parse_int_field(f[i++], line_no);
    s.elapsed_std.resize(max_len);
    for (int k = 0; k < max_len; ++k)
      s.elapsed_std[k] = parse_double_field(f[i++], line_no);
    s.target_remaining_days = parse_double_field(f[i++], line_no);
    if (!f[i].empty()) s.target_outcome = parse_int_field(f[i], line_no);
    ++i;
    s.prefix_duration_days = parse_double_field(f[i++], line_no);
    out.push_back(std::move(s));
  }
  if (max_len_out) *max_len_out = max_len;
  return out;
}

std::vector<PrefixSample> read_prefix_csv_file(const std::string& path,
                                               int* max_len_out) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_prefix_csv(in, max_len_out);
}

}  // namespace ppmu
