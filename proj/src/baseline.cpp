#include "ppmu/baseline.hpp"

#include <algorithm>

#include "json.hpp"
#include "ppmu/errors.hpp"

namespace ppmu {

TsAbstraction ts_abstraction_from_string(const std::string& s) {
  if (s == "last-k") return TsAbstraction::LastK;
  if (s == "set") return TsAbstraction::Set;
  if (s == "multiset") return TsAbstraction::Multiset;
  throw ConfigError("unknown abstraction '" + s + "' (want last-k, set or multiset)");
}

std::string to_string(TsAbstraction a) {
  switch (a) {
    case TsAbstraction::LastK: return "last-k";
    case TsAbstraction::Set: return "set";
    case TsAbstraction::Multiset: return "multiset";
  }
  return "?";
}

std::string ts_state_key(const TransitionSystem& ts, const PrefixSample& prefix) {
  std::vector<int> ids;
  for (int id : prefix.activity_ids)
    if (id != 0) ids.push_back(id);
  switch (ts.abstraction) {
    case TsAbstraction::LastK:
      if (static_cast<int>(ids.size()) > ts.k)
        ids.erase(ids.begin(), ids.end() - ts.k);
      break;
    case TsAbstraction::Set:
      std::sort(ids.begin(), ids.end());
      ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
      break;
    case TsAbstraction::Multiset:
      std::sort(ids.begin(), ids.end());
      break;
  }
  std::string key;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) key += ',';
    key += std::to_string(ids[i]);
  }
  return key;
}

TransitionSystem build_ts(const std::vector<PrefixSample>& train,
                          TsAbstraction abstraction, int k) {
  if (train.empty()) throw DataError("cannot build a transition system without prefixes");
  if (k < 1) throw ConfigError("abstraction horizon k must be positive");
  TransitionSystem ts;
  ts.abstraction = abstraction;
  ts.k = k;
  ts.n_train = static_cast<int>(train.size());

  std::map<std::string, std::pair<double, int>> sums;
  double global = 0.0;
  for (const auto& p : train) {
    auto& [sum, count] = sums[ts_state_key(ts, p)];
    sum += p.target_remaining_days;
    count += 1;
    global += p.target_remaining_days;
  }
  for (const auto& [key, sc] : sums)
    ts.states[key] = TsState{sc.first / sc.second, sc.second};
  ts.fallback_mean = global / static_cast<double>(train.size());
  return ts;
}

double predict_ts(const TransitionSystem& ts, const PrefixSample& prefix) {
  auto it = ts.states.find(ts_state_key(ts, prefix));
  return it == ts.states.end() ? ts.fallback_mean : it->second.mean_remaining_days;
}

std::string ts_to_json(const TransitionSystem& ts) {
  nlohmann::ordered_json j;
  j["abstraction"] = to_string(ts.abstraction);
  j["k"] = ts.k;
  j["fallback_mean"] = ts.fallback_mean;
  j["n_train"] = ts.n_train;
  nlohmann::ordered_json states;
  for (const auto& [key, st] : ts.states) {
    nlohmann::ordered_json s;
    s["mean_remaining_days"] = st.mean_remaining_days;
    s["visit_count"] = st.visit_count;
    states[key] = std::move(s);
  }
  j["states"] = std::move(states);
  return j.dump(2) + "\n";
}

}  // namespace ppmu
