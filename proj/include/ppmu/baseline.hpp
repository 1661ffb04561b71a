#pragma once

#include <map>
#include <string>
#include <vector>

#include "ppmu/eventlog.hpp"

namespace ppmu {

enum class TsAbstraction { LastK, Set, Multiset };

TsAbstraction ts_abstraction_from_string(const std::string& s);
std::string to_string(TsAbstraction a);

struct TsState {
  double mean_remaining_days = 0.0;
  int visit_count = 0;
};

struct TransitionSystem {
  TsAbstraction abstraction = TsAbstraction::LastK;
  int k = 3;
  std::map<std::string, TsState> states;
  double fallback_mean = 0.0;  // global mean remaining time
  int n_train = 0;
};

std::string ts_state_key(const TransitionSystem& ts, const PrefixSample& prefix);

TransitionSystem build_ts(const std::vector<PrefixSample>& train,
                          TsAbstraction abstraction = TsAbstraction::LastK, int k = 3);

double predict_ts(const TransitionSystem& ts, const PrefixSample& prefix);

std::string ts_to_json(const TransitionSystem& ts);

}  // namespace ppmu
