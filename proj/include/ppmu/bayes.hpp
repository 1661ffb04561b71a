#pragma once

#include <vector>

#include "ppmu/nets.hpp"

namespace ppmu {

struct PredictionWithUncertainty {
  double point = 0.0;
  double epistemic = 0.0;  // variance of the MC means
  double aleatoric = 0.0;  // mean of exp(s_t) over passes
  double total = 0.0;      // epistemic + aleatoric
  int T = 0;
};

struct ClassPrediction {
  std::vector<double> probs;      // MC-averaged, sums to 1
  double entropy_H = 0.0;         // total uncertainty
  double mutual_info_I = 0.0;     // epistemic part
  double aleatoric_HmI = 0.0;     // H - I
  int T = 0;
};

std::vector<PredictionWithUncertainty> mc_predict_regression(const Model& m,
                                                             const BatchInput& in,
                                                             int T, RngStream& rng);

std::vector<ClassPrediction> mc_predict_classification(const Model& m,
                                                       const BatchInput& in, int T,
                                                       RngStream& rng,
                                                       int n_softmax = 20);

// Entropy decomposition of one sample's per-pass probability vectors,
// exposed so the arithmetic can be tested on hand-written draws.
ClassPrediction classification_uncertainty(const std::vector<std::vector<double>>& per_pass);

std::vector<PredictionWithUncertainty> deterministic_predict_regression(
    const Model& m, const BatchInput& in);

std::vector<ClassPrediction> deterministic_predict_classification(const Model& m,
                                                                  const BatchInput& in);

}  // namespace ppmu
