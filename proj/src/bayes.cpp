#include "ppmu/bayes.hpp"

#include <algorithm>
#include <cmath>

#include "ppmu/errors.hpp"

namespace ppmu {

namespace {

void softmax_inplace(std::vector<double>& z) {
  double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (auto& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : z) v /= sum;
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace

std::vector<PredictionWithUncertainty> mc_predict_regression(const Model& m,
                                                             const BatchInput& in,
                                                             int T, RngStream& rng) {
  if (m.config().task != Task::Regression)
    throw ConfigError("mc_predict_regression needs a regression model");
  if (T < 2) throw ConfigError("MC regression needs T >= 2 passes, got " + std::to_string(T));
  const int b = in.batch;
  std::vector<std::vector<double>> yhat(b), var(b);
  for (int t = 0; t < T; ++t) {
    RngStream pass = rng.substream("pass", static_cast<uint64_t>(t));
    Tensor out = m.forward(in, ForwardMode::StochasticInference, &pass);
    for (int i = 0; i < b; ++i) {
      yhat[i].push_back(out.v()[i * 2]);
      var[i].push_back(std::exp(out.v()[i * 2 + 1]));
    }
  }
  std::vector<PredictionWithUncertainty> preds(b);
  for (int i = 0; i < b; ++i) {
    PredictionWithUncertainty& p = preds[i];
    p.T = T;
    // Means are anchored at the first pass; when every pass agrees (dropout
    // off) the point and variances then reproduce that single pass exactly.
    std::vector<double> dev(T), vdev(T);
    for (int t = 0; t < T; ++t) dev[t] = yhat[i][t] - yhat[i][0];
    for (int t = 0; t < T; ++t) vdev[t] = var[i][t] - var[i][0];
    p.point = yhat[i][0] + compensated_sum(dev) / T;
    std::vector<double> sq(T);
    for (int t = 0; t < T; ++t) sq[t] = (yhat[i][t] - p.point) * (yhat[i][t] - p.point);
    p.epistemic = compensated_sum(sq) / T;
    p.aleatoric = var[i][0] + compensated_sum(vdev) / T;
    p.total = p.epistemic + p.aleatoric;
  }
  return preds;
}

ClassPrediction classification_uncertainty(
    const std::vector<std::vector<double>>& per_pass) {
  if (per_pass.empty()) throw ConfigError("need at least one pass");
  const int c = static_cast<int>(per_pass.front().size());
  ClassPrediction out;
  out.T = static_cast<int>(per_pass.size());
  out.probs.assign(c, 0.0);
  std::vector<double> pass_h(per_pass.size());
  for (size_t t = 0; t < per_pass.size(); ++t) {
    if (static_cast<int>(per_pass[t].size()) != c)
      throw DimensionError("per-pass probability vectors differ in length");
    for (int j = 0; j < c; ++j) out.probs[j] += per_pass[t][j];
    pass_h[t] = entropy(per_pass[t]);
  }
  for (auto& v : out.probs) v /= static_cast<double>(per_pass.size());
  out.entropy_H = entropy(out.probs);
  double mean_h = compensated_sum(pass_h) / static_cast<double>(pass_h.size());
  out.mutual_info_I = std::max(0.0, out.entropy_H - mean_h);
  out.aleatoric_HmI = out.entropy_H - out.mutual_info_I;
  return out;
}

std::vector<ClassPrediction> mc_predict_classification(const Model& m,
                                                       const BatchInput& in, int T,
                                                       RngStream& rng, int n_softmax) {
  if (m.config().task != Task::Classification)
    throw ConfigError("mc_predict_classification needs a classification model");
  if (T < 2) throw ConfigError("MC classification needs T >= 2 passes, got " +
                               std::to_string(T));
  if (n_softmax < 1) throw ConfigError("n_softmax must be at least 1");
  const int b = in.batch, c = m.config().n_classes;
  std::vector<std::vector<std::vector<double>>> per_pass(
      b, std::vector<std::vector<double>>(T));
  for (int t = 0; t < T; ++t) {
    RngStream pass = rng.substream("pass", static_cast<uint64_t>(t));
    RngStream draws = rng.substream("softmax", static_cast<uint64_t>(t));
    Tensor out = m.forward(in, ForwardMode::StochasticInference, &pass);
    const int cols = c + 1;
    for (int i = 0; i < b; ++i) {
      const double sigma = std::exp(out.v()[i * cols + c] / 2.0);
      std::vector<double> acc(c, 0.0);
      for (int d = 0; d < n_softmax; ++d) {
        std::vector<double> z(c);
        for (int j = 0; j < c; ++j)
          z[j] = out.v()[i * cols + j] + sigma * draws.normal();
        softmax_inplace(z);
        for (int j = 0; j < c; ++j) acc[j] += z[j];
      }
      for (auto& v : acc) v /= static_cast<double>(n_softmax);
      per_pass[i][t] = std::move(acc);
    }
  }
  std::vector<ClassPrediction> preds;
  preds.reserve(b);
  for (int i = 0; i < b; ++i) preds.push_back(classification_uncertainty(per_pass[i]));
  return preds;
}

std::vector<PredictionWithUncertainty> deterministic_predict_regression(
    const Model& m, const BatchInput& in) {
  if (m.config().task != Task::Regression)
    throw ConfigError("deterministic_predict_regression needs a regression model");
  Tensor out = m.forward(in, ForwardMode::Deterministic, nullptr);
  std::vector<PredictionWithUncertainty> preds(in.batch);
  for (int i = 0; i < in.batch; ++i) {
    preds[i].T = 1;
    preds[i].point = out.v()[i * 2];
    preds[i].aleatoric = std::exp(out.v()[i * 2 + 1]);
    preds[i].epistemic = 0.0;
    preds[i].total = preds[i].aleatoric;
  }
  return preds;
}

std::vector<ClassPrediction> deterministic_predict_classification(const Model& m,
                                                                  const BatchInput& in) {
  if (m.config().task != Task::Classification)
    throw ConfigError("deterministic_predict_classification needs a classification model");
  Tensor out = m.forward(in, ForwardMode::Deterministic, nullptr);
  const int c = m.config().n_classes, cols = c + 1;
  std::vector<ClassPrediction> preds(in.batch);
  for (int i = 0; i < in.batch; ++i) {
    std::vector<double> z(c);
    for (int j = 0; j < c; ++j) z[j] = out.v()[i * cols + j];
    softmax_inplace(z);
    ClassPrediction& p = preds[i];
    p.T = 1;
    p.probs = std::move(z);
    p.entropy_H = entropy(p.probs);
    p.mutual_info_I = 0.0;
    p.aleatoric_HmI = p.entropy_H;
  }
  return preds;
}

}  // namespace ppmu
