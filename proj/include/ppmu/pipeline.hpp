#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ppmu/bayes.hpp"
#include "ppmu/config.hpp"
#include "ppmu/eval.hpp"
#include "ppmu/eventlog.hpp"
#include "ppmu/losses.hpp"
#include "ppmu/nets.hpp"

namespace ppmu {

// Training inputs for either a sequence task (prefix samples) or a plain
// tabular task (flattened rows for the dense architecture).
struct TrainData {
  std::vector<PrefixSample> samples;
  int max_len = 0;
  std::vector<double> x;
  int input_dim = 0;
  std::vector<double> y_reg;
  std::vector<int> y_cls;

  int n() const;
  bool is_seq() const { return !samples.empty(); }
  BatchInput gather(const std::vector<int>& order, int from, int to) const;

  static TrainData from_prefixes(std::vector<PrefixSample> samples, int max_len,
                                 Task task);
  static TrainData from_xy(const std::vector<double>& xs,
                           const std::vector<double>& ys, int input_dim = 1);
};

struct TrainConfig {
  LossKind loss = LossKind::MSE;
  int epochs = 100;
  int batch_size = 64;
  double lr = 1e-3;
  double adam_weight_decay = 0.0;
  std::uint64_t seed = 1;
  bool plateau_stop = true;
  int plateau_window = 10;
  double plateau_tol = 1e-4;
  int t_softmax = 20;
  bool shuffle = true;
};

struct TrainResult {
  Model model;
  std::vector<double> epoch_losses;  // mean per-sample loss per epoch
  int epochs_run = 0;
  double train_seconds = 0.0;
  double seconds_per_epoch = 0.0;
};

TrainResult train_model(const ModelConfig& mc, const TrainData& data,
                        const TrainConfig& tc);

std::vector<PredictionWithUncertainty> predict_regression(const Model& m,
                                                          const TrainData& data,
                                                          bool mc_dropout, int T,
                                                          std::uint64_t seed,
                                                          int chunk = 256);

std::vector<ClassPrediction> predict_classification(const Model& m,
                                                    const TrainData& data,
                                                    bool mc_dropout, int T,
                                                    std::uint64_t seed,
                                                    int n_softmax = 20, int chunk = 256);

// The four training regimes compared in the sweep: plain maximum likelihood,
// loss attenuation, attenuation + dropout, and the full Bayes setup
// (attenuation + dropout + L2 + MC inference).
enum class Technique { Plain, Hetero, Dropout, Bayes };

Technique technique_from_string(const std::string& s);
std::string to_string(Technique t);

struct TechniqueSpec {
  LossKind loss = LossKind::MSE;
  double dropout_p = 0.0;
  double l2_lambda = 0.0;
  bool mc_inference = false;
};

TechniqueSpec technique_spec(Technique t, Task task, double dropout_p,
                             double l2_lambda);

void write_predictions_regression(const std::vector<PrefixSample>& samples,
                                  const std::vector<PredictionWithUncertainty>& preds,
                                  const std::string& path);
void write_predictions_classification(const std::vector<PrefixSample>& samples,
                                      const std::vector<ClassPrediction>& preds,
                                      const std::string& path);

struct PredictionRow {
  std::string case_id;
  int prefix_len = 0;
  double y_true = 0.0;
  // regression: point, epistemic, aleatoric, total
  // classification: p_positive, I, HmI, H (total carries the entropy)
  double point = 0.0;
  double epistemic = 0.0;
  double aleatoric = 0.0;
  double total = 0.0;
};

std::vector<PredictionRow> read_predictions_csv(const std::string& path,
                                                Task* task_out = nullptr);

struct SweepPlan {
  std::vector<PrefixSample> train;
  std::vector<PrefixSample> test;
  int max_len = 10;
  int vocab_size = 2;
  Task task = Task::Regression;
  ModelConfig model;      // dropout_p / l2_lambda filled per technique
  TrainConfig train_cfg;  // seed filled per cell
  std::vector<double> fractions{1.0};
  std::vector<Technique> techniques{Technique::Plain, Technique::Hetero,
                                    Technique::Dropout, Technique::Bayes};
  int repeats = 5;
  std::uint64_t seed = 1;
  double dropout_p = 0.05;
  double l2_lambda = 1e-4;
  int T = 50;
  int jobs = 1;
  bool with_baseline = true;
};

struct SweepCell {
  double fraction = 1.0;
  Technique technique = Technique::Plain;
  int repeat = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double metric = 0.0;        // MAE (regression) or AUC (classification)
  double baseline_mae = 0.0;  // regression only
  bool has_baseline = false;
  int epochs_run = 0;
  double seconds_per_epoch = 0.0;
};

struct SweepResult {
  Task task = Task::Regression;
  std::vector<SweepCell> cells;
};

SweepResult run_sweep(const SweepPlan& plan);

// ---- command layer (shared by the CLI and the tests) ----

std::string resolve_out_dir(const Config& cfg);
void write_file(const std::string& path, const std::string& content);
void write_manifest(const Config& cfg, const std::string& command,
                    const std::string& out_dir);

void cmd_prepare(const Config& cfg);
void cmd_synth(const Config& cfg);
void cmd_train(const Config& cfg);
void cmd_predict(const Config& cfg);
void cmd_evaluate(const Config& cfg);
void cmd_sweep(const Config& cfg);

}  // namespace ppmu
