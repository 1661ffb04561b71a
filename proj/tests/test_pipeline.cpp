#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "ppmu/errors.hpp"
#include "ppmu/pipeline.hpp"

using namespace ppmu;
namespace fs = std::filesystem;

namespace {

ModelConfig dense_reg() {
  ModelConfig mc;
  mc.arch = Arch::Dense;
  mc.task = Task::Regression;
  mc.input_dim = 1;
  mc.dense_widths = {8, 6, 0};
  return mc;
}

ModelConfig small_cnn(Task task, int vocab, int seq_len) {
  ModelConfig mc;
  mc.arch = Arch::CNN;
  mc.task = task;
  mc.vocab_size = vocab;
  mc.seq_len = seq_len;
  mc.embed_dim = 3;
  mc.conv_channels = {3, 3};
  mc.kernel_width = 3;
  mc.dense_widths = {6, 4, 0};
  mc.n_classes = 2;
  return mc;
}

TrainData line_data(int n) {
  std::vector<double> xs, ys;
  for (int i = 0; i < n; ++i) {
    const double x = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
    xs.push_back(x);
    ys.push_back(2.0 * x - 0.5);
  }
  return TrainData::from_xy(xs, ys);
}

std::vector<PrefixSample> seq_cases(int n_cases, int max_len, bool with_outcome,
                                    uint64_t seed) {
  std::vector<PrefixSample> out;
  RngStream rng(seed, "fixture");
  for (int c = 0; c < n_cases; ++c) {
    const int len = 1 + static_cast<int>(rng.uniform_int(max_len));
    for (int k = 1; k <= len; ++k) {
      PrefixSample p;
      p.case_id = "c" + std::to_string(c);
      p.prefix_len = k;
      p.activity_ids.assign(max_len, 0);
      p.elapsed_std.assign(max_len, 0.0);
      for (int i = 0; i < k; ++i) {
        p.activity_ids[max_len - k + i] = 2 + (c + i) % 3;
        p.elapsed_std[max_len - k + i] = 0.1 * i - 0.2;
      }
      p.prefix_duration_days = 0.5 * k;
      p.target_remaining_days = 0.5 * (len - k) + 0.05 * (c % 4);
      if (with_outcome) p.target_outcome = c % 2;
      out.push_back(p);
    }
  }
  return out;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "ppmu_pipeline_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json parse_json_file(const fs::path& p) {
  return nlohmann::json::parse(slurp(p));
}

Config cfg_of(std::initializer_list<std::pair<std::string, std::string>> kv) {
  Config c;
  for (const auto& [k, v] : kv) c.set(k, v);
  return c;
}

// Runs synth + prepare into <root>/synth and <root>/prep, returns the prepared dir.
fs::path make_prepared(const fs::path& root, bool classification, int n_cases) {
  Config synth = cfg_of({{"synth.kind", "process"},
                         {"synth.seed", "7"},
                         {"synth.n_cases", std::to_string(n_cases)},
                         {"out.dir", (root / "synth").string()}});
  if (classification) synth.set("synth.outcome_threshold", "4");
  cmd_synth(synth);
  Config prep = cfg_of({{"data.input", (root / "synth" / "events.csv").string()},
                        {"task", classification ? "classification" : "regression"},
                        {"data.max_len", "6"},
                        {"out.dir", (root / "prep").string()}});
  cmd_prepare(prep);
  return root / "prep";
}

void set_small_model(Config& c) {
  c.set("model.embed_dim", "4");
  c.set("model.conv_channels", "4,4");
  c.set("model.dense_widths", "8,4");
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("training reduces the loss on a linear fit") {
  TrainConfig tc;
  tc.loss = LossKind::MSE;
  tc.epochs = 60;
  tc.batch_size = 16;
  tc.lr = 0.05;
  tc.seed = 3;
  tc.plateau_stop = false;
  TrainResult r = train_model(dense_reg(), line_data(64), tc);
  REQUIRE(r.epochs_run == 60);
  CHECK(r.epoch_losses.size() == 60);
  CHECK(r.epoch_losses.back() < 0.5 * r.epoch_losses.front());
  CHECK(r.train_seconds >= 0.0);
  CHECK(r.seconds_per_epoch > 0.0);
}

TEST_CASE("training is a pure function of the seed") {
  TrainConfig tc;
  tc.loss = LossKind::MSE;
  tc.epochs = 5;
  tc.batch_size = 8;
  tc.lr = 0.01;
  tc.seed = 11;
  tc.plateau_stop = false;
  TrainResult a = train_model(dense_reg(), line_data(24), tc);
  TrainResult b = train_model(dense_reg(), line_data(24), tc);
  CHECK(a.epoch_losses == b.epoch_losses);
  REQUIRE(a.model.params().size() == b.model.params().size());
  for (size_t i = 0; i < a.model.params().size(); ++i)
    CHECK(a.model.params()[i].data()->v == b.model.params()[i].data()->v);

  tc.seed = 12;
  TrainResult c = train_model(dense_reg(), line_data(24), tc);
  CHECK(a.epoch_losses != c.epoch_losses);
}

TEST_CASE("plateau stop ends training once the loss stalls") {
  TrainConfig tc;
  tc.loss = LossKind::MSE;
  tc.epochs = 50;
  tc.batch_size = 8;
  tc.lr = 0.0;  // nothing moves, every epoch repeats the same loss
  tc.seed = 2;
  tc.shuffle = false;
  tc.plateau_window = 4;
  TrainResult r = train_model(dense_reg(), line_data(16), tc);
  CHECK(r.epochs_run == 5);

  tc.plateau_stop = false;
  tc.epochs = 12;
  TrainResult full = train_model(dense_reg(), line_data(16), tc);
  CHECK(full.epochs_run == 12);
}

TEST_CASE("mismatched configurations are rejected") {
  TrainConfig tc;
  tc.epochs = 1;
  tc.seed = 1;

  SUBCASE("loss must match the task") {
    tc.loss = LossKind::CrossEntropy;
    CHECK_THROWS_AS(train_model(dense_reg(), line_data(8), tc), ConfigError);
    auto prefixes = seq_cases(4, 5, true, 1);
    TrainData cls = TrainData::from_prefixes(prefixes, 5, Task::Classification);
    tc.loss = LossKind::MSE;
    CHECK_THROWS_AS(train_model(small_cnn(Task::Classification, 5, 5), cls, tc),
                    ConfigError);
  }
  SUBCASE("sequence data needs a sequence architecture") {
    auto prefixes = seq_cases(4, 5, false, 1);
    TrainData seq = TrainData::from_prefixes(prefixes, 5, Task::Regression);
    tc.loss = LossKind::MSE;
    ModelConfig mc = dense_reg();
    CHECK_THROWS_AS(train_model(mc, seq, tc), ConfigError);
  }
  SUBCASE("tabular data needs the dense architecture") {
    tc.loss = LossKind::MSE;
    CHECK_THROWS_AS(train_model(small_cnn(Task::Regression, 5, 5), line_data(8), tc),
                    ConfigError);
  }
  SUBCASE("seq_len must match max_len") {
    auto prefixes = seq_cases(4, 5, false, 1);
    TrainData seq = TrainData::from_prefixes(prefixes, 5, Task::Regression);
    tc.loss = LossKind::MSE;
    CHECK_THROWS_AS(train_model(small_cnn(Task::Regression, 5, 7), seq, tc),
                    ConfigError);
  }
  SUBCASE("input_dim must match") {
    ModelConfig mc = dense_reg();
    mc.input_dim = 2;
    tc.loss = LossKind::MSE;
    CHECK_THROWS_AS(train_model(mc, line_data(8), tc), ConfigError);
  }
  SUBCASE("empty data and bad knobs") {
    tc.loss = LossKind::MSE;
    CHECK_THROWS_AS(train_model(dense_reg(), TrainData{}, tc), DataError);
    TrainConfig bad = tc;
    bad.epochs = 0;
    CHECK_THROWS_AS(train_model(dense_reg(), line_data(8), bad), ConfigError);
    bad = tc;
    bad.batch_size = 0;
    CHECK_THROWS_AS(train_model(dense_reg(), line_data(8), bad), ConfigError);
  }
}

TEST_CASE("from_prefixes validates its inputs") {
  auto prefixes = seq_cases(3, 5, false, 2);
  CHECK_THROWS_AS(TrainData::from_prefixes(prefixes, 6, Task::Regression),
                  DimensionError);
  CHECK_THROWS_AS(TrainData::from_prefixes(prefixes, 5, Task::Classification),
                  DataError);
}

TEST_CASE("deterministic prediction does not depend on the chunk size") {
  Model m(dense_reg(), 21);
  TrainData data = line_data(37);
  auto a = predict_regression(m, data, false, 1, 0, 5);
  auto b = predict_regression(m, data, false, 1, 0, 997);
  REQUIRE(a.size() == 37);
  REQUIRE(b.size() == 37);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].point == b[i].point);
    CHECK(a[i].aleatoric == b[i].aleatoric);
    CHECK(a[i].epistemic == 0.0);
  }

  ModelConfig cmc = small_cnn(Task::Classification, 5, 5);
  Model cm(cmc, 22);
  auto prefixes = seq_cases(6, 5, true, 3);
  TrainData cls = TrainData::from_prefixes(prefixes, 5, Task::Classification);
  auto ca = predict_classification(cm, cls, false, 1, 0, 20, 4);
  auto cb = predict_classification(cm, cls, false, 1, 0, 20, 1000);
  REQUIRE(ca.size() == cb.size());
  for (size_t i = 0; i < ca.size(); ++i) {
    CHECK(ca[i].probs == cb[i].probs);
    CHECK(ca[i].entropy_H == cb[i].entropy_H);
  }
}

TEST_CASE("mc prediction replays for a fixed seed and chunk") {
  ModelConfig mc = dense_reg();
  mc.dropout_p = 0.3;
  Model m(mc, 23);
  TrainData data = line_data(20);
  auto a = predict_regression(m, data, true, 8, 77, 7);
  auto b = predict_regression(m, data, true, 8, 77, 7);
  REQUIRE(a.size() == b.size());
  bool any_epistemic = false;
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].point == b[i].point);
    CHECK(a[i].epistemic == b[i].epistemic);
    CHECK(a[i].total == b[i].total);
    any_epistemic = any_epistemic || a[i].epistemic > 0.0;
  }
  CHECK(any_epistemic);

  auto c = predict_regression(m, data, true, 8, 78, 7);
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i) differs = differs || a[i].point != c[i].point;
  CHECK(differs);
}

TEST_CASE("mc prediction with dropout off collapses to the deterministic outputs") {
  ModelConfig cfg = dense_reg();
  cfg.dropout_p = 0.0;
  Model m(cfg, 24);
  TrainData data = line_data(15);
  auto det = predict_regression(m, data, false, 1, 0);
  auto mc = predict_regression(m, data, true, 6, 5);
  REQUIRE(det.size() == mc.size());
  for (size_t i = 0; i < det.size(); ++i) {
    CHECK(mc[i].epistemic == 0.0);
    CHECK(mc[i].point == det[i].point);
    CHECK(mc[i].aleatoric == det[i].aleatoric);
  }
}

TEST_CASE("technique specs map to the right losses and knobs") {
  struct Row {
    Technique t;
    Task task;
    LossKind loss;
    bool drop, l2, mc;
  };
  const Row rows[] = {
      {Technique::Plain, Task::Regression, LossKind::MSE, false, false, false},
      {Technique::Hetero, Task::Regression, LossKind::HeteroRegression, false, false, false},
      {Technique::Dropout, Task::Regression, LossKind::HeteroRegression, true, false, false},
      {Technique::Bayes, Task::Regression, LossKind::HeteroRegression, true, true, true},
      {Technique::Plain, Task::Classification, LossKind::CrossEntropy, false, false, false},
      {Technique::Hetero, Task::Classification, LossKind::AttenuatedCE, false, false, false},
      {Technique::Dropout, Task::Classification, LossKind::AttenuatedCE, true, false, false},
      {Technique::Bayes, Task::Classification, LossKind::AttenuatedCE, true, true, true},
  };
  for (const Row& r : rows) {
    TechniqueSpec s = technique_spec(r.t, r.task, 0.25, 1e-3);
    CHECK(s.loss == r.loss);
    CHECK(s.dropout_p == (r.drop ? 0.25 : 0.0));
    CHECK(s.l2_lambda == (r.l2 ? 1e-3 : 0.0));
    CHECK(s.mc_inference == r.mc);
  }
  for (const char* name : {"plain", "hetero", "dropout", "bayes"})
    CHECK(to_string(technique_from_string(name)) == name);
  CHECK_THROWS_AS(technique_from_string("ensemble"), ConfigError);
}

TEST_CASE("regression predictions roundtrip through csv") {
  fs::path dir = fresh_dir("pred_reg");
  auto samples = seq_cases(3, 4, false, 4);
  std::vector<PredictionWithUncertainty> preds(samples.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    preds[i].point = 1.5 + 0.25 * i;
    preds[i].epistemic = 0.01 * i;
    preds[i].aleatoric = 0.5;
    preds[i].total = preds[i].epistemic + preds[i].aleatoric;
  }
  const std::string path = (dir / "predictions.csv").string();
  write_predictions_regression(samples, preds, path);

  Task task;
  auto rows = read_predictions_csv(path, &task);
  CHECK(task == Task::Regression);
  REQUIRE(rows.size() == samples.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].case_id == samples[i].case_id);
    CHECK(rows[i].prefix_len == samples[i].prefix_len);
    CHECK(rows[i].y_true == samples[i].target_remaining_days);
    CHECK(rows[i].point == preds[i].point);
    CHECK(rows[i].epistemic == preds[i].epistemic);
    CHECK(rows[i].aleatoric == preds[i].aleatoric);
    CHECK(rows[i].total == preds[i].total);
  }
}

TEST_CASE("classification predictions map fields on read") {
  fs::path dir = fresh_dir("pred_cls");
  auto samples = seq_cases(2, 4, true, 5);
  std::vector<ClassPrediction> preds(samples.size());
  for (size_t i = 0; i < preds.size(); ++i) {
    const double p1 = 0.2 + 0.1 * i;
    preds[i].probs = {1.0 - p1, p1};
    preds[i].entropy_H = 0.6 - 0.01 * i;
    preds[i].mutual_info_I = 0.1;
    preds[i].aleatoric_HmI = preds[i].entropy_H - 0.1;
    preds[i].T = 5;
  }
  const std::string path = (dir / "predictions.csv").string();
  write_predictions_classification(samples, preds, path);

  Task task;
  auto rows = read_predictions_csv(path, &task);
  CHECK(task == Task::Classification);
  REQUIRE(rows.size() == samples.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].y_true == *samples[i].target_outcome);
    CHECK(rows[i].point == preds[i].probs[1]);
    CHECK(rows[i].total == preds[i].entropy_H);
    CHECK(rows[i].epistemic == preds[i].mutual_info_I);
    CHECK(rows[i].aleatoric == preds[i].aleatoric_HmI);
  }
}

TEST_CASE("prediction export and import validate their inputs") {
  fs::path dir = fresh_dir("pred_bad");
  auto samples = seq_cases(2, 4, false, 6);
  std::vector<PredictionWithUncertainty> preds(samples.size() - 1);
  CHECK_THROWS_AS(
      write_predictions_regression(samples, preds, (dir / "x.csv").string()),
      DimensionError);

  auto labeled = seq_cases(2, 4, true, 6);
  std::vector<ClassPrediction> cpreds(labeled.size());
  for (auto& p : cpreds) p.probs = {0.2, 0.3, 0.5};
  CHECK_THROWS_AS(
      write_predictions_classification(labeled, cpreds, (dir / "x.csv").string()),
      ConfigError);

  auto unlabeled = seq_cases(2, 4, false, 6);
  std::vector<ClassPrediction> bpreds(unlabeled.size());
  for (auto& p : bpreds) p.probs = {0.4, 0.6};
  CHECK_THROWS_AS(
      write_predictions_classification(unlabeled, bpreds, (dir / "x.csv").string()),
      DataError);

  write_file((dir / "junk.csv").string(), "who,knows\n1,2\n");
  CHECK_THROWS_AS(read_predictions_csv((dir / "junk.csv").string()), DataError);

  write_file((dir / "badnum.csv").string(),
             "case_id,prefix_len,y_true,point,epistemic,aleatoric,total\n"
             "c0,1,1.0,2.0,0.1,0.2,0.3\n"
             "c0,2,oops,2.0,0.1,0.2,0.3\n");
  CHECK_THROWS_WITH_AS(read_predictions_csv((dir / "badnum.csv").string()),
                       doctest::Contains("line 3"), DataError);
  CHECK_THROWS_AS(read_predictions_csv((dir / "missing.csv").string()), DataError);
}

namespace {

SweepPlan tiny_plan() {
  SweepPlan plan;
  plan.train = seq_cases(8, 5, false, 7);
  plan.test = seq_cases(4, 5, false, 8);
  plan.max_len = 5;
  plan.vocab_size = 5;
  plan.task = Task::Regression;
  plan.model = small_cnn(Task::Regression, 5, 5);
  plan.train_cfg.epochs = 2;
  plan.train_cfg.batch_size = 16;
  plan.train_cfg.plateau_stop = false;
  plan.fractions = {1.0, 0.5};
  plan.techniques = {Technique::Plain, Technique::Hetero};
  plan.repeats = 2;
  plan.seed = 31;
  plan.T = 2;
  return plan;
}

}  // namespace

TEST_CASE("run_sweep pairs seeds across techniques") {
  SweepPlan plan = tiny_plan();
  SweepResult res = run_sweep(plan);
  REQUIRE(res.cells.size() == 8);

  for (int fi = 0; fi < 2; ++fi)
    for (int ti = 0; ti < 2; ++ti)
      for (int r = 0; r < 2; ++r) {
        const SweepCell& c = res.cells[fi * 4 + ti * 2 + r];
        CHECK(c.fraction == plan.fractions[fi]);
        CHECK(c.technique == plan.techniques[ti]);
        CHECK(c.repeat == r);
        REQUIRE_MESSAGE(c.ok, c.error);
        CHECK(c.epochs_run == 2);
        CHECK(std::isfinite(c.metric));
        CHECK(c.metric >= 0.0);
        CHECK(c.has_baseline);
        CHECK(c.baseline_mae >= 0.0);
      }

  // Same fraction and repeat means the same data and training seed, whatever
  // the technique.
  for (int fi = 0; fi < 2; ++fi)
    for (int r = 0; r < 2; ++r)
      CHECK(res.cells[fi * 4 + r].seed == res.cells[fi * 4 + 2 + r].seed);
  CHECK(res.cells[0].seed != res.cells[1].seed);
  CHECK(res.cells[0].seed != res.cells[4].seed);
}

TEST_CASE("run_sweep is independent of the job count") {
  SweepPlan plan = tiny_plan();
  SweepResult serial = run_sweep(plan);
  plan.jobs = 3;
  SweepResult parallel = run_sweep(plan);
  REQUIRE(serial.cells.size() == parallel.cells.size());
  for (size_t i = 0; i < serial.cells.size(); ++i) {
    CHECK(serial.cells[i].ok == parallel.cells[i].ok);
    CHECK(serial.cells[i].seed == parallel.cells[i].seed);
    CHECK(serial.cells[i].metric == parallel.cells[i].metric);
    CHECK(serial.cells[i].baseline_mae == parallel.cells[i].baseline_mae);
  }
}

TEST_CASE("run_sweep handles classification without a baseline") {
  SweepPlan plan;
  plan.train = seq_cases(8, 5, true, 9);
  plan.test = seq_cases(6, 5, true, 10);
  plan.max_len = 5;
  plan.vocab_size = 5;
  plan.task = Task::Classification;
  plan.model = small_cnn(Task::Classification, 5, 5);
  plan.train_cfg.epochs = 1;
  plan.train_cfg.plateau_stop = false;
  plan.fractions = {1.0};
  plan.techniques = {Technique::Plain};
  plan.repeats = 1;
  plan.seed = 13;
  plan.T = 2;
  SweepResult res = run_sweep(plan);
  REQUIRE(res.cells.size() == 1);
  REQUIRE_MESSAGE(res.cells[0].ok, res.cells[0].error);
  CHECK(!res.cells[0].has_baseline);
  CHECK(res.cells[0].metric >= 0.0);
  CHECK(res.cells[0].metric <= 1.0);
}

TEST_CASE("run_sweep validates the plan") {
  SweepPlan plan = tiny_plan();
  plan.train.clear();
  CHECK_THROWS_AS(run_sweep(plan), DataError);

  plan = tiny_plan();
  plan.fractions = {0.0};
  CHECK_THROWS_AS(run_sweep(plan), ConfigError);
  plan.fractions = {1.5};
  CHECK_THROWS_AS(run_sweep(plan), ConfigError);

  plan = tiny_plan();
  plan.repeats = 0;
  CHECK_THROWS_AS(run_sweep(plan), ConfigError);

  plan = tiny_plan();
  plan.techniques.clear();
  CHECK_THROWS_AS(run_sweep(plan), ConfigError);
}

TEST_CASE("resolve_out_dir honors PPMU_OUT_ROOT for relative paths") {
  fs::path root = fresh_dir("outroot");
  setenv("PPMU_OUT_ROOT", root.string().c_str(), 1);
  Config rel = cfg_of({{"out.dir", "nested/run1"}});
  const std::string resolved = resolve_out_dir(rel);
  CHECK(resolved == (root / "nested" / "run1").string());
  CHECK(fs::is_directory(resolved));

  fs::path abs_dir = fresh_dir("outroot_abs");
  Config abs = cfg_of({{"out.dir", (abs_dir / "sub").string()}});
  CHECK(resolve_out_dir(abs) == (abs_dir / "sub").string());
  unsetenv("PPMU_OUT_ROOT");
}

TEST_CASE("write_file lands complete content and leaves no temp file") {
  fs::path dir = fresh_dir("write_file");
  const std::string path = (dir / "a.txt").string();
  write_file(path, "first\n");
  CHECK(slurp(path) == "first\n");
  write_file(path, "second\n");
  CHECK(slurp(path) == "second\n");
  CHECK(!fs::exists(path + ".tmp"));
}

TEST_CASE("write_manifest records the command and a stable fingerprint") {
  fs::path dir = fresh_dir("manifest");
  Config cfg = cfg_of({{"out.dir", dir.string()}, {"train.seed", "9"}});
  write_manifest(cfg, "train", dir.string());
  nlohmann::json j = parse_json_file(dir / "manifest.json");
  CHECK(j.at("tool") == "ppmu");
  CHECK(j.at("format_version") == 1);
  CHECK(j.at("command") == "train");
  const std::string fp = j.at("config_fingerprint").get<std::string>();
  REQUIRE(fp.size() == 16);
  for (char ch : fp) CHECK(std::string("0123456789abcdef").find(ch) != std::string::npos);
  CHECK(j.at("config").at("train.seed") == "9");
}

TEST_CASE("synth, prepare, train, predict, evaluate chain produces consistent artifacts") {
  fs::path root = fresh_dir("chain_reg");
  fs::path prep = make_prepared(root, false, 40);

  for (const char* f : {"train_prefixes.csv", "test_prefixes.csv", "stats.json",
                        "meta.json", "manifest.json"})
    CHECK(fs::exists(prep / f));
  nlohmann::json meta = parse_json_file(prep / "meta.json");
  CHECK(meta.at("task") == "regression");
  CHECK(meta.at("vocab_size").get<int>() >= 3);
  const int n_test = meta.at("n_test_prefixes").get<int>();
  REQUIRE(meta.at("n_train_prefixes").get<int>() > 0);
  REQUIRE(n_test > 0);

  Config train = cfg_of({{"data.dir", prep.string()},
                         {"train.seed", "11"},
                         {"train.epochs", "2"},
                         {"train.batch_size", "32"},
                         {"train.plateau_stop", "false"},
                         {"out.dir", (root / "model").string()}});
  set_small_model(train);
  cmd_train(train);
  for (const char* f : {"checkpoint.json", "train_log.csv", "timing.json", "manifest.json"})
    CHECK(fs::exists(root / "model" / f));
  {
    std::istringstream log(slurp(root / "model" / "train_log.csv"));
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) ++lines;
    nlohmann::json timing = parse_json_file(root / "model" / "timing.json");
    CHECK(lines == 1 + timing.at("epochs_run").get<int>());
  }

  Config predict = cfg_of({{"checkpoint", (root / "model" / "checkpoint.json").string()},
                           {"data.dir", prep.string()},
                           {"predict.mode", "mc"},
                           {"predict.T", "3"},
                           {"predict.seed", "5"},
                           {"out.dir", (root / "pred").string()}});
  cmd_predict(predict);
  Task task;
  auto rows = read_predictions_csv((root / "pred" / "predictions.csv").string(), &task);
  CHECK(task == Task::Regression);
  CHECK(static_cast<int>(rows.size()) == n_test);

  Config eval = cfg_of({{"predictions", (root / "pred" / "predictions.csv").string()},
                        {"data.dir", prep.string()},
                        {"eval.window", "40"},
                        {"eval.stride", "20"},
                        {"out.dir", (root / "eval").string()}});
  cmd_evaluate(eval);
  for (const char* f : {"retention.json", "retention.csv", "buckets.json", "buckets.csv",
                        "calibration.json", "calibration.csv", "baseline.json",
                        "summary.json", "manifest.json"})
    CHECK(fs::exists(root / "eval" / f));
  nlohmann::json summary = parse_json_file(root / "eval" / "summary.json");
  CHECK(summary.at("task") == "regression");
  CHECK(summary.at("n").get<int>() == n_test);
  CHECK(std::isfinite(summary.at("mae_days").get<double>()));
  CHECK(std::isfinite(summary.at("baseline_mae_days").get<double>()));
  CHECK(summary.at("baseline_k").get<int>() == 3);

  // Re-running training and prediction with the same inputs reproduces the
  // model and prediction files byte for byte.
  Config train2 = train;
  train2.set("out.dir", (root / "model2").string());
  cmd_train(train2);
  CHECK(slurp(root / "model" / "checkpoint.json") ==
        slurp(root / "model2" / "checkpoint.json"));
  CHECK(slurp(root / "model" / "train_log.csv") ==
        slurp(root / "model2" / "train_log.csv"));

  Config predict2 = predict;
  predict2.set("checkpoint", (root / "model2" / "checkpoint.json").string());
  predict2.set("out.dir", (root / "pred2").string());
  cmd_predict(predict2);
  CHECK(slurp(root / "pred" / "predictions.csv") ==
        slurp(root / "pred2" / "predictions.csv"));
}

TEST_CASE("classification chain reports auc and skips regression-only outputs") {
  fs::path root = fresh_dir("chain_cls");
  fs::path prep = make_prepared(root, true, 60);
  nlohmann::json meta = parse_json_file(prep / "meta.json");
  CHECK(meta.at("task") == "classification");

  Config train = cfg_of({{"data.dir", prep.string()},
                         {"train.seed", "17"},
                         {"train.epochs", "2"},
                         {"train.batch_size", "32"},
                         {"train.plateau_stop", "false"},
                         {"train.t_softmax", "4"},
                         {"out.dir", (root / "model").string()}});
  set_small_model(train);
  cmd_train(train);

  Config predict = cfg_of({{"checkpoint", (root / "model" / "checkpoint.json").string()},
                           {"data.dir", prep.string()},
                           {"predict.mode", "mc"},
                           {"predict.T", "3"},
                           {"predict.n_softmax", "4"},
                           {"predict.seed", "6"},
                           {"out.dir", (root / "pred").string()}});
  cmd_predict(predict);

  Config eval = cfg_of({{"predictions", (root / "pred" / "predictions.csv").string()},
                        {"data.dir", prep.string()},
                        {"out.dir", (root / "eval").string()}});
  cmd_evaluate(eval);
  nlohmann::json summary = parse_json_file(root / "eval" / "summary.json");
  CHECK(summary.at("task") == "classification");
  const double auc = summary.at("auc_roc").get<double>();
  CHECK(auc >= 0.0);
  CHECK(auc <= 1.0);
  CHECK(!fs::exists(root / "eval" / "calibration.json"));
  CHECK(!fs::exists(root / "eval" / "baseline.json"));
}

TEST_CASE("cmd_sweep writes cell and summary tables") {
  fs::path root = fresh_dir("cmd_sweep");
  fs::path prep = make_prepared(root, false, 30);

  Config sweep = cfg_of({{"data.dir", prep.string()},
                         {"sweep.seed", "3"},
                         {"sweep.repeats", "1"},
                         {"sweep.fractions", "1.0"},
                         {"sweep.techniques", "plain,bayes"},
                         {"train.epochs", "1"},
                         {"train.batch_size", "64"},
                         {"train.plateau_stop", "false"},
                         {"predict.T", "2"},
                         {"out.dir", (root / "sweep").string()}});
  set_small_model(sweep);
  cmd_sweep(sweep);

  std::istringstream cells(slurp(root / "sweep" / "sweep.csv"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(cells, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] ==
        "fraction,technique,repeat,seed,status,metric,baseline_mae,epochs_run,error");
  CHECK(lines[1].find(",plain,0,") != std::string::npos);
  CHECK(lines[1].find(",ok,") != std::string::npos);
  CHECK(lines[2].find(",bayes,0,") != std::string::npos);
  CHECK(lines[2].find(",ok,") != std::string::npos);

  std::istringstream summary(slurp(root / "sweep" / "sweep_summary.csv"));
  std::getline(summary, line);
  CHECK(line == "fraction,technique,n_ok,mean_metric,mean_baseline_mae");

  nlohmann::json timing = parse_json_file(root / "sweep" / "timing.json");
  CHECK(timing.contains("plain_seconds_per_epoch"));
  CHECK(timing.contains("bayes_seconds_per_epoch"));
  CHECK(timing.at("bayes_over_plain_epoch_ratio").get<double>() > 0.0);
  CHECK(fs::exists(root / "sweep" / "manifest.json"));
}

TEST_CASE("commands insist on their seeds and modes") {
  fs::path root = fresh_dir("cmd_guards");

  Config synth = cfg_of({{"synth.kind", "process"},
                         {"out.dir", (root / "synth").string()}});
  CHECK_THROWS_WITH_AS(cmd_synth(synth), doctest::Contains("synth.seed"), ConfigError);
  synth.set("synth.seed", "1");
  synth.set("synth.kind", "fancy");
  CHECK_THROWS_AS(cmd_synth(synth), ConfigError);

  fs::path prep = make_prepared(root, false, 20);
  Config train = cfg_of({{"data.dir", prep.string()},
                         {"train.epochs", "1"},
                         {"out.dir", (root / "model").string()}});
  set_small_model(train);
  CHECK_THROWS_WITH_AS(cmd_train(train), doctest::Contains("train.seed"), ConfigError);
  train.set("train.seed", "1");
  train.set("train.plateau_stop", "false");
  cmd_train(train);

  Config predict = cfg_of({{"checkpoint", (root / "model" / "checkpoint.json").string()},
                           {"data.dir", prep.string()},
                           {"out.dir", (root / "pred").string()}});
  CHECK_THROWS_WITH_AS(cmd_predict(predict), doctest::Contains("predict.seed"),
                       ConfigError);
  predict.set("predict.mode", "sometimes");
  CHECK_THROWS_AS(cmd_predict(predict), ConfigError);
  predict.set("predict.mode", "deterministic");
  cmd_predict(predict);  // deterministic mode needs no seed
  CHECK(fs::exists(root / "pred" / "predictions.csv"));

  Config sweep = cfg_of({{"data.dir", prep.string()},
                         {"out.dir", (root / "sweep").string()}});
  CHECK_THROWS_WITH_AS(cmd_sweep(sweep), doctest::Contains("sweep.seed"), ConfigError);
}

}  // TEST_SUITE
