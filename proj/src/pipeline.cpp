#include "ppmu/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "ppmu/baseline.hpp"
#include "ppmu/errors.hpp"
#include "ppmu/synthgen.hpp"

namespace fs = std::filesystem;

namespace ppmu {

int TrainData::n() const {
  if (is_seq()) return static_cast<int>(samples.size());
  return input_dim > 0 ? static_cast<int>(x.size()) / input_dim : 0;
}

BatchInput TrainData::gather(const std::vector<int>& order, int from, int to) const {
  BatchInput b;
  b.batch = to - from;
  if (is_seq()) {
    b.ids.reserve(static_cast<size_t>(b.batch) * max_len);
    b.elapsed.reserve(static_cast<size_t>(b.batch) * max_len);
    for (int i = from; i < to; ++i) {
      const PrefixSample& s = samples[order[i]];
      b.ids.insert(b.ids.end(), s.activity_ids.begin(), s.activity_ids.end());
      b.elapsed.insert(b.elapsed.end(), s.elapsed_std.begin(), s.elapsed_std.end());
    }
  } else {
    b.x.reserve(static_cast<size_t>(b.batch) * input_dim);
    for (int i = from; i < to; ++i)
      for (int d = 0; d < input_dim; ++d)
        b.x.push_back(x[static_cast<size_t>(order[i]) * input_dim + d]);
  }
  return b;
}

TrainData TrainData::from_prefixes(std::vector<PrefixSample> samples, int max_len,
                                   Task task) {
  TrainData d;
  d.max_len = max_len;
  d.samples = std::move(samples);
  for (const auto& s : d.samples) {
    if (static_cast<int>(s.activity_ids.size()) != max_len)
      throw DimensionError("prefix sample length does not match max_len");
    if (task == Task::Regression) {
      d.y_reg.push_back(s.target_remaining_days);
    } else {
      if (!s.target_outcome)
        throw DataError("classification needs an outcome for case '" + s.case_id + "'");
      d.y_cls.push_back(*s.target_outcome);
    }
  }
  return d;
}

TrainData TrainData::from_xy(const std::vector<double>& xs,
                             const std::vector<double>& ys, int input_dim) {
  if (input_dim < 1) throw ConfigError("input_dim must be positive");
  if (xs.size() != ys.size() * static_cast<size_t>(input_dim))
    throw DimensionError("x/y sizes do not agree with input_dim");
  TrainData d;
  d.x = xs;
  d.input_dim = input_dim;
  d.y_reg = ys;
  return d;
}

namespace {

void check_loss_task(LossKind loss, Task task) {
  const bool reg_loss = loss == LossKind::MSE || loss == LossKind::HeteroRegression;
  if (reg_loss != (task == Task::Regression))
    throw ConfigError("loss kind does not match the task");
}

Tensor column_targets(const std::vector<double>& y, const std::vector<int>& order,
                      int from, int to) {
  std::vector<double> v;
  v.reserve(to - from);
  for (int i = from; i < to; ++i) v.push_back(y[order[i]]);
  return Tensor::from({to - from, 1}, std::move(v));
}

std::vector<int> label_targets(const std::vector<int>& y, const std::vector<int>& order,
                               int from, int to) {
  std::vector<int> v;
  v.reserve(to - from);
  for (int i = from; i < to; ++i) v.push_back(y[order[i]]);
  return v;
}

}  // namespace

TrainResult train_model(const ModelConfig& mc, const TrainData& data,
                        const TrainConfig& tc) {
  if (data.n() < 1) throw DataError("cannot train on an empty dataset");
  if (tc.epochs < 1) throw ConfigError("epochs must be positive");
  if (tc.batch_size < 1) throw ConfigError("batch_size must be positive");
  check_loss_task(tc.loss, mc.task);
  if (data.is_seq() && mc.seq_len != data.max_len)
    throw ConfigError("model seq_len " + std::to_string(mc.seq_len) +
                      " != data max_len " + std::to_string(data.max_len));
  if (!data.is_seq() && mc.arch != Arch::Dense)
    throw ConfigError("tabular data needs the dense architecture");
  if (data.is_seq() && mc.arch == Arch::Dense)
    throw ConfigError("the dense architecture takes tabular rows, not prefixes");
  if (!data.is_seq() && mc.input_dim != data.input_dim)
    throw ConfigError("model input_dim does not match the data");

  TrainResult result;
  result.model = Model(mc, tc.seed);
  Model& model = result.model;

  AdamConfig acfg;
  acfg.lr = tc.lr;
  acfg.weight_decay = tc.adam_weight_decay;
  Adam adam(acfg);

  RngStream root(tc.seed, "train");
  const int n = data.n();
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  const bool use_l2 = mc.l2_lambda > 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  long step = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    if (tc.shuffle) {
      RngStream sh = root.substream("shuffle", static_cast<uint64_t>(epoch));
      for (int i = 0; i < n - 1; ++i) {
        const int j = i + sh.uniform_int(n - i);
        std::swap(order[i], order[j]);
      }
    }
    double loss_sum = 0.0;
    for (int from = 0; from < n; from += tc.batch_size, ++step) {
      const int to = std::min(n, from + tc.batch_size);
      BatchInput batch = data.gather(order, from, to);
      RngStream drop = root.substream("dropout", static_cast<uint64_t>(step));

      Tape tape;
      model.attach(tape);
      Tensor out = model.forward(batch, ForwardMode::Train, &drop);
      Tensor loss;
      switch (tc.loss) {
        case LossKind::MSE:
          loss = mse_loss(slice_cols(out, 0, 1), column_targets(data.y_reg, order, from, to));
          break;
        case LossKind::HeteroRegression:
          loss = hetero_regression_loss(slice_cols(out, 0, 1), slice_cols(out, 1, 2),
                                        column_targets(data.y_reg, order, from, to));
          break;
        case LossKind::CrossEntropy:
          loss = cross_entropy_loss(slice_cols(out, 0, mc.n_classes),
                                    label_targets(data.y_cls, order, from, to));
          break;
        case LossKind::AttenuatedCE: {
          RngStream eps = root.substream("attce", static_cast<uint64_t>(step));
          Tensor s = reshape(slice_cols(out, mc.n_classes, mc.n_classes + 1), {to - from});
          loss = attenuated_ce_loss(slice_cols(out, 0, mc.n_classes), s,
                                    label_targets(data.y_cls, order, from, to),
                                    tc.t_softmax, eps);
          break;
        }
      }
      if (use_l2) loss = add(loss, model.l2_penalty());
      const double lval = loss.value();
      if (!std::isfinite(lval))
        throw NumericError("training loss became nonfinite at epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(step));
      loss_sum += lval * (to - from);
      tape.backward(loss);
      model.zero_pad_gradient();
      adam.step(model.params());
    }
    result.epoch_losses.push_back(loss_sum / n);
    result.epochs_run = epoch + 1;

    if (tc.plateau_stop && epoch >= tc.plateau_window) {
      const double prev = result.epoch_losses[epoch - tc.plateau_window];
      const double cur = result.epoch_losses[epoch];
      if (prev - cur < tc.plateau_tol * std::max(std::abs(prev), 1e-12)) break;
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  result.train_seconds = std::chrono::duration<double>(t1 - t0).count();
  result.seconds_per_epoch = result.train_seconds / result.epochs_run;
  return result;
}

std::vector<PredictionWithUncertainty> predict_regression(const Model& m,
                                                          const TrainData& data,
                                                          bool mc_dropout, int T,
                                                          std::uint64_t seed, int chunk) {
  const int n = data.n();
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  RngStream root(seed, "predict");
  std::vector<PredictionWithUncertainty> out;
  out.reserve(n);
  int ci = 0;
  for (int from = 0; from < n; from += chunk, ++ci) {
    const int to = std::min(n, from + chunk);
    BatchInput batch = data.gather(order, from, to);
    std::vector<PredictionWithUncertainty> part;
    if (mc_dropout) {
      RngStream r = root.substream("chunk", static_cast<uint64_t>(ci));
      part = mc_predict_regression(m, batch, T, r);
    } else {
      part = deterministic_predict_regression(m, batch);
    }
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<ClassPrediction> predict_classification(const Model& m, const TrainData& data,
                                                    bool mc_dropout, int T,
                                                    std::uint64_t seed, int n_softmax,
                                                    int chunk) {
  const int n = data.n();
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  RngStream root(seed, "predict");
  std::vector<ClassPrediction> out;
  out.reserve(n);
  int ci = 0;
  for (int from = 0; from < n; from += chunk, ++ci) {
    const int to = std::min(n, from + chunk);
    BatchInput batch = data.gather(order, from, to);
    std::vector<ClassPrediction> part;
    if (mc_dropout) {
      RngStream r = root.substream("chunk", static_cast<uint64_t>(ci));
      part = mc_predict_classification(m, batch, T, r, n_softmax);
    } else {
      part = deterministic_predict_classification(m, batch);
    }
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

Technique technique_from_string(const std::string& s) {
  if (s == "plain") return Technique::Plain;
  if (s == "hetero") return Technique::Hetero;
  if (s == "dropout") return Technique::Dropout;
  if (s == "bayes") return Technique::Bayes;
  throw ConfigError("unknown technique '" + s +
                    "' (want plain, hetero, dropout or bayes)");
}

std::string to_string(Technique t) {
  switch (t) {
    case Technique::Plain: return "plain";
    case Technique::Hetero: return "hetero";
    case Technique::Dropout: return "dropout";
    case Technique::Bayes: return "bayes";
  }
  return "?";
}

TechniqueSpec technique_spec(Technique t, Task task, double dropout_p,
                             double l2_lambda) {
  TechniqueSpec spec;
  const bool reg = task == Task::Regression;
  switch (t) {
    case Technique::Plain:
      spec.loss = reg ? LossKind::MSE : LossKind::CrossEntropy;
      break;
    case Technique::Hetero:
      spec.loss = reg ? LossKind::HeteroRegression : LossKind::AttenuatedCE;
      break;
    case Technique::Dropout:
      spec.loss = reg ? LossKind::HeteroRegression : LossKind::AttenuatedCE;
      spec.dropout_p = dropout_p;
      break;
    case Technique::Bayes:
      spec.loss = reg ? LossKind::HeteroRegression : LossKind::AttenuatedCE;
      spec.dropout_p = dropout_p;
      spec.l2_lambda = l2_lambda;
      spec.mc_inference = true;
      break;
  }
  return spec;
}

void write_predictions_regression(const std::vector<PrefixSample>& samples,
                                  const std::vector<PredictionWithUncertainty>& preds,
                                  const std::string& path) {
  if (samples.size() != preds.size())
    throw DimensionError("predictions do not match the sample count");
  std::ostringstream out;
  out << "case_id,prefix_len,y_true,point,epistemic,aleatoric,total\n";
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& p = preds[i];
    out << s.case_id << "," << s.prefix_len << ","
        << format_double(s.target_remaining_days) << "," << format_double(p.point) << ","
        << format_double(p.epistemic) << "," << format_double(p.aleatoric) << ","
        << format_double(p.total) << "\n";
  }
  write_file(path, out.str());
}

void write_predictions_classification(const std::vector<PrefixSample>& samples,
                                      const std::vector<ClassPrediction>& preds,
                                      const std::string& path) {
  if (samples.size() != preds.size())
    throw DimensionError("predictions do not match the sample count");
  std::ostringstream out;
  out << "case_id,prefix_len,y_true,p_positive,H,I,HmI\n";
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& p = preds[i];
    if (p.probs.size() != 2)
      throw ConfigError("prediction export expects binary classification");
    if (!s.target_outcome)
      throw DataError("case '" + s.case_id + "' lacks an outcome label");
    out << s.case_id << "," << s.prefix_len << "," << *s.target_outcome << ","
        << format_double(p.probs[1]) << "," << format_double(p.entropy_H) << ","
        << format_double(p.mutual_info_I) << "," << format_double(p.aleatoric_HmI)
        << "\n";
  }
  write_file(path, out.str());
}

std::vector<PredictionRow> read_predictions_csv(const std::string& path,
                                                Task* task_out) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty predictions file");
  Task task;
  if (line == "case_id,prefix_len,y_true,point,epistemic,aleatoric,total") {
    task = Task::Regression;
  } else if (line == "case_id,prefix_len,y_true,p_positive,H,I,HmI") {
    task = Task::Classification;
  } else {
    throw DataError("unrecognized predictions header: " + line);
  }
  if (task_out) *task_out = task;

  std::vector<PredictionRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f = split_list(line, ',');
    if (f.size() != 7)
      throw DataError("predictions line " + std::to_string(line_no) +
                      ": expected 7 fields");
    PredictionRow r;
    r.case_id = f[0];
    try {
      r.prefix_len = std::stoi(f[1]);
      r.y_true = std::stod(f[2]);
      if (task == Task::Regression) {
        r.point = std::stod(f[3]);
        r.epistemic = std::stod(f[4]);
        r.aleatoric = std::stod(f[5]);
        r.total = std::stod(f[6]);
      } else {
        r.point = std::stod(f[3]);      // p_positive
        r.total = std::stod(f[4]);      // H
        r.epistemic = std::stod(f[5]);  // I
        r.aleatoric = std::stod(f[6]);  // H - I
      }
    } catch (const std::exception&) {
      throw DataError("predictions line " + std::to_string(line_no) + ": bad number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- sweep ----

namespace {

std::vector<PrefixSample> subsample_prefix_cases(const std::vector<PrefixSample>& all,
                                                 double fraction, std::uint64_t seed) {
  if (fraction >= 1.0) return all;
  std::vector<std::string> case_ids;
  std::map<std::string, int> seen;
  for (const auto& p : all)
    if (seen.emplace(p.case_id, 1).second) case_ids.push_back(p.case_id);
  const int n = static_cast<int>(case_ids.size());
  int k = static_cast<int>(std::ceil(fraction * n));
  if (k < 1) k = 1;
  if (k > n) k = n;

  RngStream rng(seed, "subsample-cases");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < k; ++i) {
    const int j = i + rng.uniform_int(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::set<std::string> keep;
  for (int i : idx) keep.insert(case_ids[i]);

  std::vector<PrefixSample> out;
  for (const auto& p : all)
    if (keep.count(p.case_id)) out.push_back(p);
  return out;
}

}  // namespace

SweepResult run_sweep(const SweepPlan& plan) {
  if (plan.train.empty() || plan.test.empty())
    throw DataError("sweep needs nonempty train and test prefixes");
  if (plan.repeats < 1) throw ConfigError("sweep repeats must be positive");
  if (plan.fractions.empty() || plan.techniques.empty())
    throw ConfigError("sweep needs at least one fraction and one technique");
  for (double f : plan.fractions)
    if (f <= 0.0 || f > 1.0) throw ConfigError("sweep fractions must lie in (0,1]");

  const TrainData test_data = TrainData::from_prefixes(plan.test, plan.max_len, plan.task);
  std::vector<double> test_y;
  std::vector<int> test_labels;
  if (plan.task == Task::Regression) {
    test_y = test_data.y_reg;
  } else {
    test_labels = test_data.y_cls;
  }

  const int nf = static_cast<int>(plan.fractions.size());
  const int nt = static_cast<int>(plan.techniques.size());
  const int total = nf * nt * plan.repeats;
  SweepResult result;
  result.task = plan.task;
  result.cells.resize(total);

  RngStream root(plan.seed, "sweep");
  auto run_cell = [&](int index) {
    const int fi = index / (nt * plan.repeats);
    const int ti = (index / plan.repeats) % nt;
    const int r = index % plan.repeats;
    SweepCell& cell = result.cells[index];
    cell.fraction = plan.fractions[fi];
    cell.technique = plan.techniques[ti];
    cell.repeat = r;
    // Data selection and training seed depend only on (fraction, repeat), so
    // techniques are compared pairwise on identical draws.
    RngStream lineage = root.substream("fraction", static_cast<uint64_t>(fi))
                            .substream("repeat", static_cast<uint64_t>(r));
    const std::uint64_t subsample_seed = lineage.next_u64();
    const std::uint64_t train_seed = lineage.next_u64();
    const std::uint64_t infer_seed = lineage.next_u64();
    cell.seed = train_seed;
    try {
      auto train_prefixes =
          subsample_prefix_cases(plan.train, cell.fraction, subsample_seed);
      if (train_prefixes.empty()) throw DataError("subsample produced no prefixes");
      TrainData train_data =
          TrainData::from_prefixes(train_prefixes, plan.max_len, plan.task);

      const TechniqueSpec spec =
          technique_spec(cell.technique, plan.task, plan.dropout_p, plan.l2_lambda);
      ModelConfig mcfg = plan.model;
      mcfg.task = plan.task;
      mcfg.vocab_size = plan.vocab_size;
      mcfg.seq_len = plan.max_len;
      mcfg.dropout_p = spec.dropout_p;
      mcfg.l2_lambda = spec.l2_lambda;
      TrainConfig tcfg = plan.train_cfg;
      tcfg.loss = spec.loss;
      tcfg.seed = train_seed;

      TrainResult tr = train_model(mcfg, train_data, tcfg);
      cell.epochs_run = tr.epochs_run;
      cell.seconds_per_epoch = tr.seconds_per_epoch;

      if (plan.task == Task::Regression) {
        auto preds = predict_regression(tr.model, test_data, spec.mc_inference, plan.T,
                                        infer_seed);
        std::vector<double> points(preds.size());
        for (size_t i = 0; i < preds.size(); ++i) points[i] = preds[i].point;
        cell.metric = mae(test_y, points);
        if (plan.with_baseline) {
          TransitionSystem ts = build_ts(train_prefixes);
          std::vector<double> base(plan.test.size());
          for (size_t i = 0; i < plan.test.size(); ++i)
            base[i] = predict_ts(ts, plan.test[i]);
          cell.baseline_mae = mae(test_y, base);
          cell.has_baseline = true;
        }
      } else {
        auto preds = predict_classification(tr.model, test_data, spec.mc_inference,
                                            plan.T, infer_seed);
        std::vector<double> scores(preds.size());
        for (size_t i = 0; i < preds.size(); ++i) scores[i] = preds[i].probs[1];
        cell.metric = auc_roc(test_labels, scores);
      }
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  };

  const int jobs = std::max(1, plan.jobs);
  if (jobs == 1) {
    for (int i = 0; i < total; ++i) run_cell(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < jobs; ++w)
      workers.emplace_back([&]() {
        for (int i = next.fetch_add(1); i < total; i = next.fetch_add(1)) run_cell(i);
      });
    for (auto& t : workers) t.join();
  }
  return result;
}

// ---- command layer ----

std::string resolve_out_dir(const Config& cfg) {
  fs::path p(cfg.get_string("out.dir"));
  const char* root = std::getenv("PPMU_OUT_ROOT");
  if (root && *root && p.is_relative()) p = fs::path(root) / p;
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory '" + p.string() + "'");
  return p.string();
}

void write_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write '" + tmp + "'");
    out << content;
    if (!out) throw DataError("failed while writing '" + tmp + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move '" + tmp + "' into place");
}

void write_manifest(const Config& cfg, const std::string& command,
                    const std::string& out_dir) {
  nlohmann::ordered_json j;
  j["tool"] = "ppmu";
  j["format_version"] = 1;
  j["command"] = command;
  char hex[20];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(cfg.fingerprint()));
  j["config_fingerprint"] = hex;
  nlohmann::ordered_json kv;
  for (const auto& [k, v] : cfg.entries()) kv[k] = v;
  j["config"] = std::move(kv);
  write_file(out_dir + "/manifest.json", j.dump(2) + "\n");
}

namespace {

struct PreparedMeta {
  int max_len = 10;
  int vocab_size = 2;
  Task task = Task::Regression;
  double elapsed_mean = 0.0;
  double elapsed_sd = 1.0;
};

PreparedMeta read_meta(const std::string& dir) {
  const std::string path = dir + "/meta.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "' (run prepare first)");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path + "' is not valid JSON: " + e.what());
  }
  PreparedMeta meta;
  meta.max_len = j.at("max_len").get<int>();
  meta.vocab_size = j.at("vocab_size").get<int>();
  meta.task = task_from_string(j.at("task").get<std::string>());
  meta.elapsed_mean = j.at("elapsed_mean").get<double>();
  meta.elapsed_sd = j.at("elapsed_sd").get<double>();
  return meta;
}

ModelConfig model_config_from(const Config& cfg, Task task, int vocab_size,
                              int max_len) {
  ModelConfig mc;
  mc.arch = arch_from_string(cfg.get_string("model.arch", "cnn"));
  mc.task = task;
  mc.vocab_size = vocab_size;
  mc.seq_len = max_len;
  mc.embed_dim = cfg.get_int("model.embed_dim", 8);
  auto conv = cfg.get_int_list("model.conv_channels", {16, 16});
  if (conv.size() != 2) throw ConfigError("model.conv_channels needs two entries");
  mc.conv_channels = {conv[0], conv[1]};
  mc.kernel_width = cfg.get_int("model.kernel_width", 3);
  auto lstm = cfg.get_int_list("model.lstm_hidden", {16, 16});
  if (lstm.size() != 2) throw ConfigError("model.lstm_hidden needs two entries");
  mc.lstm_hidden = {lstm[0], lstm[1]};
  auto dense = cfg.get_int_list("model.dense_widths", {32, 16});
  if (dense.size() == 2) dense.push_back(0);
  if (dense.size() != 3) throw ConfigError("model.dense_widths needs two or three entries");
  mc.dense_widths = {dense[0], dense[1], dense[2]};
  mc.input_dim = cfg.get_int("model.input_dim", 1);
  mc.n_classes = cfg.get_int("model.n_classes", 2);
  mc.dropout_p = cfg.get_double("model.dropout_p", 0.1);
  mc.l2_lambda = cfg.get_double("model.l2_lambda", 0.0);
  return mc;
}

TrainConfig train_config_from(const Config& cfg, Task task) {
  TrainConfig tc;
  const std::string def = task == Task::Regression ? "hetero" : "attce";
  const std::string loss = cfg.get_string("train.loss", def);
  if (loss == "mse") tc.loss = LossKind::MSE;
  else if (loss == "hetero") tc.loss = LossKind::HeteroRegression;
  else if (loss == "ce") tc.loss = LossKind::CrossEntropy;
  else if (loss == "attce") tc.loss = LossKind::AttenuatedCE;
  else throw ConfigError("unknown loss '" + loss + "' (want mse, hetero, ce or attce)");
  tc.epochs = cfg.get_int("train.epochs", 100);
  tc.batch_size = cfg.get_int("train.batch_size", 64);
  tc.lr = cfg.get_double("train.lr", 1e-3);
  tc.adam_weight_decay = cfg.get_double("train.weight_decay", 0.0);
  if (!cfg.has("train.seed")) throw ConfigError("train.seed is required");
  tc.seed = cfg.get_u64("train.seed", 1);
  tc.plateau_stop = cfg.get_bool("train.plateau_stop", true);
  tc.plateau_window = cfg.get_int("train.plateau_window", 10);
  tc.plateau_tol = cfg.get_double("train.plateau_tol", 1e-4);
  tc.t_softmax = cfg.get_int("train.t_softmax", 20);
  tc.shuffle = cfg.get_bool("train.shuffle", true);
  return tc;
}

std::string timing_json(std::initializer_list<std::pair<std::string, double>> fields) {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : fields) j[k] = v;
  return j.dump(2) + "\n";
}

double parse_double_or(const std::string& text, const std::string& what) {
  try {
    size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": cannot parse '" + text + "' as a number");
  }
}

}  // namespace

void cmd_prepare(const Config& cfg) {
  const std::string out_dir = resolve_out_dir(cfg);
  const std::string input = cfg.get_string("data.input");
  CsvSchema schema;
  schema.case_id = cfg.get_string("data.col.case_id", schema.case_id);
  schema.activity = cfg.get_string("data.col.activity", schema.activity);
  schema.timestamp = cfg.get_string("data.col.timestamp", schema.timestamp);
  schema.outcome = cfg.get_string("data.col.outcome", schema.outcome);
  const double test_fraction = cfg.get_double("data.test_fraction", 0.2);
  const bool debias = cfg.get_bool("data.debias", true);
  const int max_len = cfg.get_int("data.max_len", 10);
  const int max_bad = cfg.get_int("data.max_bad_rows", 0);
  const Task task = task_from_string(cfg.get_string("task", "regression"));

  EventLog log = parse_csv_file(input, schema, max_bad);
  SplitResult split = temporal_split(log, test_fraction, debias);
  auto [train, test] = engineer_features(split.train, split.test);
  auto train_prefixes = extract_prefixes(train, max_len, task == Task::Classification);
  auto test_prefixes = extract_prefixes(test, max_len, task == Task::Classification);

  std::ostringstream train_csv, test_csv;
  write_prefix_csv(train_prefixes, max_len, train_csv);
  write_prefix_csv(test_prefixes, max_len, test_csv);

  nlohmann::ordered_json stats;
  stats["full"] = nlohmann::ordered_json::parse(stats_to_json(dataset_stats(log)));
  stats["train"] = nlohmann::ordered_json::parse(stats_to_json(dataset_stats(train)));
  stats["test"] = nlohmann::ordered_json::parse(stats_to_json(dataset_stats(test)));
  stats["removed_overlap"] = split.removed_overlap;
  stats["removed_debias"] = split.removed_debias;

  nlohmann::ordered_json meta;
  meta["max_len"] = max_len;
  meta["vocab_size"] = 2 + static_cast<int>(train.activity_vocab.size());
  meta["task"] = to_string(task);
  meta["elapsed_mean"] = train.elapsed_mean;
  meta["elapsed_sd"] = train.elapsed_sd;
  nlohmann::ordered_json vocab;
  for (const auto& [label, id] : train.activity_vocab) vocab[label] = id;
  meta["vocab"] = std::move(vocab);
  meta["n_train_prefixes"] = train_prefixes.size();
  meta["n_test_prefixes"] = test_prefixes.size();

  write_file(out_dir + "/train_prefixes.csv", train_csv.str());
  write_file(out_dir + "/test_prefixes.csv", test_csv.str());
  write_file(out_dir + "/stats.json", stats.dump(2) + "\n");
  write_file(out_dir + "/meta.json", meta.dump(2) + "\n");
  write_manifest(cfg, "prepare", out_dir);
}

void cmd_synth(const Config& cfg) {
  const std::string out_dir = resolve_out_dir(cfg);
  const std::string kind = cfg.get_string("synth.kind", "process");
  if (!cfg.has("synth.seed")) throw ConfigError("synth.seed is required");

  if (kind == "process") {
    SynthProcessSpec spec = default_process_spec();
    spec.n_cases = cfg.get_int("synth.n_cases", 100);
    spec.seed = cfg.get_u64("synth.seed", 1);
    if (cfg.has("synth.outcome_threshold"))
      spec.outcome_threshold_days = cfg.get_double("synth.outcome_threshold");
    spec.arrival_spacing_days =
        cfg.get_double("synth.arrival_spacing", spec.arrival_spacing_days);
    spec.max_events = cfg.get_int("synth.max_events", spec.max_events);
    EventLog log = gen_process_log(spec);
    std::ostringstream events;
    write_event_csv(log, events);
    write_file(out_dir + "/events.csv", events.str());
    write_file(out_dir + "/stats.json", stats_to_json(dataset_stats(log)));
  } else if (kind == "1d") {
    SynthSpec spec;
    spec.n_samples = cfg.get_int("synth.n_samples", 2000);
    spec.n_test = cfg.get_int("synth.n_test", 201);
    spec.seed = cfg.get_u64("synth.seed", 1);
    if (cfg.has("synth.gaps")) {
      spec.gap_regions.clear();
      for (const auto& tok : split_list(cfg.get_string("synth.gaps"), ';')) {
        auto parts = split_list(tok, ':');
        if (parts.size() != 2) throw ConfigError("synth.gaps wants 'a:b;c:d'");
        spec.gap_regions.emplace_back(parse_double_or(parts[0], "synth.gaps"),
                                      parse_double_or(parts[1], "synth.gaps"));
      }
    }
    if (cfg.has("synth.noise")) {
      spec.noise.clear();
      for (const auto& tok : split_list(cfg.get_string("synth.noise"), ';')) {
        auto parts = split_list(tok, ':');
        if (parts.size() != 4) throw ConfigError("synth.noise wants 'x0:x1:a:b;...'");
        spec.noise.push_back(NoiseSegment{parse_double_or(parts[0], "synth.noise"),
                                          parse_double_or(parts[1], "synth.noise"),
                                          parse_double_or(parts[2], "synth.noise"),
                                          parse_double_or(parts[3], "synth.noise")});
      }
    }
    Synth1D data = gen_1d_regression(spec);
    std::ostringstream train_csv, test_csv;
    train_csv << "x,y\n";
    for (size_t i = 0; i < data.train_x.size(); ++i)
      train_csv << format_double(data.train_x[i]) << "," << format_double(data.train_y[i])
                << "\n";
    test_csv << "x,y\n";
    for (size_t i = 0; i < data.test_x.size(); ++i)
      test_csv << format_double(data.test_x[i]) << "," << format_double(data.test_y[i])
               << "\n";
    write_file(out_dir + "/train.csv", train_csv.str());
    write_file(out_dir + "/test.csv", test_csv.str());
    write_file(out_dir + "/truth.json", synth1d_truth_json(spec, data));
  } else {
    throw ConfigError("synth.kind must be 'process' or '1d'");
  }
  write_manifest(cfg, "synth", out_dir);
}

void cmd_train(const Config& cfg) {
  const std::string out_dir = resolve_out_dir(cfg);
  const std::string dir = cfg.get_string("data.dir");
  const PreparedMeta meta = read_meta(dir);
  int max_len = 0;
  auto samples = read_prefix_csv_file(dir + "/train_prefixes.csv", &max_len);
  if (max_len != meta.max_len)
    throw DataError("train_prefixes.csv max_len disagrees with meta.json");

  const ModelConfig mc = model_config_from(cfg, meta.task, meta.vocab_size, meta.max_len);
  const TrainConfig tc = train_config_from(cfg, meta.task);
  const TrainData data = TrainData::from_prefixes(std::move(samples), max_len, meta.task);

  TrainResult result = train_model(mc, data, tc);

  std::ostringstream log_csv;
  log_csv << "epoch,loss\n";
  for (size_t i = 0; i < result.epoch_losses.size(); ++i)
    log_csv << (i + 1) << "," << format_double(result.epoch_losses[i]) << "\n";

  result.model.save(out_dir + "/checkpoint.json.tmp");
  std::error_code ec;
  fs::rename(out_dir + "/checkpoint.json.tmp", out_dir + "/checkpoint.json", ec);
  if (ec) throw DataError("cannot move checkpoint into place");
  write_file(out_dir + "/train_log.csv", log_csv.str());
  write_file(out_dir + "/timing.json",
             timing_json({{"train_seconds", result.train_seconds},
                          {"seconds_per_epoch", result.seconds_per_epoch},
                          {"epochs_run", static_cast<double>(result.epochs_run)}}));
  write_manifest(cfg, "train", out_dir);
}

void cmd_predict(const Config& cfg) {
  const std::string out_dir = resolve_out_dir(cfg);
  const Model model = Model::load(cfg.get_string("checkpoint"));
  const std::string test_path =
      cfg.get_string("data.test", cfg.get_string("data.dir") + "/test_prefixes.csv");
  int max_len = 0;
  auto samples = read_prefix_csv_file(test_path, &max_len);
  const Task task = model.config().task;
  const TrainData data = TrainData::from_prefixes(samples, max_len, task);

  const std::string mode = cfg.get_string("predict.mode", "mc");
  const bool mc = mode == "mc";
  if (!mc && mode != "deterministic")
    throw ConfigError("predict.mode must be 'mc' or 'deterministic'");
  const int T = cfg.get_int("predict.T", 50);
  const int n_softmax = cfg.get_int("predict.n_softmax", 20);
  if (mc && !cfg.has("predict.seed"))
    throw ConfigError("predict.seed is required in mc mode");
  const std::uint64_t seed = cfg.get_u64("predict.seed", 0);

  const auto t0 = std::chrono::steady_clock::now();
  if (task == Task::Regression) {
    auto preds = predict_regression(model, data, mc, T, seed);
    write_predictions_regression(samples, preds, out_dir + "/predictions.csv");
  } else {
    auto preds = predict_classification(model, data, mc, T, seed, n_softmax);
    write_predictions_classification(samples, preds, out_dir + "/predictions.csv");
  }
  const auto t1 = std::chrono::steady_clock::now();
  write_file(out_dir + "/timing.json",
             timing_json({{"predict_seconds",
                           std::chrono::duration<double>(t1 - t0).count()}}));
  write_manifest(cfg, "predict", out_dir);
}

void cmd_evaluate(const Config& cfg) {
  const std::string out_dir = resolve_out_dir(cfg);
  Task task;
  auto rows = read_predictions_csv(cfg.get_string("predictions"), &task);
  if (rows.empty()) throw DataError("predictions file has no rows");
  if (cfg.has("task") && task_from_string(cfg.get_string("task")) != task)
    throw ConfigError("configured task does not match the predictions file");

  const std::string dir = cfg.get_string("data.dir");
  int max_len = 0;
  auto test_prefixes = read_prefix_csv_file(dir + "/test_prefixes.csv", &max_len);
  if (test_prefixes.size() != rows.size())
    throw DataError("predictions and test prefixes disagree in length");
  for (size_t i = 0; i < rows.size(); ++i)
    if (rows[i].case_id != test_prefixes[i].case_id ||
        rows[i].prefix_len != test_prefixes[i].prefix_len)
      throw DataError("predictions row " + std::to_string(i + 2) +
                      " does not line up with test_prefixes.csv");

  std::vector<RetentionRecord> records(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    records[i].uncertainty = rows[i].total;
    if (task == Task::Regression) {
      records[i].error = std::abs(rows[i].y_true - rows[i].point);
    } else {
      records[i].score = rows[i].point;
      records[i].label = static_cast<int>(rows[i].y_true);
    }
  }
  const RetentionMetric metric =
      task == Task::Regression ? RetentionMetric::MAE : RetentionMetric::AUC;
  auto thresholds =
      cfg.get_double_list("eval.thresholds", default_retention_thresholds());
  RetentionCurve curve = retention_curve(records, metric, thresholds);

  std::vector<std::optional<double>> fractions;
  for (const auto& tok : cfg.get_string_list(
           "eval.bucket_fractions", {"0.05", "0.10", "0.25", "0.50", "1.0", "all"})) {
    if (tok == "all") fractions.push_back(std::nullopt);
    else fractions.push_back(parse_double_or(tok, "eval.bucket_fractions"));
  }
  EarlyBucketReport buckets = early_buckets(test_prefixes, records, metric, fractions);

  nlohmann::ordered_json summary;
  summary["task"] = to_string(task);
  summary["n"] = rows.size();
  if (task == Task::Regression) {
    std::vector<double> y(rows.size()), point(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      y[i] = rows[i].y_true;
      point[i] = rows[i].point;
    }
    summary["mae_days"] = mae(y, point);
  } else {
    std::vector<int> labels(rows.size());
    std::vector<double> scores(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      labels[i] = static_cast<int>(rows[i].y_true);
      scores[i] = rows[i].point;
    }
    summary["auc_roc"] = auc_roc(labels, scores);
  }

  std::optional<CalibrationReport> calibration;
  if (task == Task::Regression) {
    std::vector<CalRecord> cal(rows.size());
    for (size_t i = 0; i < rows.size(); ++i)
      cal[i] = CalRecord{rows[i].y_true, rows[i].point, rows[i].total};
    calibration = calibrate_intervals(
        cal, cfg.get_int("eval.window", 5000), cfg.get_int("eval.stride", 1000),
        cfg.get_double_list("eval.levels", default_confidence_levels()));
  }

  std::optional<std::string> baseline_json;
  if (task == Task::Regression && cfg.get_bool("baseline.enabled", true)) {
    auto train_prefixes = read_prefix_csv_file(dir + "/train_prefixes.csv");
    TransitionSystem ts =
        build_ts(train_prefixes,
                 ts_abstraction_from_string(cfg.get_string("baseline.abstraction", "last-k")),
                 cfg.get_int("baseline.k", 3));
    std::vector<double> y(rows.size()), base(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      y[i] = rows[i].y_true;
      base[i] = predict_ts(ts, test_prefixes[i]);
    }
    summary["baseline_mae_days"] = mae(y, base);
    summary["baseline_k"] = ts.k;
    baseline_json = ts_to_json(ts);
  }

  write_file(out_dir + "/retention.json", retention_to_json(curve));
  write_retention_csv(curve, out_dir + "/retention.csv");
  write_file(out_dir + "/buckets.json", buckets_to_json(buckets));
  write_buckets_csv(buckets, out_dir + "/buckets.csv");
  if (calibration) {
    write_file(out_dir + "/calibration.json", calibration_to_json(*calibration));
    write_calibration_csv(*calibration, out_dir + "/calibration.csv");
  }
  if (baseline_json) write_file(out_dir + "/baseline.json", *baseline_json);
  write_file(out_dir + "/summary.json", summary.dump(2) + "\n");
  write_manifest(cfg, "evaluate", out_dir);
}

void cmd_sweep(const Config& cfg) {
  const std::string out_dir = resolve_out_dir(cfg);
  const std::string dir = cfg.get_string("data.dir");
  const PreparedMeta meta = read_meta(dir);
  int max_len = 0;
  SweepPlan plan;
  plan.train = read_prefix_csv_file(dir + "/train_prefixes.csv", &max_len);
  plan.test = read_prefix_csv_file(dir + "/test_prefixes.csv");
  plan.max_len = max_len;
  plan.vocab_size = meta.vocab_size;
  plan.task = meta.task;
  plan.model = model_config_from(cfg, meta.task, meta.vocab_size, meta.max_len);
  if (!cfg.has("sweep.seed")) throw ConfigError("sweep.seed is required");
  Config train_keys = cfg;
  train_keys.set("train.seed", "0");  // per-cell seeds come from the sweep lineage
  plan.train_cfg = train_config_from(train_keys, meta.task);
  plan.fractions = cfg.get_double_list("sweep.fractions", {1.0});
  plan.techniques.clear();
  for (const auto& t : cfg.get_string_list("sweep.techniques",
                                           {"plain", "hetero", "dropout", "bayes"}))
    plan.techniques.push_back(technique_from_string(t));
  plan.repeats = cfg.get_int("sweep.repeats", 5);
  plan.seed = cfg.get_u64("sweep.seed", 1);
  plan.dropout_p = cfg.get_double("sweep.dropout_p", 0.05);
  plan.l2_lambda = cfg.get_double("sweep.l2_lambda", 1e-4);
  plan.T = cfg.get_int("predict.T", 50);
  plan.jobs = cfg.get_int("sweep.jobs", 1);
  plan.with_baseline =
      meta.task == Task::Regression && cfg.get_bool("baseline.enabled", true);

  SweepResult result = run_sweep(plan);

  std::ostringstream cells;
  cells << "fraction,technique,repeat,seed,status,metric,baseline_mae,epochs_run,error\n";
  for (const auto& c : result.cells) {
    cells << format_double(c.fraction) << "," << to_string(c.technique) << ","
          << c.repeat << "," << c.seed << "," << (c.ok ? "ok" : "failed") << ",";
    if (c.ok) cells << format_double(c.metric);
    cells << ",";
    if (c.has_baseline) cells << format_double(c.baseline_mae);
    cells << "," << c.epochs_run << ",";
    if (!c.ok) {
      std::string msg = c.error;
      for (auto& ch : msg)
        if (ch == ',' || ch == '\n') ch = ';';
      cells << msg;
    }
    cells << "\n";
  }

  std::ostringstream summary;
  summary << "fraction,technique,n_ok,mean_metric,mean_baseline_mae\n";
  for (double f : plan.fractions)
    for (Technique t : plan.techniques) {
      std::vector<double> metrics, baselines;
      for (const auto& c : result.cells)
        if (c.ok && c.fraction == f && c.technique == t) {
          metrics.push_back(c.metric);
          if (c.has_baseline) baselines.push_back(c.baseline_mae);
        }
      summary << format_double(f) << "," << to_string(t) << "," << metrics.size() << ",";
      if (!metrics.empty())
        summary << format_double(compensated_sum(metrics) / metrics.size());
      summary << ",";
      if (!baselines.empty())
        summary << format_double(compensated_sum(baselines) / baselines.size());
      summary << "\n";
    }

  // Wall-clock per-epoch costs per technique; kept out of the deterministic
  // outputs on purpose.
  nlohmann::ordered_json timing;
  for (Technique t : plan.techniques) {
    std::vector<double> secs;
    for (const auto& c : result.cells)
      if (c.ok && c.technique == t) secs.push_back(c.seconds_per_epoch);
    if (!secs.empty())
      timing[to_string(t) + "_seconds_per_epoch"] =
          compensated_sum(secs) / secs.size();
  }
  if (timing.contains("plain_seconds_per_epoch") &&
      timing.contains("bayes_seconds_per_epoch")) {
    const double p = timing["plain_seconds_per_epoch"].get<double>();
    if (p > 0.0)
      timing["bayes_over_plain_epoch_ratio"] =
          timing["bayes_seconds_per_epoch"].get<double>() / p;
  }

  write_file(out_dir + "/sweep.csv", cells.str());
  write_file(out_dir + "/sweep_summary.csv", summary.str());
  write_file(out_dir + "/timing.json", timing.dump(2) + "\n");
  write_manifest(cfg, "sweep", out_dir);
}

}  // namespace ppmu
