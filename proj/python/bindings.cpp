#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <vector>

#include "ppmu/baseline.hpp"
#include "ppmu/bayes.hpp"
#include "ppmu/errors.hpp"
#include "ppmu/eval.hpp"
#include "ppmu/eventlog.hpp"
#include "ppmu/losses.hpp"
#include "ppmu/nets.hpp"
#include "ppmu/pipeline.hpp"
#include "ppmu/synthgen.hpp"
#include "ppmu/tensor.hpp"

namespace py = pybind11;
using namespace ppmu;

namespace {

LossKind loss_from_name(const std::string& s) {
  if (s == "mse") return LossKind::MSE;
  if (s == "hetero") return LossKind::HeteroRegression;
  if (s == "ce") return LossKind::CrossEntropy;
  if (s == "attce") return LossKind::AttenuatedCE;
  throw ConfigError("unknown loss '" + s + "' (want mse, hetero, ce or attce)");
}

std::array<int, 3> widths_from(const std::vector<int>& hidden) {
  if (hidden.size() == 2) return {hidden[0], hidden[1], 0};
  if (hidden.size() == 3) return {hidden[0], hidden[1], hidden[2]};
  throw ConfigError("hidden wants 2 or 3 entries");
}

struct PyModel {
  std::unique_ptr<Model> model;
  std::vector<double> epoch_losses;
  int epochs_run = 0;
  double seconds_per_epoch = 0.0;
};

PyModel wrap(TrainResult&& tr) {
  PyModel m;
  m.model = std::make_unique<Model>(std::move(tr.model));
  m.epoch_losses = std::move(tr.epoch_losses);
  m.epochs_run = tr.epochs_run;
  m.seconds_per_epoch = tr.seconds_per_epoch;
  return m;
}

TrainConfig make_train_config(const std::string& loss, int epochs, int batch_size,
                              double lr, std::uint64_t seed, bool plateau_stop,
                              int t_softmax) {
  TrainConfig tc;
  tc.loss = loss_from_name(loss);
  tc.epochs = epochs;
  tc.batch_size = batch_size;
  tc.lr = lr;
  tc.seed = seed;
  tc.plateau_stop = plateau_stop;
  tc.t_softmax = t_softmax;
  return tc;
}

PyModel train_xy_py(const std::vector<double>& x, const std::vector<double>& y,
                    const std::string& loss, int epochs, int batch_size, double lr,
                    std::uint64_t seed, double dropout_p, double l2_lambda,
                    const std::vector<int>& hidden, bool plateau_stop, int input_dim) {
  ModelConfig mc;
  mc.arch = Arch::Dense;
  mc.task = Task::Regression;
  mc.input_dim = input_dim;
  mc.dense_widths = widths_from(hidden);
  mc.dropout_p = dropout_p;
  mc.l2_lambda = l2_lambda;
  TrainData data = TrainData::from_xy(x, y, input_dim);
  return wrap(train_model(mc, data, make_train_config(loss, epochs, batch_size, lr,
                                                      seed, plateau_stop, 20)));
}

int infer_vocab(const std::vector<PrefixSample>& samples) {
  int top = 2;
  for (const auto& p : samples)
    for (int id : p.activity_ids) top = std::max(top, id);
  return top + 1;
}

PyModel train_prefixes_py(const std::string& csv_path, const std::string& task_name,
                          const std::string& loss, int epochs, int batch_size,
                          double lr, std::uint64_t seed, double dropout_p,
                          double l2_lambda, int vocab_size, bool plateau_stop,
                          int t_softmax) {
  int max_len = 0;
  auto samples = read_prefix_csv_file(csv_path, &max_len);
  const Task task = task_from_string(task_name);
  ModelConfig mc;
  mc.task = task;
  mc.vocab_size = vocab_size > 0 ? vocab_size : infer_vocab(samples);
  mc.seq_len = max_len;
  mc.dropout_p = dropout_p;
  mc.l2_lambda = l2_lambda;
  TrainData data = TrainData::from_prefixes(samples, max_len, task);
  return wrap(train_model(mc, data, make_train_config(loss, epochs, batch_size, lr,
                                                      seed, plateau_stop, t_softmax)));
}

py::dict predict_xy_py(const PyModel& m, const std::vector<double>& x, bool mc,
                       int T, std::uint64_t seed) {
  if (!m.model) throw DataError("model has been moved out");
  const int input_dim = m.model->config().input_dim;
  const std::vector<double> dummy(x.size() / input_dim, 0.0);
  TrainData data = TrainData::from_xy(x, dummy, input_dim);
  auto preds = predict_regression(*m.model, data, mc, T, seed);
  std::vector<double> point, epistemic, aleatoric, total;
  for (const auto& p : preds) {
    point.push_back(p.point);
    epistemic.push_back(p.epistemic);
    aleatoric.push_back(p.aleatoric);
    total.push_back(p.total);
  }
  py::dict out;
  out["point"] = point;
  out["epistemic"] = epistemic;
  out["aleatoric"] = aleatoric;
  out["total"] = total;
  return out;
}

py::dict predict_prefixes_py(const PyModel& m, const std::string& csv_path, bool mc,
                             int T, std::uint64_t seed, int n_softmax) {
  if (!m.model) throw DataError("model has been moved out");
  int max_len = 0;
  auto samples = read_prefix_csv_file(csv_path, &max_len);
  const Task task = m.model->config().task;
  TrainData data = TrainData::from_prefixes(samples, max_len, task);
  py::dict out;
  if (task == Task::Regression) {
    auto preds = predict_regression(*m.model, data, mc, T, seed);
    std::vector<double> point, epistemic, aleatoric, total;
    for (const auto& p : preds) {
      point.push_back(p.point);
      epistemic.push_back(p.epistemic);
      aleatoric.push_back(p.aleatoric);
      total.push_back(p.total);
    }
    out["point"] = point;
    out["epistemic"] = epistemic;
    out["aleatoric"] = aleatoric;
    out["total"] = total;
    out["y_true"] = data.y_reg;
  } else {
    auto preds = predict_classification(*m.model, data, mc, T, seed, n_softmax);
    std::vector<double> p1, entropy, mutual_info, aleatoric;
    for (const auto& p : preds) {
      p1.push_back(p.probs[1]);
      entropy.push_back(p.entropy_H);
      mutual_info.push_back(p.mutual_info_I);
      aleatoric.push_back(p.aleatoric_HmI);
    }
    out["p1"] = p1;
    out["entropy"] = entropy;
    out["mutual_info"] = mutual_info;
    out["aleatoric"] = aleatoric;
    out["y_true"] = data.y_cls;
  }
  return out;
}

py::dict classification_uncertainty_py(const std::vector<std::vector<double>>& per_pass) {
  const ClassPrediction c = classification_uncertainty(per_pass);
  py::dict out;
  out["probs"] = c.probs;
  out["entropy"] = c.entropy_H;
  out["mutual_info"] = c.mutual_info_I;
  out["aleatoric"] = c.aleatoric_HmI;
  return out;
}

py::dict synth_1d_py(int n_samples, int n_test, std::uint64_t seed,
                     const std::vector<std::pair<double, double>>& gaps,
                     const std::vector<std::tuple<double, double, double, double>>& noise) {
  SynthSpec sp;
  sp.n_samples = n_samples;
  sp.n_test = n_test;
  sp.seed = seed;
  for (const auto& [a, b] : gaps) sp.gap_regions.push_back({a, b});
  if (!noise.empty()) {
    sp.noise.clear();
    for (const auto& [x0, x1, a, b] : noise) sp.noise.push_back({x0, x1, a, b});
  }
  Synth1D d = gen_1d_regression(sp);
  py::dict out;
  out["train_x"] = d.train_x;
  out["train_y"] = d.train_y;
  out["test_x"] = d.test_x;
  out["test_y"] = d.test_y;
  out["test_f"] = d.test_f;
  out["test_sigma"] = d.test_sigma;
  return out;
}

py::object opt_to_py(const std::optional<double>& v) {
  return v ? py::cast(*v) : py::none();
}

py::dict retention_mae_py(const std::vector<double>& uncertainty,
                          const std::vector<double>& errors,
                          const std::vector<double>& thresholds) {
  if (uncertainty.size() != errors.size())
    throw DataError("uncertainty and errors must have the same length");
  std::vector<RetentionRecord> records(uncertainty.size());
  for (size_t i = 0; i < records.size(); ++i) {
    records[i].uncertainty = uncertainty[i];
    records[i].error = errors[i];
  }
  RetentionCurve c = retention_curve(records, RetentionMetric::MAE, thresholds);
  py::list metric;
  for (const auto& v : c.metric_at) metric.append(opt_to_py(v));
  py::dict out;
  out["thresholds"] = c.thresholds;
  out["metric"] = metric;
  out["n_retained"] = c.n_retained;
  return out;
}

py::dict retention_auc_py(const std::vector<double>& uncertainty,
                          const std::vector<double>& scores,
                          const std::vector<int>& labels,
                          const std::vector<double>& thresholds) {
  if (uncertainty.size() != scores.size() || scores.size() != labels.size())
    throw DataError("uncertainty, scores and labels must have the same length");
  std::vector<RetentionRecord> records(uncertainty.size());
  for (size_t i = 0; i < records.size(); ++i) {
    records[i].uncertainty = uncertainty[i];
    records[i].score = scores[i];
    records[i].label = labels[i];
  }
  RetentionCurve c = retention_curve(records, RetentionMetric::AUC, thresholds);
  py::list metric;
  for (const auto& v : c.metric_at) metric.append(opt_to_py(v));
  py::dict out;
  out["thresholds"] = c.thresholds;
  out["metric"] = metric;
  out["n_retained"] = c.n_retained;
  return out;
}

py::list calibrate_py(const std::vector<double>& y, const std::vector<double>& point,
                      const std::vector<double>& total, int window, int stride,
                      const std::vector<double>& levels) {
  if (y.size() != point.size() || point.size() != total.size())
    throw DataError("y, point and total must have the same length");
  std::vector<CalRecord> records(y.size());
  for (size_t i = 0; i < records.size(); ++i)
    records[i] = CalRecord{y[i], point[i], total[i]};
  CalibrationReport r = calibrate_intervals(records, window, stride, levels);
  py::list out;
  for (const auto& cp : r.checkpoints) {
    py::dict d;
    d["at"] = cp.at;
    d["critical_values"] = cp.critical_values;
    py::list cov;
    for (const auto& v : cp.coverage) cov.append(opt_to_py(v));
    d["coverage"] = cov;
    d["n_eval"] = cp.n_eval;
    out.append(d);
  }
  return out;
}

py::dict ts_baseline_py(const std::string& train_csv, const std::string& test_csv,
                        const std::string& abstraction, int k) {
  auto train = read_prefix_csv_file(train_csv);
  auto test = read_prefix_csv_file(test_csv);
  TransitionSystem ts = build_ts(train, ts_abstraction_from_string(abstraction), k);
  std::vector<double> y, yhat;
  for (const auto& p : test) {
    y.push_back(p.target_remaining_days);
    yhat.push_back(predict_ts(ts, p));
  }
  py::dict out;
  out["mae"] = mae(y, yhat);
  out["n_states"] = static_cast<int>(ts.states.size());
  out["fallback_mean"] = ts.fallback_mean;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Uncertainty-aware remaining-time and outcome prediction";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_RuntimeError);

  py::class_<RngStream>(m, "RngStream")
      .def(py::init<std::uint64_t, const std::string&>(), py::arg("seed"),
           py::arg("label"))
      .def("uniform", &RngStream::uniform)
      .def("normal", &RngStream::normal)
      .def("uniform_int", &RngStream::uniform_int, py::arg("n"))
      .def("next_u64", &RngStream::next_u64)
      .def("substream",
           py::overload_cast<const std::string&>(&RngStream::substream, py::const_),
           py::arg("label"))
      .def("substream",
           py::overload_cast<const std::string&, std::uint64_t>(&RngStream::substream,
                                                                py::const_),
           py::arg("label"), py::arg("index"));

  py::class_<PyModel>(m, "Model")
      .def_readonly("epoch_losses", &PyModel::epoch_losses)
      .def_readonly("epochs_run", &PyModel::epochs_run)
      .def_readonly("seconds_per_epoch", &PyModel::seconds_per_epoch)
      .def("save", [](const PyModel& m_, const std::string& path) {
        if (!m_.model) throw DataError("model has been moved out");
        m_.model->save(path);
      })
      .def("predict_xy", &predict_xy_py, py::arg("x"), py::arg("mc") = false,
           py::arg("T") = 50, py::arg("seed") = 0)
      .def("predict_prefixes", &predict_prefixes_py, py::arg("csv_path"),
           py::arg("mc") = false, py::arg("T") = 50, py::arg("seed") = 0,
           py::arg("n_softmax") = 20);

  m.def("load_model", [](const std::string& path) {
    PyModel m_;
    m_.model = std::make_unique<Model>(Model::load(path));
    return m_;
  });

  m.def("train_xy", &train_xy_py, py::arg("x"), py::arg("y"),
        py::arg("loss") = "hetero", py::arg("epochs") = 100,
        py::arg("batch_size") = 64, py::arg("lr") = 1e-3, py::arg("seed") = 1,
        py::arg("dropout_p") = 0.1, py::arg("l2_lambda") = 0.0,
        py::arg("hidden") = std::vector<int>{32, 16}, py::arg("plateau_stop") = true,
        py::arg("input_dim") = 1);
  m.def("train_prefixes", &train_prefixes_py, py::arg("csv_path"),
        py::arg("task") = "regression", py::arg("loss") = "hetero",
        py::arg("epochs") = 100, py::arg("batch_size") = 64, py::arg("lr") = 1e-3,
        py::arg("seed") = 1, py::arg("dropout_p") = 0.1, py::arg("l2_lambda") = 0.0,
        py::arg("vocab_size") = 0, py::arg("plateau_stop") = true,
        py::arg("t_softmax") = 20);

  m.def("synth_1d", &synth_1d_py, py::arg("n_samples") = 2000, py::arg("n_test") = 201,
        py::arg("seed") = 1,
        py::arg("gaps") = std::vector<std::pair<double, double>>{},
        py::arg("noise") = std::vector<std::tuple<double, double, double, double>>{});

  m.def("classification_uncertainty", &classification_uncertainty_py,
        py::arg("per_pass"));
  m.def("mae", &mae, py::arg("y_true"), py::arg("y_pred"));
  m.def("auc_roc", &auc_roc, py::arg("y_true"), py::arg("scores"));
  m.def("retention_mae", &retention_mae_py, py::arg("uncertainty"), py::arg("errors"),
        py::arg("thresholds") = default_retention_thresholds());
  m.def("retention_auc", &retention_auc_py, py::arg("uncertainty"), py::arg("scores"),
        py::arg("labels"), py::arg("thresholds") = default_retention_thresholds());
  m.def("calibrate", &calibrate_py, py::arg("y"), py::arg("point"), py::arg("total"),
        py::arg("window") = 5000, py::arg("stride") = 1000,
        py::arg("levels") = default_confidence_levels());
  m.def("ts_baseline", &ts_baseline_py, py::arg("train_csv"), py::arg("test_csv"),
        py::arg("abstraction") = "last-k", py::arg("k") = 3);
}
