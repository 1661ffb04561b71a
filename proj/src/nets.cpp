#include "ppmu/nets.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ppmu/errors.hpp"

namespace ppmu {

Arch arch_from_string(const std::string& s) {
  if (s == "dense") return Arch::Dense;
  if (s == "cnn") return Arch::CNN;
  if (s == "lstm") return Arch::LSTM;
  throw ConfigError("unknown architecture '" + s + "' (want dense, cnn or lstm)");
}

Task task_from_string(const std::string& s) {
  if (s == "regression") return Task::Regression;
  if (s == "classification") return Task::Classification;
  throw ConfigError("unknown task '" + s + "' (want regression or classification)");
}

std::string to_string(Arch a) {
  switch (a) {
    case Arch::Dense: return "dense";
    case Arch::CNN: return "cnn";
    case Arch::LSTM: return "lstm";
  }
  return "?";
}

std::string to_string(Task t) {
  return t == Task::Regression ? "regression" : "classification";
}

int ModelConfig::head_dim() const {
  return task == Task::Regression ? 1 : n_classes;
}

int ModelConfig::output_cols() const { return head_dim() + 1; }

void ModelConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
  if (seq_len < 1) throw ConfigError("seq_len must be positive");
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2 (pad + oov)");
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw ConfigError("dropout_p must lie in [0, 1)");
  if (l2_lambda < 0.0) throw ConfigError("l2_lambda must be nonnegative");
  if (task == Task::Classification && n_classes < 2)
    throw ConfigError("classification needs at least 2 classes");
  if (dense_widths[0] < 1 || dense_widths[1] < 1)
    throw ConfigError("dense widths must be positive");
  if (dense_widths[2] != 0 && dense_widths[2] != head_dim())
    throw ConfigError("third dense width must be 0 (auto) or match the task head (" +
                      std::to_string(head_dim()) + ")");
  switch (arch) {
    case Arch::Dense:
      if (input_dim < 1) throw ConfigError("input_dim must be positive");
      break;
    case Arch::CNN:
      if (conv_channels[0] < 1 || conv_channels[1] < 1)
        throw ConfigError("conv channel counts must be positive");
      if (kernel_width < 1 || kernel_width % 2 == 0)
        throw ConfigError("kernel_width must be odd and positive");
      break;
    case Arch::LSTM:
      if (lstm_hidden[0] < 1 || lstm_hidden[1] < 1)
        throw ConfigError("lstm hidden sizes must be positive");
      break;
  }
}

Model::Model(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  if (config_.dense_widths[2] == 0) config_.dense_widths[2] = config_.head_dim();
  RngStream rng(init_seed, "model-init");

  int feat = config_.embed_dim + 1;  // embedding plus the elapsed-time channel
  int dense_in = 0;
  switch (config_.arch) {
    case Arch::Dense:
      dense_in = config_.input_dim;
      break;
    case Arch::CNN: {
      add_param("embedding", {config_.vocab_size, config_.embed_dim},
                config_.embed_dim, rng);
      // pad row frozen at zero
      for (int e = 0; e < config_.embed_dim; ++e)
        params_[index_["embedding"]].v()[e] = 0.0;
      const int c1 = config_.conv_channels[0], c2 = config_.conv_channels[1];
      const int w = config_.kernel_width;
      add_param("conv1.kernels", {c1, feat, w}, feat * w, rng);
      add_param("conv1.bias", {c1}, 0, rng);
      add_param("conv2.kernels", {c2, c1, w}, c1 * w, rng);
      add_param("conv2.bias", {c2}, 0, rng);
      dense_in = c2 * config_.seq_len;
      break;
    }
    case Arch::LSTM: {
      add_param("embedding", {config_.vocab_size, config_.embed_dim},
                config_.embed_dim, rng);
      for (int e = 0; e < config_.embed_dim; ++e)
        params_[index_["embedding"]].v()[e] = 0.0;
      int in_dim = feat;
      for (int layer = 0; layer < 2; ++layer) {
        const int h = config_.lstm_hidden[layer];
        const std::string base = "lstm" + std::to_string(layer + 1) + ".";
        for (const char* gate : {"i", "f", "g", "o"}) {
          add_param(base + "w_x_" + gate, {in_dim, h}, in_dim, rng);
          add_param(base + "w_h_" + gate, {h, h}, h, rng);
          add_param(base + "b_" + gate, {h}, 0, rng);
        }
        in_dim = h;
      }
      dense_in = config_.lstm_hidden[1];
      break;
    }
  }

  add_param("dense1.w", {dense_in, config_.dense_widths[0]}, dense_in, rng);
  add_param("dense1.b", {config_.dense_widths[0]}, 0, rng);
  add_param("dense2.w", {config_.dense_widths[0], config_.dense_widths[1]},
            config_.dense_widths[0], rng);
  add_param("dense2.b", {config_.dense_widths[1]}, 0, rng);
  const int hd = config_.dense_widths[1];
  add_param("head.point.w", {hd, config_.head_dim()}, hd, rng);
  add_param("head.point.b", {config_.head_dim()}, 0, rng);
  add_param("head.s.w", {hd, 1}, hd, rng);
  add_param("head.s.b", {1}, 0, rng);
}

Tensor Model::add_param(const std::string& name, const Shape& shape, int fan_in,
                        RngStream& rng) {
  Tensor t = Tensor::zeros(shape);
  if (fan_in > 0) {
    RngStream sub = rng.substream(name);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : t.v()) x = (2.0 * sub.uniform() - 1.0) * bound;
  }
  index_[name] = static_cast<int>(params_.size());
  names_.push_back(name);
  params_.push_back(t);
  return t;
}

Tensor Model::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
  return params_[it->second];
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void Model::attach(Tape& tape) {
  for (auto& p : params_) tape.watch(p);
}

void Model::zero_pad_gradient() {
  auto it = index_.find("embedding");
  if (it == index_.end()) return;
  Tensor& emb = params_[it->second];
  if (!emb.has_grad()) return;
  for (int e = 0; e < config_.embed_dim; ++e) emb.data()->g[e] = 0.0;
}

namespace {

bool dropout_active(const ModelConfig& cfg, ForwardMode mode) {
  return mode != ForwardMode::Deterministic && cfg.dropout_p > 0.0;
}

RngStream& require_rng(RngStream* rng) {
  if (!rng)
    throw ConfigError("Train/StochasticInference with dropout_p > 0 needs an RngStream");
  return *rng;
}

}  // namespace

Tensor Model::maybe_mask(const Tensor& t, ForwardMode mode, RngStream* rng) const {
  if (!dropout_active(config_, mode)) return t;
  return mul(t, dropout_mask(t.shape(), config_.dropout_p, require_rng(rng)));
}

Tensor Model::dense_head(Tensor h, ForwardMode mode, RngStream* rng,
                         bool mask_input) const {
  if (mask_input) h = maybe_mask(h, mode, rng);
  h = relu(affine(h, param("dense1.w"), param("dense1.b")));
  h = relu(affine(maybe_mask(h, mode, rng), param("dense2.w"), param("dense2.b")));
  // The last dense layer is doubled: one copy predicts the point estimate
  // (or logits), the other the log-variance, from the same masked input.
  Tensor hm = maybe_mask(h, mode, rng);
  Tensor point = affine(hm, param("head.point.w"), param("head.point.b"));
  Tensor s = affine(hm, param("head.s.w"), param("head.s.b"));
  return concat_cols(point, s);
}

Tensor Model::embed_inputs(const BatchInput& in) const {
  const int b = in.batch, l = config_.seq_len;
  if (static_cast<int>(in.ids.size()) != b * l)
    throw DimensionError("batch has " + std::to_string(in.ids.size()) + " ids, want " +
                         std::to_string(b * l));
  if (static_cast<int>(in.elapsed.size()) != b * l)
    throw DimensionError("batch has " + std::to_string(in.elapsed.size()) +
                         " elapsed values, want " + std::to_string(b * l));
  Tensor emb = embedding_lookup(param("embedding"), in.ids, b, l);  // (B,L,E)
  Tensor el = reshape(Tensor::from({b, l}, in.elapsed), {b, 1, l});
  return concat_channels(swap12(emb), el);  // (B, E+1, L)
}

Tensor Model::forward_dense(const BatchInput& in, ForwardMode mode,
                            RngStream* rng) const {
  if (static_cast<int>(in.x.size()) != in.batch * config_.input_dim)
    throw DimensionError("dense batch has " + std::to_string(in.x.size()) +
                         " values, want " + std::to_string(in.batch * config_.input_dim));
  Tensor x = Tensor::from({in.batch, config_.input_dim}, in.x);
  // Raw tabular features are left unmasked; dropping a scalar input zeroes
  // the whole observation rather than regularizing it.
  return dense_head(x, mode, rng, false);
}

Tensor Model::forward_cnn(const BatchInput& in, ForwardMode mode, RngStream* rng) const {
  Tensor x = embed_inputs(in);  // (B, E+1, L)
  Tensor k1 = maybe_mask(param("conv1.kernels"), mode, rng);
  x = relu(conv1d(x, k1, param("conv1.bias")));
  Tensor k2 = maybe_mask(param("conv2.kernels"), mode, rng);
  x = relu(conv1d(x, k2, param("conv2.bias")));
  const int flat = config_.conv_channels[1] * config_.seq_len;
  return dense_head(reshape(x, {in.batch, flat}), mode, rng);
}

Tensor Model::forward_lstm(const BatchInput& in, ForwardMode mode, RngStream* rng) const {
  Tensor seq = swap12(embed_inputs(in));  // (B, L, E+1)
  const int b = in.batch, l = config_.seq_len;
  const bool drop = dropout_active(config_, mode);
  const char* gates[4] = {"i", "f", "g", "o"};

  std::vector<Tensor> layer_out;
  Tensor x3 = seq;
  int in_dim = config_.embed_dim + 1;
  for (int layer = 0; layer < 2; ++layer) {
    const int hdim = config_.lstm_hidden[layer];
    const std::string base = "lstm" + std::to_string(layer + 1) + ".";
    // One Bernoulli mask per weight matrix and sample, shared across
    // timesteps.
    Tensor mx[4], mh[4];
    if (drop) {
      RngStream& r = require_rng(rng);
      for (int g = 0; g < 4; ++g)
        mx[g] = dropout_mask({b, in_dim}, config_.dropout_p, r);
      for (int g = 0; g < 4; ++g)
        mh[g] = dropout_mask({b, hdim}, config_.dropout_p, r);
    }
    auto gated = [&](const Tensor& xt, const Tensor& h, int g) {
      Tensor xi = drop ? mul(xt, mx[g]) : xt;
      Tensor hi = drop ? mul(h, mh[g]) : h;
      return add(affine(xi, param(base + "w_x_" + gates[g]), param(base + std::string("b_") + gates[g])),
                 matmul(hi, param(base + "w_h_" + gates[g])));
    };
    Tensor h = Tensor::zeros({b, hdim});
    Tensor c = Tensor::zeros({b, hdim});
    std::vector<Tensor> hs;
    hs.reserve(l);
    for (int t = 0; t < l; ++t) {
      Tensor xt = slice_time(x3, t);  // (B, in_dim)
      Tensor ig = sigmoid(gated(xt, h, 0));
      Tensor fg = sigmoid(gated(xt, h, 1));
      Tensor gg = tanh_t(gated(xt, h, 2));
      Tensor og = sigmoid(gated(xt, h, 3));
      c = add(mul(fg, c), mul(ig, gg));
      h = mul(og, tanh_t(c));
      hs.push_back(h);
    }
    if (layer == 0) {
      // Rebuild a (B, L, H) sequence for the next layer.
      Tensor stacked = hs[0];
      for (int t = 1; t < l; ++t) stacked = concat_cols(stacked, hs[t]);
      x3 = reshape(stacked, {b, l, hdim});
      in_dim = hdim;
    } else {
      layer_out.push_back(h);
    }
  }
  return dense_head(layer_out.back(), mode, rng);
}

Tensor Model::forward(const BatchInput& in, ForwardMode mode, RngStream* rng) const {
  if (in.batch < 1) throw DimensionError("forward needs a nonempty batch");
  switch (config_.arch) {
    case Arch::Dense: return forward_dense(in, mode, rng);
    case Arch::CNN: return forward_cnn(in, mode, rng);
    case Arch::LSTM: return forward_lstm(in, mode, rng);
  }
  throw ConfigError("unreachable architecture");
}

Tensor Model::l2_penalty() const {
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::string& name = names_[i];
    // Biases carry no penalty. The embedding pad row is identically zero,
    // so summing the whole table already excludes it.
    if (name.find(".b") != std::string::npos || name.find(".bias") != std::string::npos)
      continue;
    total = add(total, reduce_sum(square(params_[i])));
  }
  return scale(total, config_.l2_lambda);
}

void Model::save(const std::string& path) const {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  nlohmann::ordered_json cfg;
  cfg["arch"] = to_string(config_.arch);
  cfg["task"] = to_string(config_.task);
  cfg["vocab_size"] = config_.vocab_size;
  cfg["seq_len"] = config_.seq_len;
  cfg["embed_dim"] = config_.embed_dim;
  cfg["conv_channels"] = config_.conv_channels;
  cfg["kernel_width"] = config_.kernel_width;
  cfg["lstm_hidden"] = config_.lstm_hidden;
  cfg["dense_widths"] = config_.dense_widths;
  cfg["input_dim"] = config_.input_dim;
  cfg["n_classes"] = config_.n_classes;
  cfg["dropout_p"] = config_.dropout_p;
  cfg["l2_lambda"] = config_.l2_lambda;
  j["config"] = cfg;
  nlohmann::ordered_json plist = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    nlohmann::ordered_json p;
    p["name"] = names_[i];
    p["shape"] = params_[i].shape();
    p["values"] = params_[i].v();
    plist.push_back(std::move(p));
  }
  j["params"] = std::move(plist);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out << j.dump(2) << "\n";
}

Model Model::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
    throw DataError("checkpoint '" + path + "' has an unsupported format version");
  const auto& cfg = j.at("config");
  ModelConfig mc;
  mc.arch = arch_from_string(cfg.at("arch").get<std::string>());
  mc.task = task_from_string(cfg.at("task").get<std::string>());
  mc.vocab_size = cfg.at("vocab_size").get<int>();
  mc.seq_len = cfg.at("seq_len").get<int>();
  mc.embed_dim = cfg.at("embed_dim").get<int>();
  cfg.at("conv_channels").get_to(mc.conv_channels);
  mc.kernel_width = cfg.at("kernel_width").get<int>();
  cfg.at("lstm_hidden").get_to(mc.lstm_hidden);
  cfg.at("dense_widths").get_to(mc.dense_widths);
  mc.input_dim = cfg.at("input_dim").get<int>();
  mc.n_classes = cfg.at("n_classes").get<int>();
  mc.dropout_p = cfg.at("dropout_p").get<double>();
  mc.l2_lambda = cfg.at("l2_lambda").get<double>();

  Model m(mc, 0);
  for (const auto& p : j.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    auto it = m.index_.find(name);
    if (it == m.index_.end())
      throw DataError("checkpoint parameter '" + name + "' does not fit the config");
    Tensor t = m.params_[it->second];
    Shape shape = p.at("shape").get<Shape>();
    if (shape != t.shape())
      throw DataError("checkpoint parameter '" + name + "' has shape " +
                      shape_str(shape) + ", model wants " + shape_str(t.shape()));
    std::vector<double> values = p.at("values").get<std::vector<double>>();
    if (values.size() != t.size())
      throw DataError("checkpoint parameter '" + name + "' has wrong element count");
    t.data()->v = std::move(values);
  }
  return m;
}

}  // namespace ppmu
