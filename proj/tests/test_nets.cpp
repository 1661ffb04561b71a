#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "doctest.h"
#include "grad_check.hpp"
#include "ppmu/errors.hpp"
#include "ppmu/nets.hpp"

using namespace ppmu;

namespace {

ModelConfig tiny_cnn() {
  ModelConfig mc;
  mc.arch = Arch::CNN;
  mc.task = Task::Regression;
  mc.vocab_size = 5;
  mc.seq_len = 4;
  mc.embed_dim = 3;
  mc.conv_channels = {2, 2};
  mc.kernel_width = 3;
  mc.dense_widths = {4, 3, 0};
  return mc;
}

ModelConfig tiny_lstm() {
  ModelConfig mc = tiny_cnn();
  mc.arch = Arch::LSTM;
  mc.lstm_hidden = {3, 3};
  return mc;
}

ModelConfig tiny_dense() {
  ModelConfig mc;
  mc.arch = Arch::Dense;
  mc.task = Task::Regression;
  mc.input_dim = 1;
  mc.dense_widths = {5, 4, 0};
  return mc;
}

BatchInput seq_batch(const ModelConfig& mc, int batch, uint64_t seed) {
  BatchInput in;
  in.batch = batch;
  RngStream rng(seed, "batch");
  for (int i = 0; i < batch * mc.seq_len; ++i) {
    in.ids.push_back(rng.uniform_int(mc.vocab_size));
    in.elapsed.push_back(rng.normal());
  }
  return in;
}

BatchInput dense_batch(const ModelConfig& mc, int batch, uint64_t seed) {
  BatchInput in;
  in.batch = batch;
  RngStream rng(seed, "batch");
  for (int i = 0; i < batch * mc.input_dim; ++i) in.x.push_back(rng.uniform());
  return in;
}

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("lstm layers hold exactly eight weight matrices plus four biases") {
  Model m(tiny_lstm(), 1);
  for (int layer = 1; layer <= 2; ++layer) {
    const std::string base = "lstm" + std::to_string(layer) + ".";
    int weights = 0, biases = 0;
    for (const auto& name : m.param_names()) {
      if (name.rfind(base, 0) != 0) continue;
      if (name.find(".b_") != std::string::npos) ++biases;
      else ++weights;
    }
    CHECK(weights == 8);
    CHECK(biases == 4);
  }
}

TEST_CASE("cnn and dense parameter sets have the expected shapes") {
  Model cnn(tiny_cnn(), 1);
  CHECK(cnn.param("embedding").shape() == Shape{5, 3});
  CHECK(cnn.param("conv1.kernels").shape() == Shape{2, 4, 3});  // feat = embed+1
  CHECK(cnn.param("conv2.kernels").shape() == Shape{2, 2, 3});
  CHECK(cnn.param("dense1.w").shape() == Shape{2 * 4, 4});  // channels * seq_len
  CHECK(cnn.param("head.point.w").shape() == Shape{3, 1});
  CHECK(cnn.param("head.s.w").shape() == Shape{3, 1});

  ModelConfig dc = tiny_dense();
  dc.task = Task::Classification;
  dc.n_classes = 3;
  Model dense(dc, 1);
  CHECK(dense.param("dense1.w").shape() == Shape{1, 5});
  CHECK(dense.param("head.point.w").shape() == Shape{4, 3});
  CHECK(dense.param("head.s.w").shape() == Shape{4, 1});
}

TEST_CASE("initial weights respect fan-in bounds, biases start at zero") {
  Model m(tiny_lstm(), 7);
  const auto& names = m.param_names();
  for (size_t i = 0; i < names.size(); ++i) {
    const Tensor& p = m.params()[i];
    const bool is_bias = names[i].find(".b") != std::string::npos;
    if (is_bias) {
      for (double v : p.v()) CHECK(v == 0.0);
      continue;
    }
    int fan_in = 0;
    if (names[i] == "embedding") fan_in = m.config().embed_dim;
    else if (p.shape().size() == 2) fan_in = p.shape()[0];
    else if (p.shape().size() == 3) fan_in = p.shape()[1] * p.shape()[2];
    REQUIRE(fan_in > 0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    double spread = 0.0;
    for (double v : p.v()) {
      CHECK(std::abs(v) <= bound);
      spread = std::max(spread, std::abs(v));
    }
    if (names[i] != "embedding") CHECK(spread > 0.0);
  }
}

TEST_CASE("the embedding pad row starts at zero") {
  for (const ModelConfig& mc : {tiny_cnn(), tiny_lstm()}) {
    Model m(mc, 3);
    const Tensor emb = m.param("embedding");
    for (int e = 0; e < mc.embed_dim; ++e) CHECK(emb.v()[e] == 0.0);
    bool other_rows_nonzero = false;
    for (int i = mc.embed_dim; i < emb.size(); ++i)
      if (emb.v()[i] != 0.0) other_rows_nonzero = true;
    CHECK(other_rows_nonzero);
  }
}

TEST_CASE("initialization is a pure function of the seed") {
  Model a(tiny_cnn(), 11), b(tiny_cnn(), 11), c(tiny_cnn(), 12);
  bool same = true, diff = false;
  for (size_t i = 0; i < a.params().size(); ++i) {
    if (a.params()[i].v() != b.params()[i].v()) same = false;
    if (a.params()[i].v() != c.params()[i].v()) diff = true;
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("output shapes follow the task") {
  Model reg(tiny_cnn(), 1);
  BatchInput in = seq_batch(tiny_cnn(), 3, 5);
  CHECK(reg.forward(in, ForwardMode::Deterministic).shape() == Shape{3, 2});

  ModelConfig mc = tiny_lstm();
  mc.task = Task::Classification;
  mc.n_classes = 4;
  Model cls(mc, 1);
  BatchInput in2 = seq_batch(mc, 2, 5);
  CHECK(cls.forward(in2, ForwardMode::Deterministic).shape() == Shape{2, 5});
}

TEST_CASE("deterministic mode ignores dropout and repeats exactly") {
  ModelConfig mc = tiny_cnn();
  mc.dropout_p = 0.4;
  Model m(mc, 2);
  BatchInput in = seq_batch(mc, 4, 9);
  Tensor a = m.forward(in, ForwardMode::Deterministic);
  Tensor b = m.forward(in, ForwardMode::Deterministic);
  CHECK(a.v() == b.v());
}

TEST_CASE("train and stochastic inference share the dropout path") {
  ModelConfig mc = tiny_cnn();
  mc.dropout_p = 0.4;
  Model m(mc, 2);
  BatchInput in = seq_batch(mc, 4, 9);

  RngStream r1(77, "drop");
  RngStream r2(77, "drop");
  Tensor train = m.forward(in, ForwardMode::Train, &r1);
  Tensor stoch = m.forward(in, ForwardMode::StochasticInference, &r2);
  CHECK(train.v() == stoch.v());

  RngStream r3(78, "drop");
  Tensor other = m.forward(in, ForwardMode::Train, &r3);
  CHECK(train.v() != other.v());

  Tensor det = m.forward(in, ForwardMode::Deterministic);
  CHECK(train.v() != det.v());
}

TEST_CASE("dropout p=0 makes every mode agree") {
  ModelConfig mc = tiny_lstm();
  mc.dropout_p = 0.0;
  Model m(mc, 4);
  BatchInput in = seq_batch(mc, 3, 1);
  RngStream rng(5, "drop");
  Tensor train = m.forward(in, ForwardMode::Train, &rng);
  Tensor det = m.forward(in, ForwardMode::Deterministic);
  CHECK(train.v() == det.v());
}

TEST_CASE("l2 penalty sums squared weights only") {
  ModelConfig mc = tiny_cnn();
  mc.l2_lambda = 0.01;
  Model m(mc, 6);

  double expect = 0.0;
  const auto& names = m.param_names();
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i].find(".b") != std::string::npos) continue;
    for (double v : m.params()[i].v()) expect += v * v;
  }
  CHECK(m.l2_penalty().value() == doctest::Approx(0.01 * expect).epsilon(1e-12));

  // nudging a bias must not move the penalty
  const double before = m.l2_penalty().value();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == "conv1.bias") m.params()[i].v()[0] += 10.0;
  CHECK(m.l2_penalty().value() == before);
}

TEST_CASE("save and load round-trip parameters and config") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "ppmu_nets_ckpt.json").string();
  ModelConfig mc = tiny_lstm();
  mc.task = Task::Classification;
  mc.n_classes = 3;
  mc.dropout_p = 0.2;
  Model m(mc, 31);
  m.save(path);
  Model back = Model::load(path);

  CHECK(back.config().arch == mc.arch);
  CHECK(back.config().task == mc.task);
  CHECK(back.config().n_classes == 3);
  CHECK(back.config().dropout_p == 0.2);
  REQUIRE(back.params().size() == m.params().size());
  for (size_t i = 0; i < m.params().size(); ++i)
    CHECK(back.params()[i].v() == m.params()[i].v());

  BatchInput in = seq_batch(mc, 2, 3);
  CHECK(m.forward(in, ForwardMode::Deterministic).v() ==
        back.forward(in, ForwardMode::Deterministic).v());
  fs::remove(path);
}

TEST_CASE("load rejects tampered checkpoints") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "ppmu_nets_bad.json").string();
  Model m(tiny_cnn(), 1);
  m.save(path);

  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  in.close();
  auto pos = text.find("conv1.kernels");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 13, "conv9.kernels");
  std::ofstream out(path);
  out << text;
  out.close();

  CHECK_THROWS_AS(Model::load(path), DataError);
  fs::remove(path);
}

TEST_CASE("every architecture passes a full-model finite-difference check") {
  const double tol = 1e-4;

  auto check_model = [&](const ModelConfig& mc, const BatchInput& in) {
    Model m(mc, 17);
    std::vector<Tensor>& leaves = m.params();
    const double err = testutil::max_grad_rel_err(leaves, [&] {
      return reduce_mean(square(m.forward(in, ForwardMode::Deterministic)));
    });
    CHECK(err < tol);
  };

  check_model(tiny_dense(), dense_batch(tiny_dense(), 3, 2));
  check_model(tiny_cnn(), seq_batch(tiny_cnn(), 2, 2));
  check_model(tiny_lstm(), seq_batch(tiny_lstm(), 2, 2));

  ModelConfig cls = tiny_lstm();
  cls.task = Task::Classification;
  cls.n_classes = 3;
  check_model(cls, seq_batch(cls, 2, 4));
}

TEST_CASE("pad gradient clearing keeps the pad row at zero through updates") {
  ModelConfig mc = tiny_cnn();
  Model m(mc, 8);
  BatchInput in;
  in.batch = 2;
  in.ids = {0, 0, 1, 2, 0, 3, 4, 1};  // plenty of pads
  in.elapsed.assign(8, 0.5);

  Adam adam;
  for (int step = 0; step < 3; ++step) {
    Tape tape;
    m.attach(tape);
    Tensor loss = reduce_mean(square(m.forward(in, ForwardMode::Deterministic)));
    tape.backward(loss);
    m.zero_pad_gradient();
    adam.step(m.params());
  }
  const Tensor emb = m.param("embedding");
  for (int e = 0; e < mc.embed_dim; ++e) CHECK(emb.v()[e] == 0.0);
  bool moved = false;
  for (int i = mc.embed_dim; i < emb.size(); ++i)
    if (emb.v()[i] != Model(mc, 8).param("embedding").v()[i]) moved = true;
  CHECK(moved);
}

TEST_CASE("config validation rejects nonsense") {
  ModelConfig mc = tiny_cnn();
  mc.vocab_size = 1;
  CHECK_THROWS_AS(Model(mc, 1), ConfigError);
  mc = tiny_cnn();
  mc.kernel_width = 4;
  CHECK_THROWS_AS(Model(mc, 1), ConfigError);
  mc = tiny_cnn();
  mc.dropout_p = 1.0;
  CHECK_THROWS_AS(Model(mc, 1), ConfigError);
  mc = tiny_cnn();
  mc.dense_widths = {4, 3, 2};  // head for regression is width 1
  CHECK_THROWS_AS(Model(mc, 1), ConfigError);
}

TEST_CASE("string conversions round-trip") {
  for (Arch a : {Arch::Dense, Arch::CNN, Arch::LSTM})
    CHECK(arch_from_string(to_string(a)) == a);
  for (Task t : {Task::Regression, Task::Classification})
    CHECK(task_from_string(to_string(t)) == t);
  CHECK_THROWS_AS(arch_from_string("transformer"), ConfigError);
  CHECK_THROWS_AS(task_from_string("ranking"), ConfigError);
}

}  // TEST_SUITE
