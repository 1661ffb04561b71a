#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ppmu/tensor.hpp"

namespace ppmu {

enum class Arch { Dense, CNN, LSTM };
enum class Task { Regression, Classification };
enum class ForwardMode { Train, StochasticInference, Deterministic };

Arch arch_from_string(const std::string& s);
Task task_from_string(const std::string& s);
std::string to_string(Arch a);
std::string to_string(Task t);

struct ModelConfig {
  Arch arch = Arch::CNN;
  Task task = Task::Regression;
  int vocab_size = 2;  // row 0 = padding, row 1 = out-of-vocabulary
  int seq_len = 10;
  int embed_dim = 8;
  std::array<int, 2> conv_channels{16, 16};
  int kernel_width = 3;
  std::array<int, 2> lstm_hidden{16, 16};
  // Three dense layers; the last is the doubled output head. A zero third
  // entry means "fill in from the task" (1 for regression, n_classes for
  // classification).
  std::array<int, 3> dense_widths{32, 16, 0};
  int input_dim = 1;  // Dense arch only
  int n_classes = 2;  // classification only
  double dropout_p = 0.1;
  double l2_lambda = 0.0;

  int head_dim() const;     // point columns: 1 or n_classes
  int output_cols() const;  // head_dim() + 1 for the log-variance column
  void validate() const;
};

// One batch of raw inputs. Sequence architectures read ids + elapsed
// (both batch*seq_len, row-major); the dense architecture reads x
// (batch*input_dim).
struct BatchInput {
  int batch = 0;
  std::vector<int> ids;
  std::vector<double> elapsed;
  std::vector<double> x;
};

class Model {
 public:
  Model() = default;
  Model(const ModelConfig& config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }
  Tensor param(const std::string& name) const;
  std::size_t param_count() const;  // total number of scalars

  void attach(Tape& tape);

  // Clears the gradient on the embedding pad row so the optimizer leaves it
  // at zero. Call between backward and the optimizer step.
  void zero_pad_gradient();

  // Output is (batch, 2) for regression and (batch, n_classes + 1) for
  // classification; the last column is s = log sigma^2.
  Tensor forward(const BatchInput& in, ForwardMode mode,
                 RngStream* dropout_rng = nullptr) const;

  Tensor l2_penalty() const;  // l2_lambda * sum of squared weights, biases excluded

  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  Tensor add_param(const std::string& name, const Shape& shape, int fan_in,
                   RngStream& rng);
  Tensor maybe_mask(const Tensor& t, ForwardMode mode, RngStream* rng) const;
  Tensor dense_head(Tensor h, ForwardMode mode, RngStream* rng,
                    bool mask_input = true) const;
  Tensor forward_dense(const BatchInput& in, ForwardMode mode, RngStream* rng) const;
  Tensor forward_cnn(const BatchInput& in, ForwardMode mode, RngStream* rng) const;
  Tensor forward_lstm(const BatchInput& in, ForwardMode mode, RngStream* rng) const;
  Tensor embed_inputs(const BatchInput& in) const;  // (B, L, embed_dim + 1)

  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
  std::map<std::string, int> index_;
};

}  // namespace ppmu
