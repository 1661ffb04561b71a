#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ppmu/errors.hpp"

namespace ppmu {

using Shape = std::vector<int>;

int shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// Counter-based random stream. Every draw is a pure function of
// (seed, label, counter), so independently labeled consumers can be
// replayed in isolation and in any order.
class RngStream {
 public:
  RngStream() : RngStream(0, "") {}
  RngStream(uint64_t seed, const std::string& label);

  uint64_t next_u64();
  double uniform();        // [0, 1)
  double normal();         // standard normal (Box-Muller, two draws)
  int uniform_int(int n);  // [0, n)

  RngStream substream(const std::string& label) const;
  RngStream substream(const std::string& label, uint64_t index) const;

  uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }
  uint64_t counter() const { return counter_; }

 private:
  uint64_t seed_ = 0;
  std::string label_;
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

namespace detail {
struct TapeImpl;
}

struct TensorData {
  Shape shape;
  std::vector<double> v;  // row-major values
  std::vector<double> g;  // same length as v once the tensor joins a tape
  std::weak_ptr<detail::TapeImpl> tape;  // live tape this data is recorded on
  int node = -1;
};

// Shared-value handle. Copies alias the same storage, tape link included,
// so gradient flow survives copies.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor from(const Shape& shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int size() const { return static_cast<int>(d_->v.size()); }

  std::vector<double>& v() { return d_->v; }
  const std::vector<double>& v() const { return d_->v; }
  double value() const;  // scalar tensors only

  bool has_grad() const { return d_ && !d_->g.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  std::shared_ptr<TensorData> data() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape. Nodes are replayed strictly in reverse recording
// order; each backward closure accumulates into its parents' grads.
class Tape {
 public:
  Tape();

  void watch(Tensor& t);  // register a leaf; allocates and zeroes its grad
  void backward(const Tensor& loss);
  void reset();  // drop the recording so the tape can be reused
  int node_count() const;

  using BackwardFn = std::function<void()>;
  // Attach `out` to the live tape shared by `parents` (no-op when none).
  // `fn` must add d(loss)/d(parent) into each parent's grad.
  static void record_op(Tensor& out, const std::vector<Tensor>& parents, BackwardFn fn);

 private:
  std::shared_ptr<detail::TapeImpl> impl_;
};

// ---- op family ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a, double alpha = 1.0);
Tensor sigmoid(const Tensor& a);
Tensor tanh_t(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);               // (m,k)x(k,n)
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);  // x*w + b
Tensor softmax_rows(const Tensor& logits);                     // (B,C)
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids,
                        int batch, int seq_len);               // -> (B,L,E)

Tensor reduce_sum(const Tensor& a);   // -> scalar
Tensor reduce_mean(const Tensor& a);  // -> scalar

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor slice_cols(const Tensor& x, int c0, int c1);     // (B,C) -> (B,c1-c0)
Tensor concat_cols(const Tensor& a, const Tensor& b);   // (B,c1)+(B,c2)
Tensor slice_time(const Tensor& x, int t);              // (B,L,E) -> (B,E)
Tensor swap12(const Tensor& x);                         // (B,A,C) -> (B,C,A)
Tensor concat_channels(const Tensor& a, const Tensor& b);  // (B,C,L) dims
Tensor mul_rowvec(const Tensor& x, const Tensor& v);    // row-wise x .* v
Tensor mul_colvec(const Tensor& x, const Tensor& v);    // row r scaled by v[r]

// 1-D convolution, stride 1, zero same-padding. x:(B,Cin,L), k:(Cout,Cin,W).
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias);

// Inverted dropout mask: entries 0 with prob p, else 1/(1-p). Constant
// (not differentiated); deterministic for a given stream state.
Tensor dropout_mask(const Shape& shape, double p, RngStream& rng);

// Per-row cross entropy -ln softmax(logits)[label], log-sum-exp stabilized.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels);

// ---- optimizer ----
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient as wd*param
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  // Applies one update to every tensor in `params` from its grad.
  // Throws NumericError (before touching any state) on nonfinite grads.
  void step(std::vector<Tensor>& params);
  const AdamConfig& config() const { return cfg_; }
  int steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Neumaier-compensated sum; reductions use it so cancellation between large
// terms does not wipe out small ones.
double compensated_sum(const std::vector<double>& xs);

}  // namespace ppmu
