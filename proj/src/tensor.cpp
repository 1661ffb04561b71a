#include "ppmu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ppmu {

int shape_size(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// ---- RngStream ----

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RngStream::RngStream(uint64_t seed, const std::string& label)
    : seed_(seed), label_(label) {
  key_ = splitmix64(seed ^ splitmix64(fnv1a(label)));
}

uint64_t RngStream::next_u64() {
  return splitmix64(key_ ^ splitmix64(counter_++));
}

double RngStream::uniform() {
  // 53 random bits -> [0,1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  constexpr double two_pi = 6.283185307179586476925286766559;
  double u1 = 1.0 - uniform();  // (0,1]
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

int RngStream::uniform_int(int n) {
  if (n <= 0) throw NumericError("uniform_int: n must be positive");
  // rejection sampling, no modulo bias
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int>(x % un);
}

RngStream RngStream::substream(const std::string& label) const {
  return RngStream(seed_, label_.empty() ? label : label_ + "/" + label);
}

RngStream RngStream::substream(const std::string& label, uint64_t index) const {
  return substream(label + "." + std::to_string(index));
}

// ---- Tensor ----

Tensor Tensor::zeros(const Shape& shape) {
  Tensor t;
  t.d_ = std::make_shared<TensorData>();
  t.d_->shape = shape;
  t.d_->v.assign(shape_size(shape), 0.0);
  return t;
}

Tensor Tensor::full(const Shape& shape, double value) {
  Tensor t = zeros(shape);
  std::fill(t.d_->v.begin(), t.d_->v.end(), value);
  return t;
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
  if (static_cast<int>(values.size()) != shape_size(shape))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  Tensor t;
  t.d_ = std::make_shared<TensorData>();
  t.d_->shape = shape;
  t.d_->v = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

double Tensor::value() const {
  if (size() != 1) throw DimensionError("value() on non-scalar tensor " + shape_str(shape()));
  return d_->v[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw NumericError("tensor has no gradient (never joined a tape)");
  return d_->g;
}

void Tensor::zero_grad() {
  if (d_) d_->g.assign(d_->v.size(), 0.0);
}

// ---- Tape ----

namespace detail {
struct TapeImpl {
  std::vector<Tape::BackwardFn> nodes;
  bool ran_backward = false;
};
}  // namespace detail

Tape::Tape() : impl_(std::make_shared<detail::TapeImpl>()) {}

void Tape::watch(Tensor& t) {
  if (!t.defined()) throw DimensionError("watch() on undefined tensor");
  auto live = t.data()->tape.lock();
  if (live && live != impl_)
    throw NumericError("tensor is already attached to a different live tape");
  t.zero_grad();
  t.data()->tape = impl_;
  t.data()->node = -2;  // leaf marker
}

int Tape::node_count() const { return static_cast<int>(impl_->nodes.size()); }

void Tape::reset() {
  impl_->nodes.clear();
  impl_->ran_backward = false;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw DimensionError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  if (impl_->ran_backward)
    throw NumericError("backward() already run on this tape; call reset() first");
  auto loss_tape = loss.data()->tape.lock();
  if (loss_tape != impl_)
    throw NumericError("loss tensor was not recorded on this tape");
  impl_->ran_backward = true;
  loss.data()->g.assign(1, 1.0);
  for (auto it = impl_->nodes.rbegin(); it != impl_->nodes.rend(); ++it) (*it)();
}

void Tape::record_op(Tensor& out, const std::vector<Tensor>& parents, BackwardFn fn) {
  std::shared_ptr<detail::TapeImpl> tape;
  for (const Tensor& p : parents) {
    auto t = p.data()->tape.lock();
    if (!t) continue;
    if (tape && t != tape)
      throw NumericError("operands recorded on two different live tapes");
    tape = t;
  }
  if (!tape) return;  // pure evaluation
  // A parent not yet on this tape may carry a stale grad from an earlier,
  // now-dead tape; start it from zero. Parents already recorded here keep
  // accumulating.
  for (const Tensor& p : parents)
    if (p.data()->tape.lock() != tape) {
      p.data()->g.assign(p.data()->v.size(), 0.0);
      p.data()->tape = tape;
    }
  out.zero_grad();
  out.data()->tape = tape;
  out.data()->node = static_cast<int>(tape->nodes.size());
  tape->nodes.push_back(std::move(fn));
}

// ---- ops ----

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

// elementwise helper: out_i = f(a_i); backward ga_i += go_i * df(a_i, out_i)
template <typename F, typename DF>
Tensor unary_op(const Tensor& a, F f, DF df) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.v();
  auto& ov = out.v();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i]);
  Tape::record_op(out, {a}, [a, out, df]() {
    const auto& go = out.data()->g;
    const auto& av = a.data()->v;
    const auto& ov = out.data()->v;
    auto& ga = a.data()->g;
    for (size_t i = 0; i < av.size(); ++i) ga[i] += go[i] * df(av[i], ov[i]);
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  for (int i = 0; i < a.size(); ++i) out.v()[i] = a.v()[i] + b.v()[i];
  Tape::record_op(out, {a, b}, [a, b, out]() {
    const auto& go = out.data()->g;
    auto& ga = a.data()->g;
    auto& gb = b.data()->g;
    for (size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] += go[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  for (int i = 0; i < a.size(); ++i) out.v()[i] = a.v()[i] - b.v()[i];
  Tape::record_op(out, {a, b}, [a, b, out]() {
    const auto& go = out.data()->g;
    auto& ga = a.data()->g;
    auto& gb = b.data()->g;
    for (size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] -= go[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  for (int i = 0; i < a.size(); ++i) out.v()[i] = a.v()[i] * b.v()[i];
  Tape::record_op(out, {a, b}, [a, b, out]() {
    const auto& go = out.data()->g;
    const auto& av = a.data()->v;
    const auto& bv = b.data()->v;
    auto& ga = a.data()->g;
    auto& gb = b.data()->g;
    for (size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i] * bv[i];
      gb[i] += go[i] * av[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(a, [c](double x) { return x * c; },
                  [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(a, [c](double x) { return x + c; },
                  [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
  return unary_op(a, [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; });
}

Tensor exp_t(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
  return unary_op(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor elu(const Tensor& a, double alpha) {
  return unary_op(a,
                  [alpha](double x) { return x > 0 ? x : alpha * (std::exp(x) - 1.0); },
                  [alpha](double x, double y) { return x > 0 ? 1.0 : y + alpha; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a,
                  [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_t(const Tensor& a) {
  return unary_op(a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n});
  const auto& av = a.v();
  const auto& bv = b.v();
  auto& ov = out.v();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (int j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
    }
  Tape::record_op(out, {a, b}, [a, b, out, m, k, n]() {
    const auto& go = out.data()->g;
    const auto& av = a.data()->v;
    const auto& bv = b.data()->v;
    auto& ga = a.data()->g;
    auto& gb = b.data()->g;
    // ga += go * b^T ; gb += a^T * go
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const double g = go[i * n + j];
        if (g == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          ga[i * k + p] += g * bv[p * n + j];
          gb[p * n + j] += av[i * k + p] * g;
        }
      }
  });
  return out;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[0])
    throw DimensionError("affine: incompatible shapes " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
  const int m = x.shape()[0], k = x.shape()[1], n = w.shape()[1];
  if (b.shape() != Shape{n})
    throw DimensionError("affine: bias shape " + shape_str(b.shape()) + " != (" +
                         std::to_string(n) + ")");
  Tensor out = Tensor::zeros({m, n});
  const auto& xv = x.v();
  const auto& wv = w.v();
  const auto& bv = b.v();
  auto& ov = out.v();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) ov[i * n + j] = bv[j];
    for (int p = 0; p < k; ++p) {
      const double xip = xv[i * k + p];
      if (xip == 0.0) continue;
      for (int j = 0; j < n; ++j) ov[i * n + j] += xip * wv[p * n + j];
    }
  }
  Tape::record_op(out, {x, w, b}, [x, w, b, out, m, k, n]() {
    const auto& go = out.data()->g;
    const auto& xv = x.data()->v;
    const auto& wv = w.data()->v;
    auto& gx = x.data()->g;
    auto& gw = w.data()->g;
    auto& gb = b.data()->g;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const double g = go[i * n + j];
        if (g == 0.0) continue;
        gb[j] += g;
        for (int p = 0; p < k; ++p) {
          gx[i * k + p] += g * wv[p * n + j];
          gw[p * n + j] += xv[i * k + p] * g;
        }
      }
  });
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.shape().size() != 2)
    throw DimensionError("softmax_rows expects (B,C), got " + shape_str(logits.shape()));
  const int rows = logits.shape()[0], cols = logits.shape()[1];
  Tensor out = Tensor::zeros(logits.shape());
  const auto& xv = logits.v();
  auto& ov = out.v();
  for (int r = 0; r < rows; ++r) {
    const double* xr = &xv[r * cols];
    double m = xr[0];
    for (int c = 1; c < cols; ++c) m = std::max(m, xr[c]);
    double z = 0;
    for (int c = 0; c < cols; ++c) {
      ov[r * cols + c] = std::exp(xr[c] - m);
      z += ov[r * cols + c];
    }
    for (int c = 0; c < cols; ++c) ov[r * cols + c] /= z;
  }
  Tape::record_op(out, {logits}, [logits, out, rows, cols]() {
    const auto& go = out.data()->g;
    const auto& yv = out.data()->v;
    auto& gx = logits.data()->g;
    for (int r = 0; r < rows; ++r) {
      double dot = 0;
      for (int c = 0; c < cols; ++c) dot += go[r * cols + c] * yv[r * cols + c];
      for (int c = 0; c < cols; ++c)
        gx[r * cols + c] += yv[r * cols + c] * (go[r * cols + c] - dot);
    }
  });
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, int batch,
                        int seq_len) {
  if (table.shape().size() != 2)
    throw DimensionError("embedding table must be 2-D, got " + shape_str(table.shape()));
  if (static_cast<int>(ids.size()) != batch * seq_len)
    throw DimensionError("embedding_lookup: got " + std::to_string(ids.size()) +
                         " ids for batch " + std::to_string(batch) + " x " +
                         std::to_string(seq_len));
  const int vocab = table.shape()[0], dim = table.shape()[1];
  for (int id : ids)
    if (id < 0 || id >= vocab)
      throw DimensionError("embedding id " + std::to_string(id) +
                           " outside table of size " + std::to_string(vocab));
  Tensor out = Tensor::zeros({batch, seq_len, dim});
  const auto& tv = table.v();
  auto& ov = out.v();
  for (int i = 0; i < batch * seq_len; ++i)
    for (int e = 0; e < dim; ++e) ov[i * dim + e] = tv[ids[i] * dim + e];
  Tape::record_op(out, {table}, [table, out, ids, dim]() {
    const auto& go = out.data()->g;
    auto& gt = table.data()->g;
    for (size_t i = 0; i < ids.size(); ++i)
      for (int e = 0; e < dim; ++e) gt[ids[i] * dim + e] += go[i * dim + e];
  });
  return out;
}

Tensor reduce_sum(const Tensor& a) {
  Tensor out = Tensor::scalar(compensated_sum(a.v()));
  Tape::record_op(out, {a}, [a, out]() {
    const double go = out.data()->g[0];
    auto& ga = a.data()->g;
    for (auto& g : ga) g += go;
  });
  return out;
}

Tensor reduce_mean(const Tensor& a) {
  const int n = a.size();
  if (n == 0) throw DimensionError("reduce_mean of empty tensor");
  Tensor out = Tensor::scalar(compensated_sum(a.v()) / n);
  Tape::record_op(out, {a}, [a, out, n]() {
    const double go = out.data()->g[0] / n;
    auto& ga = a.data()->g;
    for (auto& g : ga) g += go;
  });
  return out;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         ": element count differs");
  Tensor out = Tensor::from(shape, a.v());
  Tape::record_op(out, {a}, [a, out]() {
    const auto& go = out.data()->g;
    auto& ga = a.data()->g;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
  return out;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  if (x.shape().size() != 2 || c0 < 0 || c1 > x.shape()[1] || c0 >= c1)
    throw DimensionError("slice_cols[" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") on " + shape_str(x.shape()));
  const int rows = x.shape()[0], cols = x.shape()[1], w = c1 - c0;
  Tensor out = Tensor::zeros({rows, w});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < w; ++c) out.v()[r * w + c] = x.v()[r * cols + c0 + c];
  Tape::record_op(out, {x}, [x, out, rows, cols, c0, w]() {
    const auto& go = out.data()->g;
    auto& gx = x.data()->g;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c) gx[r * cols + c0 + c] += go[r * w + c];
  });
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != b.shape()[0])
    throw DimensionError("concat_cols: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const int rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  Tensor out = Tensor::zeros({rows, ca + cb});
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < ca; ++c) out.v()[r * (ca + cb) + c] = a.v()[r * ca + c];
    for (int c = 0; c < cb; ++c) out.v()[r * (ca + cb) + ca + c] = b.v()[r * cb + c];
  }
  Tape::record_op(out, {a, b}, [a, b, out, rows, ca, cb]() {
    const auto& go = out.data()->g;
    auto& ga = a.data()->g;
    auto& gb = b.data()->g;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < ca; ++c) ga[r * ca + c] += go[r * (ca + cb) + c];
      for (int c = 0; c < cb; ++c) gb[r * cb + c] += go[r * (ca + cb) + ca + c];
    }
  });
  return out;
}

Tensor slice_time(const Tensor& x, int t) {
  if (x.shape().size() != 3 || t < 0 || t >= x.shape()[1])
    throw DimensionError("slice_time(" + std::to_string(t) + ") on " + shape_str(x.shape()));
  const int batch = x.shape()[0], len = x.shape()[1], dim = x.shape()[2];
  Tensor out = Tensor::zeros({batch, dim});
  for (int b = 0; b < batch; ++b)
    for (int e = 0; e < dim; ++e) out.v()[b * dim + e] = x.v()[(b * len + t) * dim + e];
  Tape::record_op(out, {x}, [x, out, batch, len, dim, t]() {
    const auto& go = out.data()->g;
    auto& gx = x.data()->g;
    for (int b = 0; b < batch; ++b)
      for (int e = 0; e < dim; ++e) gx[(b * len + t) * dim + e] += go[b * dim + e];
  });
  return out;
}

Tensor swap12(const Tensor& x) {
  if (x.shape().size() != 3)
    throw DimensionError("swap12 expects a 3-D tensor, got " + shape_str(x.shape()));
  const int b = x.shape()[0], a = x.shape()[1], c = x.shape()[2];
  Tensor out = Tensor::zeros({b, c, a});
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < a; ++j)
      for (int k = 0; k < c; ++k)
        out.v()[(i * c + k) * a + j] = x.v()[(i * a + j) * c + k];
  Tape::record_op(out, {x}, [x, out, b, a, c]() {
    const auto& go = out.data()->g;
    auto& gx = x.data()->g;
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < a; ++j)
        for (int k = 0; k < c; ++k)
          gx[(i * a + j) * c + k] += go[(i * c + k) * a + j];
  });
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[0] != b.shape()[0] ||
      a.shape()[2] != b.shape()[2])
    throw DimensionError("concat_channels: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const int batch = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1], len = a.shape()[2];
  Tensor out = Tensor::zeros({batch, ca + cb, len});
  for (int i = 0; i < batch; ++i) {
    for (int c = 0; c < ca; ++c)
      for (int l = 0; l < len; ++l)
        out.v()[((i * (ca + cb)) + c) * len + l] = a.v()[(i * ca + c) * len + l];
    for (int c = 0; c < cb; ++c)
      for (int l = 0; l < len; ++l)
        out.v()[((i * (ca + cb)) + ca + c) * len + l] = b.v()[(i * cb + c) * len + l];
  }
  Tape::record_op(out, {a, b}, [a, b, out, batch, ca, cb, len]() {
    const auto& go = out.data()->g;
    auto& ga = a.data()->g;
    auto& gb = b.data()->g;
    for (int i = 0; i < batch; ++i) {
      for (int c = 0; c < ca; ++c)
        for (int l = 0; l < len; ++l)
          ga[(i * ca + c) * len + l] += go[((i * (ca + cb)) + c) * len + l];
      for (int c = 0; c < cb; ++c)
        for (int l = 0; l < len; ++l)
          gb[(i * cb + c) * len + l] += go[((i * (ca + cb)) + ca + c) * len + l];
    }
  });
  return out;
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  if (x.shape().size() != 2 || v.shape().size() != 1 || x.shape()[1] != v.shape()[0])
    throw DimensionError("mul_rowvec: " + shape_str(x.shape()) + " vs " +
                         shape_str(v.shape()));
  const int rows = x.shape()[0], cols = x.shape()[1];
  Tensor out = Tensor::zeros(x.shape());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out.v()[r * cols + c] = x.v()[r * cols + c] * v.v()[c];
  Tape::record_op(out, {x, v}, [x, v, out, rows, cols]() {
    const auto& go = out.data()->g;
    const auto& xv = x.data()->v;
    const auto& vv = v.data()->v;
    auto& gx = x.data()->g;
    auto& gv = v.data()->g;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        gx[r * cols + c] += go[r * cols + c] * vv[c];
        gv[c] += go[r * cols + c] * xv[r * cols + c];
      }
  });
  return out;
}

Tensor mul_colvec(const Tensor& x, const Tensor& v) {
  if (x.shape().size() != 2 || v.shape().size() != 1 || x.shape()[0] != v.shape()[0])
    throw DimensionError("mul_colvec: " + shape_str(x.shape()) + " vs " +
                         shape_str(v.shape()));
  const int rows = x.shape()[0], cols = x.shape()[1];
  Tensor out = Tensor::zeros(x.shape());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out.v()[r * cols + c] = x.v()[r * cols + c] * v.v()[r];
  Tape::record_op(out, {x, v}, [x, v, out, rows, cols]() {
    const auto& go = out.data()->g;
    const auto& xv = x.data()->v;
    const auto& vv = v.data()->v;
    auto& gx = x.data()->g;
    auto& gv = v.data()->g;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        gx[r * cols + c] += go[r * cols + c] * vv[r];
        gv[r] += go[r * cols + c] * xv[r * cols + c];
      }
  });
  return out;
}

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  if (x.shape().size() != 3 || kernels.shape().size() != 3)
    throw DimensionError("conv1d: x " + shape_str(x.shape()) + ", kernels " +
                         shape_str(kernels.shape()));
  const int batch = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
  const int cout = kernels.shape()[0], kcin = kernels.shape()[1], width = kernels.shape()[2];
  if (kcin != cin)
    throw DimensionError("conv1d: input channels " + std::to_string(cin) +
                         " != kernel channels " + std::to_string(kcin));
  if (width % 2 == 0 || width < 1)
    throw DimensionError("conv1d: kernel width must be odd, got " + std::to_string(width));
  if (len < 1) throw DimensionError("conv1d: kernel wider than padded input (empty input)");
  if (bias.shape() != Shape{cout})
    throw DimensionError("conv1d: bias shape " + shape_str(bias.shape()));
  const int half = width / 2;
  Tensor out = Tensor::zeros({batch, cout, len});
  const auto& xv = x.v();
  const auto& kv = kernels.v();
  const auto& bv = bias.v();
  auto& ov = out.v();
  for (int b = 0; b < batch; ++b)
    for (int o = 0; o < cout; ++o)
      for (int l = 0; l < len; ++l) {
        double acc = bv[o];
        for (int c = 0; c < cin; ++c)
          for (int w = 0; w < width; ++w) {
            const int i = l + w - half;
            if (i < 0 || i >= len) continue;
            acc += xv[(b * cin + c) * len + i] * kv[(o * cin + c) * width + w];
          }
        ov[(b * cout + o) * len + l] = acc;
      }
  Tape::record_op(out, {x, kernels, bias},
                  [x, kernels, bias, out, batch, cin, len, cout, width, half]() {
    const auto& go = out.data()->g;
    const auto& xv = x.data()->v;
    const auto& kv = kernels.data()->v;
    auto& gx = x.data()->g;
    auto& gk = kernels.data()->g;
    auto& gb = bias.data()->g;
    for (int b = 0; b < batch; ++b)
      for (int o = 0; o < cout; ++o)
        for (int l = 0; l < len; ++l) {
          const double g = go[(b * cout + o) * len + l];
          if (g == 0.0) continue;
          gb[o] += g;
          for (int c = 0; c < cin; ++c)
            for (int w = 0; w < width; ++w) {
              const int i = l + w - half;
              if (i < 0 || i >= len) continue;
              gx[(b * cin + c) * len + i] += g * kv[(o * cin + c) * width + w];
              gk[(o * cin + c) * width + w] += g * xv[(b * cin + c) * len + i];
            }
        }
  });
  return out;
}

Tensor dropout_mask(const Shape& shape, double p, RngStream& rng) {
  if (p < 0.0 || p >= 1.0)
    throw NumericError("dropout probability must be in [0,1), got " + std::to_string(p));
  Tensor mask = Tensor::zeros(shape);
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& m : mask.v()) m = (rng.uniform() < p) ? 0.0 : keep_scale;
  return mask;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2)
    throw DimensionError("cross_entropy_rows expects (B,C), got " + shape_str(logits.shape()));
  const int rows = logits.shape()[0], cols = logits.shape()[1];
  if (static_cast<int>(labels.size()) != rows)
    throw DimensionError("cross_entropy_rows: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(rows) + " rows");
  for (int y : labels)
    if (y < 0 || y >= cols)
      throw DimensionError("label " + std::to_string(y) + " outside [0," +
                           std::to_string(cols) + ")");
  Tensor out = Tensor::zeros({rows});
  const auto& xv = logits.v();
  for (int r = 0; r < rows; ++r) {
    const double* xr = &xv[r * cols];
    double m = xr[0];
    for (int c = 1; c < cols; ++c) m = std::max(m, xr[c]);
    double z = 0;
    for (int c = 0; c < cols; ++c) z += std::exp(xr[c] - m);
    out.v()[r] = m + std::log(z) - xr[labels[r]];
  }
  Tape::record_op(out, {logits}, [logits, out, labels, rows, cols]() {
    const auto& go = out.data()->g;
    const auto& xv = logits.data()->v;
    auto& gx = logits.data()->g;
    for (int r = 0; r < rows; ++r) {
      if (go[r] == 0.0) continue;
      const double* xr = &xv[r * cols];
      double m = xr[0];
      for (int c = 1; c < cols; ++c) m = std::max(m, xr[c]);
      double z = 0;
      for (int c = 0; c < cols; ++c) z += std::exp(xr[c] - m);
      for (int c = 0; c < cols; ++c) {
        const double p = std::exp(xr[c] - m) / z;
        gx[r * cols + c] += go[r] * (p - (c == labels[r] ? 1.0 : 0.0));
      }
    }
  });
  return out;
}

// ---- Adam ----

void Adam::step(std::vector<Tensor>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].size(), 0.0);
      v_[i].assign(params[i].size(), 0.0);
    }
  }
  if (m_.size() != params.size())
    throw DimensionError("Adam: parameter count changed between steps");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i].grad();
    for (double gi : g)
      if (!std::isfinite(gi))
        throw NumericError("nonfinite gradient in parameter " + std::to_string(i) +
                           "; step aborted");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].v();
    const auto& g = params[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] + cfg_.weight_decay * w[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double compensated_sum(const std::vector<double>& xs) {
  // Neumaier's variant: the correction also survives |x| > |sum|, so
  // {1e16, 1, -1e16, 1} comes out as 2 and not 1.
  double sum = 0.0, comp = 0.0;
  for (double x : xs) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  return sum + comp;
}

}  // namespace ppmu
