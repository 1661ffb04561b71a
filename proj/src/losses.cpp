#include "ppmu/losses.hpp"

#include <cmath>

namespace ppmu {

namespace {

void check_finite(const Tensor& t, const char* name) {
  for (double x : t.v())
    if (!std::isfinite(x)) throw NumericError(std::string("nonfinite value in ") + name);
}

// -inf log-variance means sigma = 0 and is a valid degenerate input
void check_log_variance(const Tensor& s) {
  for (double x : s.v())
    if (std::isnan(x) || x == INFINITY) throw NumericError("nonfinite value in s");
}

void check_equal_len(const Tensor& a, const Tensor& b, const char* op) {
  if (a.size() != b.size())
    throw DimensionError(std::string(op) + ": length mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor mse_loss(const Tensor& yhat, const Tensor& y) {
  check_equal_len(yhat, y, "mse_loss");
  Tensor diff = sub(yhat, y);
  Tensor sq = mul(diff, diff);
  return reduce_mean(scale(sq, 0.5));
}

Tensor hetero_regression_loss(const Tensor& yhat, const Tensor& s, const Tensor& y) {
  check_equal_len(yhat, y, "hetero_regression_loss");
  check_equal_len(yhat, s, "hetero_regression_loss");
  check_finite(yhat, "yhat");
  check_finite(y, "y");
  check_finite(s, "s");
  Tensor diff = sub(yhat, y);
  Tensor sq = mul(diff, diff);
  // (y-yhat)^2 * exp(-s) / 2  +  s / 2
  Tensor attenuated = scale(mul(sq, exp_t(neg(s))), 0.5);
  return reduce_mean(add(attenuated, scale(s, 0.5)));
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
  return reduce_mean(cross_entropy_rows(logits, labels));
}

Tensor attenuated_ce_loss(const Tensor& logits, const Tensor& s,
                          const std::vector<int>& labels, int t_softmax, RngStream& rng,
                          double alpha_elu) {
  if (t_softmax < 1)
    throw ConfigError("attenuated_ce_loss: t_softmax must be >= 1, got " +
                      std::to_string(t_softmax));
  if (logits.shape().size() != 2)
    throw DimensionError("attenuated_ce_loss expects logits (B,C), got " +
                         shape_str(logits.shape()));
  const int batch = logits.shape()[0], classes = logits.shape()[1];
  if (s.size() != batch)
    throw DimensionError("attenuated_ce_loss: one log-variance per sample expected");
  check_finite(logits, "logits");
  check_log_variance(s);

  Tensor cel = cross_entropy_rows(logits, labels);
  Tensor sigma = exp_t(scale(s, 0.5));

  Tensor elu_sum;
  for (int t = 0; t < t_softmax; ++t) {
    Tensor eps = Tensor::zeros({batch, classes});
    for (auto& e : eps.v()) e = rng.normal();
    Tensor corrupted = add(logits, mul_colvec(eps, sigma));
    Tensor cel_t = cross_entropy_rows(corrupted, labels);
    Tensor e = elu(sub(cel_t, cel), alpha_elu);
    elu_sum = t == 0 ? e : add(elu_sum, e);
  }
  Tensor attenuation = add_scalar(scale(elu_sum, 1.0 / t_softmax), 1.0);
  // exp(sigma^2) - 1, with sigma^2 = exp(s); zero at sigma = 0
  Tensor regularizer = add_scalar(exp_t(exp_t(s)), -1.0);
  return reduce_mean(add(mul(cel, attenuation), regularizer));
}

}  // namespace ppmu
