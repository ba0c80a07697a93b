#pragma once

#include <span>
#include <vector>

#include "ota/tensor.hpp"

namespace ota {

inline constexpr double kProbFloor = 1e-12;

// Row-stochastic matrix: each row non-negative and summing to 1 within 1e-9.
class Probs {
 public:
  Probs() = default;
  // Validates the invariant; throws ConfigError otherwise.
  explicit Probs(Tensor values);

  const Tensor& values() const noexcept { return values_; }
  std::size_t rows() const { return values_.rows(); }
  std::size_t cols() const { return values_.cols(); }
  double operator()(std::size_t r, std::size_t c) const { return values_(r, c); }
  std::span<const double> row(std::size_t r) const { return values_.row(r); }

  // Argmax per row; ties go to the lowest index.
  std::vector<int> argmax() const;

 private:
  Tensor values_;
};

struct LossValue {
  double value = 0.0;
  // Per-sample contributions whose mean is `value`; empty for losses that do
  // not decompose over samples (diversity).
  std::vector<double> per_sample;
  // d(value)/d(input), same shape as the loss input.
  Tensor grad;
  // Number of probabilities clamped to kProbFloor where the target weight was positive.
  std::size_t clamped = 0;
};

struct PairLossValue {
  double value = 0.0;
  std::vector<double> per_sample;
  Tensor grad_queries;
  Tensor grad_keys;
};

// Max-shifted softmax; throws NumericalError on non-finite logits.
Probs softmax(const Tensor& logits);
// Chains d(loss)/d(probs) back to d(loss)/d(logits).
Tensor softmax_backward(const Probs& probs, const Tensor& dprobs);

// -sum_c q_c ln p_c with q = (1 - eps) onehot(target) + eps / C.
LossValue cross_entropy(const Probs& probs, std::span<const int> targets, double smoothing = 0.0);
// Shannon entropy per row, natural log.
LossValue entropy_loss(const Probs& probs);
// KL(mean_row(p) || uniform) - ln C, i.e. the negative entropy of the batch marginal.
LossValue diversity_loss(const Probs& probs);
LossValue infomax_loss(const Probs& probs, double entropy_weight = 1.0,
                       double diversity_weight = 1.0);
// sum_c t_c (ln t_c - ln s_c) per row; no gradient flows to the teacher.
LossValue kl_soft_loss(const Probs& student, const Probs& teacher);
// In-batch InfoNCE: rows are L2-normalised, then each query i is classified
// against all keys with key i as the positive, logits scaled by 1/temperature.
PairLossValue infonce_loss(const Tensor& queries, const Tensor& keys, double temperature);

}  // namespace ota
