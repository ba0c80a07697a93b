#pragma once

#include <variant>
#include <vector>

#include "ota/rng.hpp"
#include "ota/tensor.hpp"

namespace ota {

enum class Mode { train, eval };

// y = x W^T + b with W of shape (out, in).
struct Dense {
  Tensor weight;
  Tensor bias;

  Dense() = default;
  Dense(std::size_t in_dim, std::size_t out_dim);
  // Uniform in +-sqrt(6 / (fan_in + fan_out)), zero bias.
  static Dense initialized(std::size_t in_dim, std::size_t out_dim, Rng& rng);

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  bool has_cache() const noexcept { return cached_; }
  void clear_cache() noexcept;

 private:
  Tensor input_;
  bool cached_ = false;
};

// Per-feature batch normalization. Train mode normalizes with the (biased)
// batch statistics and folds the batch mean and unbiased variance into the
// running estimates; eval mode uses the running estimates only.
struct BatchNorm {
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t dim);

  std::size_t dim() const { return gamma.size(); }

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  bool has_cache() const noexcept { return cached_; }
  void clear_cache() noexcept;

 private:
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool batch_stats_ = false;
  bool cached_ = false;
};

struct Relu {
  std::size_t width = 0;

  Relu() = default;
  explicit Relu(std::size_t w) : width(w) {}

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  bool has_cache() const noexcept { return cached_; }
  void clear_cache() noexcept;

 private:
  Tensor input_;
  bool cached_ = false;
};

using Layer = std::variant<Dense, BatchNorm, Relu>;

}  // namespace ota
