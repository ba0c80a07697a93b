#include "ota/layers.hpp"

#include <cmath>

#include <fmt/format.h>

#include "ota/error.hpp"

namespace ota {

Dense::Dense(std::size_t in_dim, std::size_t out_dim)
    : weight(Tensor::matrix(out_dim, in_dim)), bias(Tensor({out_dim})) {}

Dense Dense::initialized(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
  Dense d(in_dim, out_dim);
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  for (double& w : d.weight.data()) w = rng.uniform(-limit, limit);
  return d;
}

Tensor Dense::forward(const Tensor& x, Mode /*mode*/) {
  if (x.cols() != in_dim()) {
    throw ShapeError(fmt::format("dense layer expects width {}, got {}", in_dim(), x.cols()));
  }
  Tensor y = Tensor::matrix(x.rows(), out_dim());
  y.mat().noalias() = x.mat() * weight.mat().transpose();
  y.mat().rowwise() += bias.mat().row(0);
  input_ = x;
  cached_ = true;
  return y;
}

Tensor Dense::backward(const Tensor& dy) {
  if (!cached_) throw ConfigError("dense backward called without a recorded forward");
  weight.grad_mat().noalias() = dy.mat().transpose() * input_.mat();
  bias.grad_mat().row(0) = dy.mat().colwise().sum();
  Tensor dx = Tensor::matrix(dy.rows(), in_dim());
  dx.mat().noalias() = dy.mat() * weight.mat();
  return dx;
}

void Dense::clear_cache() noexcept {
  input_ = Tensor();
  cached_ = false;
}

BatchNorm::BatchNorm(std::size_t dim)
    : gamma(Tensor({dim}, 1.0)),
      beta(Tensor({dim}, 0.0)),
      running_mean(Tensor({dim}, 0.0)),
      running_var(Tensor({dim}, 1.0)) {}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) {
  const std::size_t n = x.rows();
  const std::size_t d = dim();
  if (x.cols() != d) {
    throw ShapeError(fmt::format("batchnorm expects width {}, got {}", d, x.cols()));
  }
  std::vector<double> mean(d), var(d);
  if (mode == Mode::train) {
    if (n < 2) throw ShapeError("batchnorm in train mode needs a batch of at least 2 rows");
    const auto xm = x.mat();
    for (std::size_t j = 0; j < d; ++j) {
      const auto col = xm.col(static_cast<Eigen::Index>(j));
      const double mu = col.mean();
      const double ss = (col.array() - mu).square().sum();
      mean[j] = mu;
      var[j] = ss / static_cast<double>(n);
      running_mean[j] = (1.0 - kMomentum) * running_mean[j] + kMomentum * mu;
      running_var[j] =
          (1.0 - kMomentum) * running_var[j] + kMomentum * ss / static_cast<double>(n - 1);
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) {
      mean[j] = running_mean[j];
      var[j] = running_var[j];
    }
  }
  inv_std_.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) inv_std_[j] = 1.0 / std::sqrt(var[j] + kEps);

  xhat_ = Tensor::matrix(n, d);
  Tensor y = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (x(i, j) - mean[j]) * inv_std_[j];
      xhat_(i, j) = h;
      y(i, j) = gamma[j] * h + beta[j];
    }
  }
  batch_stats_ = mode == Mode::train;
  cached_ = true;
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  if (!cached_) throw ConfigError("batchnorm backward called without a recorded forward");
  const std::size_t n = dy.rows();
  const std::size_t d = dim();
  gamma.ensure_grad();
  beta.ensure_grad();
  Tensor dx = Tensor::matrix(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_dy += dy(i, j);
      sum_dy_xhat += dy(i, j) * xhat_(i, j);
    }
    gamma.grad()[j] = sum_dy_xhat;
    beta.grad()[j] = sum_dy;
    const double scale = gamma[j] * inv_std_[j];
    if (batch_stats_) {
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        dx(i, j) = scale * (dy(i, j) - inv_n * sum_dy - xhat_(i, j) * inv_n * sum_dy_xhat);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) dx(i, j) = scale * dy(i, j);
    }
  }
  return dx;
}

void BatchNorm::clear_cache() noexcept {
  xhat_ = Tensor();
  inv_std_.clear();
  cached_ = false;
}

Tensor Relu::forward(const Tensor& x, Mode /*mode*/) {
  if (width != 0 && x.cols() != width) {
    throw ShapeError(fmt::format("relu expects width {}, got {}", width, x.cols()));
  }
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  input_ = x;
  cached_ = true;
  return y;
}

Tensor Relu::backward(const Tensor& dy) {
  if (!cached_) throw ConfigError("relu backward called without a recorded forward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (input_[i] <= 0.0) dx[i] = 0.0;
  }
  return dx;
}

void Relu::clear_cache() noexcept {
  input_ = Tensor();
  cached_ = false;
}

}  // namespace ota
