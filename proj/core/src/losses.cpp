#include "ota/losses.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ota/error.hpp"

namespace ota {

namespace {

double clamp_prob(double p) { return std::max(p, kProbFloor); }

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void require_same_shape(const Probs& a, const Probs& b) {
  if (a.values().shape() != b.values().shape()) {
    throw ShapeError(fmt::format("probability shapes differ: {} vs {}", a.values().shape_string(),
                                 b.values().shape_string()));
  }
}

}  // namespace

Probs::Probs(Tensor values) : values_(std::move(values)) {
  if (values_.rank() != 2) throw ShapeError("probabilities must be a matrix");
  for (std::size_t r = 0; r < values_.rows(); ++r) {
    double s = 0.0;
    for (double p : values_.row(r)) {
      if (!(p >= 0.0)) throw ConfigError("probabilities must be non-negative");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw ConfigError(fmt::format("probability row {} sums to {}", r, s));
    }
  }
}

std::vector<int> Probs::argmax() const {
  std::vector<int> out(rows());
  for (std::size_t r = 0; r < rows(); ++r) {
    const auto row = values_.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Probs softmax(const Tensor& logits) {
  if (!logits.all_finite()) throw NumericalError("softmax input contains non-finite values");
  Tensor p = Tensor::matrix(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    auto out = p.row(r);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      out[c] = std::exp(z[c] - m);
      s += out[c];
    }
    for (double& v : out) v /= s;
  }
  return Probs(std::move(p));
}

Tensor softmax_backward(const Probs& probs, const Tensor& dprobs) {
  if (probs.values().shape() != dprobs.shape()) throw ShapeError("softmax_backward shape mismatch");
  Tensor dz = Tensor::matrix(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto p = probs.row(r);
    const auto g = dprobs.row(r);
    double dot = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) dot += p[c] * g[c];
    auto out = dz.row(r);
    for (std::size_t c = 0; c < p.size(); ++c) out[c] = p[c] * (g[c] - dot);
  }
  return dz;
}

LossValue cross_entropy(const Probs& probs, std::span<const int> targets, double smoothing) {
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  if (targets.size() != n) throw ShapeError("cross_entropy: one target per row required");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw ConfigError(fmt::format("label smoothing {} outside [0, 1)", smoothing));
  }
  LossValue out;
  out.per_sample.resize(n);
  out.grad = Tensor::matrix(n, k);
  const double off = smoothing / static_cast<double>(k);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw ConfigError(fmt::format("target {} out of range [0, {})", t, k));
    }
    double loss = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double q = (static_cast<std::size_t>(t) == c ? 1.0 - smoothing : 0.0) + off;
      if (q == 0.0) continue;
      if (probs(r, c) < kProbFloor) ++out.clamped;
      const double p = clamp_prob(probs(r, c));
      loss -= q * std::log(p);
      out.grad(r, c) = -q / p * inv_n;
    }
    out.per_sample[r] = loss;
  }
  out.value = mean(out.per_sample);
  return out;
}

LossValue entropy_loss(const Probs& probs) {
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  LossValue out;
  out.per_sample.resize(n);
  out.grad = Tensor::matrix(n, k);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    double h = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double p = probs(r, c);
      const double lp = std::log(clamp_prob(p));
      h -= p * lp;
      out.grad(r, c) = -(lp + 1.0) * inv_n;
    }
    out.per_sample[r] = h;
  }
  out.value = mean(out.per_sample);
  return out;
}

LossValue diversity_loss(const Probs& probs) {
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  if (n == 0) throw ShapeError("diversity_loss needs at least one row");
  std::vector<double> marginal(k, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < k; ++c) marginal[c] += probs(r, c);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  LossValue out;
  std::vector<double> dmarginal(k);
  for (std::size_t c = 0; c < k; ++c) {
    marginal[c] *= inv_n;
    const double lp = std::log(clamp_prob(marginal[c]));
    out.value += marginal[c] * lp;
    dmarginal[c] = (lp + 1.0) * inv_n;
  }
  out.grad = Tensor::matrix(n, k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < k; ++c) out.grad(r, c) = dmarginal[c];
  }
  return out;
}

LossValue infomax_loss(const Probs& probs, double entropy_weight, double diversity_weight) {
  LossValue ent = entropy_loss(probs);
  const LossValue div = diversity_loss(probs);
  LossValue out;
  out.value = entropy_weight * ent.value + diversity_weight * div.value;
  out.per_sample = std::move(ent.per_sample);
  for (double& v : out.per_sample) v = entropy_weight * v + diversity_weight * div.value;
  out.grad = std::move(ent.grad);
  out.grad.mat() = entropy_weight * out.grad.mat() + diversity_weight * div.grad.mat();
  return out;
}

LossValue kl_soft_loss(const Probs& student, const Probs& teacher) {
  require_same_shape(student, teacher);
  const std::size_t n = student.rows();
  const std::size_t k = student.cols();
  LossValue out;
  out.per_sample.resize(n);
  out.grad = Tensor::matrix(n, k);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    double kl = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double t = teacher(r, c);
      if (t == 0.0) continue;
      if (student(r, c) < kProbFloor) ++out.clamped;
      const double s = clamp_prob(student(r, c));
      kl += t * (std::log(clamp_prob(t)) - std::log(s));
      out.grad(r, c) = -t / s * inv_n;
    }
    out.per_sample[r] = kl;
  }
  out.value = mean(out.per_sample);
  return out;
}

PairLossValue infonce_loss(const Tensor& queries, const Tensor& keys, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("InfoNCE temperature must be positive");
  if (queries.shape() != keys.shape() || queries.rank() != 2) {
    throw ShapeError("InfoNCE queries and keys must be matrices of equal shape");
  }
  const std::size_t n = queries.rows();
  const std::size_t e = queries.cols();
  if (n < 2) throw ShapeError("InfoNCE needs at least two rows");

  auto normalise = [e](const Tensor& x, std::vector<double>& norms) {
    Tensor out = x;
    norms.resize(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double s = 0.0;
      for (double v : x.row(r)) s += v * v;
      const double norm = std::sqrt(s);
      if (!(norm > 0.0)) throw NumericalError("InfoNCE input row has zero norm");
      norms[r] = norm;
      for (std::size_t c = 0; c < e; ++c) out(r, c) /= norm;
    }
    return out;
  };
  std::vector<double> qn, kn;
  const Tensor q = normalise(queries, qn);
  const Tensor k = normalise(keys, kn);

  RowMatrix sim = q.mat() * k.mat().transpose() / temperature;
  PairLossValue out;
  out.per_sample.resize(n);
  RowMatrix dsim(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    const double m = sim.row(i).maxCoeff();
    const auto ex = (sim.row(i).array() - m).exp();
    const double z = ex.sum();
    out.per_sample[static_cast<std::size_t>(i)] = -(sim(i, i) - m - std::log(z));
    dsim.row(i) = ex / z * inv_n;
    dsim(i, i) -= inv_n;
  }
  out.value = mean(out.per_sample);

  // Through the similarity matrix to the normalised rows, then through the
  // normalisation: d x = (d x_hat - x_hat <x_hat, d x_hat>) / |x|.
  RowMatrix dq = dsim * k.mat() / temperature;
  RowMatrix dk = dsim.transpose() * q.mat() / temperature;
  auto unnormalise = [n](const Tensor& xhat, const RowMatrix& dxhat,
                         const std::vector<double>& norms) {
    Tensor dx = Tensor::matrix(n, xhat.cols());
    for (std::size_t r = 0; r < n; ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      const double dot = xhat.mat().row(ri).dot(dxhat.row(ri));
      dx.mat().row(ri) = (dxhat.row(ri) - dot * xhat.mat().row(ri)) / norms[r];
    }
    return dx;
  };
  out.grad_queries = unnormalise(q, dq, qn);
  out.grad_keys = unnormalise(k, dk, kn);
  return out;
}

}  // namespace ota
