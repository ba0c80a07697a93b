#include "ota/shiftbench.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/QR>
#include <fmt/format.h>

#include "ota/error.hpp"

namespace ota {

namespace {

// Random orthogonal D x D matrix (Q of a Gaussian matrix, sign-fixed).
RowMatrix embedding_matrix(const GeneratorSpec& spec) {
  Rng rng = Rng(spec.geometry_seed).substream("embedding");
  const auto d = static_cast<Eigen::Index>(spec.dim);
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) g(r, c) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd rmat = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < d; ++c) {
    if (rmat(c, c) < 0.0) q.col(c) = -q.col(c);
  }
  return q;
}

std::size_t signature_width(const GeneratorSpec& spec) {
  return std::min(spec.signature_dims, spec.dim - 2);
}

std::vector<std::vector<double>> class_centers(const GeneratorSpec& spec) {
  Rng rng = Rng(spec.geometry_seed).substream("signatures");
  const std::size_t s = signature_width(spec);
  std::vector<std::vector<double>> centers(spec.num_classes, std::vector<double>(spec.dim, 0.0));
  const auto rows = static_cast<Eigen::Index>(spec.num_classes);
  const auto cols = static_cast<Eigen::Index>(s);
  Eigen::MatrixXd sig(rows, cols);
  for (Eigen::Index c = 0; c < rows; ++c) {
    for (Eigen::Index j = 0; j < cols; ++j) sig(c, j) = rng.normal();
  }
  if (cols >= rows) {
    // Enough room for mutually orthogonal signatures of equal length.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(sig.transpose());
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(cols, rows);
    sig = q.transpose() * spec.signature_scale;
  } else if (cols > 0) {
    sig *= spec.signature_scale / std::sqrt(static_cast<double>(s));
  }
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const double theta =
        2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(spec.num_classes);
    centers[c][0] = spec.ring_radius * std::cos(theta);
    centers[c][1] = spec.ring_radius * std::sin(theta);
    for (std::size_t j = 0; j < s; ++j) {
      centers[c][2 + j] = sig(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j));
    }
  }
  return centers;
}

Tensor embed(const Tensor& latent, const GeneratorSpec& spec) {
  const RowMatrix q = embedding_matrix(spec);
  Tensor features = Tensor::matrix(latent.rows(), latent.cols());
  features.mat().noalias() = latent.mat() * q.transpose();
  return features;
}

std::vector<std::size_t> count_labels(const std::vector<int>& labels, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

}  // namespace

void GeneratorSpec::validate() const {
  if (num_classes < 2) throw ConfigError("generator needs at least 2 classes");
  if (dim < 2) throw ConfigError("generator needs at least 2 feature dimensions");
  if (n_per_class < 1) throw ConfigError("generator needs at least 1 sample per class");
  if (!(cluster_sigma >= 0.0) || !(ring_radius > 0.0) || !(signature_scale >= 0.0)) {
    throw ConfigError("generator geometry parameters must be non-negative (radius positive)");
  }
}

nlohmann::json GeneratorSpec::to_json() const {
  return {{"num_classes", num_classes},       {"dim", dim},
          {"n_per_class", n_per_class},       {"ring_radius", ring_radius},
          {"cluster_sigma", cluster_sigma},   {"signature_dims", signature_dims},
          {"signature_scale", signature_scale}, {"geometry_seed", geometry_seed},
          {"sample_seed", sample_seed}};
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  s.num_classes = j.value("num_classes", s.num_classes);
  s.dim = j.value("dim", s.dim);
  s.n_per_class = j.value("n_per_class", s.n_per_class);
  s.ring_radius = j.value("ring_radius", s.ring_radius);
  s.cluster_sigma = j.value("cluster_sigma", s.cluster_sigma);
  s.signature_dims = j.value("signature_dims", s.signature_dims);
  s.signature_scale = j.value("signature_scale", s.signature_scale);
  s.geometry_seed = j.value("geometry_seed", s.geometry_seed);
  s.sample_seed = j.value("sample_seed", s.sample_seed);
  return s;
}

std::string to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::none: return "none";
    case ShiftKind::rotation: return "rotation";
    case ShiftKind::scale: return "scale";
    case ShiftKind::translate: return "translate";
    case ShiftKind::composite: return "composite";
  }
  return "none";
}

ShiftKind parse_shift_kind(const std::string& text) {
  if (text == "none") return ShiftKind::none;
  if (text == "rotation") return ShiftKind::rotation;
  if (text == "scale") return ShiftKind::scale;
  if (text == "translate") return ShiftKind::translate;
  if (text == "composite") return ShiftKind::composite;
  throw ConfigError(fmt::format("unknown shift kind '{}'", text));
}

nlohmann::json ShiftSpec::to_json() const {
  return {{"kind", to_string(kind)}, {"magnitude", magnitude}, {"seed", seed}};
}

ShiftSpec ShiftSpec::from_json(const nlohmann::json& j) {
  ShiftSpec s;
  s.kind = parse_shift_kind(j.value("kind", std::string("none")));
  s.magnitude = j.value("magnitude", 0.0);
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

std::string to_string(Bucket b) {
  switch (b) {
    case Bucket::many: return "many";
    case Bucket::medium: return "medium";
    case Bucket::few: return "few";
  }
  return "many";
}

ClassBuckets ClassBuckets::from_counts(std::vector<std::size_t> counts) {
  ClassBuckets b;
  const std::size_t n_max = counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
  b.many_above = static_cast<std::size_t>(std::ceil(static_cast<double>(n_max) * 100.0 / 1280.0));
  b.few_below = static_cast<std::size_t>(std::ceil(static_cast<double>(n_max) * 20.0 / 1280.0));
  b.train_counts = std::move(counts);
  return b;
}

Bucket ClassBuckets::of(std::size_t cls) const {
  const std::size_t n = train_counts.at(cls);
  if (n > many_above) return Bucket::many;
  if (n < few_below) return Bucket::few;
  return Bucket::medium;
}

nlohmann::json ClassBuckets::to_json() const {
  return {{"train_counts", train_counts}, {"many_above", many_above}, {"few_below", few_below}};
}

ClassBuckets ClassBuckets::from_json(const nlohmann::json& j) {
  ClassBuckets b;
  b.train_counts = j.at("train_counts").get<std::vector<std::size_t>>();
  b.many_above = j.at("many_above").get<std::size_t>();
  b.few_below = j.at("few_below").get<std::size_t>();
  return b;
}

const std::vector<int>& Dataset::label_values() const {
  if (!labels) throw ConfigError("dataset has no labels");
  return *labels;
}

void Dataset::validate() const {
  if (features.rank() != 2 || features.rows() < 1) throw ConfigError("dataset must have N >= 1 rows");
  if (num_classes < 2) throw ConfigError("dataset must have at least 2 classes");
  if (labels) {
    if (labels->size() != features.rows()) throw ConfigError("label count differs from row count");
    for (int l : *labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
        throw ConfigError(fmt::format("label {} out of range [0, {})", l, num_classes));
      }
    }
    if (class_counts != count_labels(*labels, num_classes)) {
      throw ConfigError("recorded class counts disagree with labels");
    }
  }
}

Dataset generate(const GeneratorSpec& spec) {
  spec.validate();
  const auto centers = class_centers(spec);
  Rng rng = Rng(spec.sample_seed).substream("samples");
  const std::size_t n = spec.num_classes * spec.n_per_class;
  Tensor latent = Tensor::matrix(n, spec.dim);
  std::vector<int> labels(n);
  std::size_t r = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.n_per_class; ++i, ++r) {
      labels[r] = static_cast<int>(c);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        latent(r, j) = centers[c][j] + spec.cluster_sigma * rng.normal();
      }
    }
  }
  Dataset ds;
  ds.features = embed(latent, spec);
  ds.class_counts = count_labels(labels, spec.num_classes);
  ds.labels = std::move(labels);
  ds.num_classes = spec.num_classes;
  ds.domain = Domain::source;
  ds.geometry = spec;
  ds.latent = std::move(latent);
  return ds;
}

Dataset apply_shift(const Dataset& src, const ShiftSpec& shift) {
  if (!src.geometry) throw ConfigError("apply_shift needs generator geometry metadata");
  const GeneratorSpec& spec = *src.geometry;
  Tensor latent;
  if (src.latent) {
    latent = *src.latent;
  } else {
    // Embedding is orthogonal, so the latent coordinates are recoverable.
    const RowMatrix q = embedding_matrix(spec);
    latent = Tensor::matrix(src.size(), src.dim());
    latent.mat().noalias() = src.features.mat() * q;
  }

  auto rotate = [&latent](double degrees) {
    const double a = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(a);
    const double s = std::sin(a);
    for (std::size_t r = 0; r < latent.rows(); ++r) {
      const double x = latent(r, 0);
      const double y = latent(r, 1);
      latent(r, 0) = c * x - s * y;
      latent(r, 1) = s * x + c * y;
    }
  };
  auto scale = [&latent](double factor) {
    for (std::size_t r = 0; r < latent.rows(); ++r) {
      latent(r, 0) *= factor;
      latent(r, 1) *= factor;
    }
  };
  auto translate = [&latent, &shift, &spec](double distance) {
    Rng rng = Rng(shift.seed).substream("translate");
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dx = distance * spec.ring_radius * std::cos(a);
    const double dy = distance * spec.ring_radius * std::sin(a);
    for (std::size_t r = 0; r < latent.rows(); ++r) {
      latent(r, 0) += dx;
      latent(r, 1) += dy;
    }
  };

  const double m = shift.magnitude;
  switch (shift.kind) {
    case ShiftKind::none: break;
    case ShiftKind::rotation: rotate(m); break;
    case ShiftKind::scale: scale(1.0 + m); break;
    case ShiftKind::translate: translate(m); break;
    case ShiftKind::composite:
      rotate(m);
      scale(1.0 + m / 180.0);
      translate(m / 90.0);
      break;
  }

  Dataset out;
  if (shift.kind == ShiftKind::none || m == 0.0) {
    out.features = src.features;
  } else {
    out.features = embed(latent, spec);
  }
  out.labels = src.labels;
  out.num_classes = src.num_classes;
  out.class_counts = src.class_counts;
  out.domain = Domain::target;
  out.shift = shift;
  out.geometry = src.geometry;
  out.latent = std::move(latent);
  out.buckets = src.buckets;
  return out;
}

std::vector<std::size_t> longtail_counts(std::size_t n_max, std::size_t num_classes, double ratio) {
  if (!(ratio >= 1.0)) throw ConfigError(fmt::format("imbalance ratio {} must be >= 1", ratio));
  if (num_classes < 2) throw ConfigError("long-tail subsampling needs at least 2 classes");
  std::vector<std::size_t> counts(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double e = -static_cast<double>(c) / static_cast<double>(num_classes - 1);
    counts[c] = static_cast<std::size_t>(std::llround(static_cast<double>(n_max) * std::pow(ratio, e)));
    if (counts[c] == 0) {
      throw ConfigError(
          fmt::format("imbalance ratio {} leaves class {} with no samples", ratio, c));
    }
  }
  return counts;
}

Dataset subsample_longtail(const Dataset& src, const ImbalanceSpec& imb) {
  const auto& labels = src.label_values();
  const std::size_t n_max = *std::min_element(src.class_counts.begin(), src.class_counts.end());
  const auto keep = longtail_counts(n_max, src.num_classes, imb.imbalance_ratio);

  std::vector<std::vector<std::size_t>> rows_of(src.num_classes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    rows_of[static_cast<std::size_t>(labels[r])].push_back(r);
  }
  Rng rng = Rng(imb.seed).substream("longtail");
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < src.num_classes; ++c) {
    auto rows = rows_of[c];
    std::shuffle(rows.begin(), rows.end(), rng.engine());
    rows.resize(keep[c]);
    kept.insert(kept.end(), rows.begin(), rows.end());
  }
  std::sort(kept.begin(), kept.end());

  Dataset out;
  out.features = src.features.gather_rows(kept);
  std::vector<int> new_labels(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) new_labels[i] = labels[kept[i]];
  out.labels = std::move(new_labels);
  out.num_classes = src.num_classes;
  out.domain = src.domain;
  out.shift = src.shift;
  out.class_counts = count_labels(*out.labels, out.num_classes);
  out.geometry = src.geometry;
  if (src.latent) out.latent = src.latent->gather_rows(kept);
  out.buckets = ClassBuckets::from_counts(out.class_counts);
  return out;
}

void AugmentationPolicy::validate() const {
  if (!(weak_sigma >= 0.0) || !(strong_sigma >= 0.0)) {
    throw ConfigError("augmentation sigmas must be non-negative");
  }
  if (weak_sigma > strong_sigma) throw ConfigError("weak sigma must not exceed strong sigma");
  if (!(dropout >= 0.0 && dropout <= 1.0)) throw ConfigError("dropout must lie in [0, 1]");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) {
    throw ConfigError("scale jitter range must satisfy 0 < lo <= hi");
  }
}

nlohmann::json AugmentationPolicy::to_json() const {
  return {{"weak_sigma", weak_sigma}, {"strong_sigma", strong_sigma}, {"dropout", dropout},
          {"scale_lo", scale_lo},     {"scale_hi", scale_hi}};
}

AugmentationPolicy AugmentationPolicy::from_json(const nlohmann::json& j) {
  AugmentationPolicy p;
  p.weak_sigma = j.value("weak_sigma", p.weak_sigma);
  p.strong_sigma = j.value("strong_sigma", p.strong_sigma);
  p.dropout = j.value("dropout", p.dropout);
  p.scale_lo = j.value("scale_lo", p.scale_lo);
  p.scale_hi = j.value("scale_hi", p.scale_hi);
  p.validate();
  return p;
}

Tensor augment(const Tensor& x, const AugmentationPolicy& policy, AugmentMode mode, Rng& rng) {
  policy.validate();
  Tensor out = x;
  if (mode == AugmentMode::weak) {
    if (policy.weak_sigma > 0.0) {
      for (double& v : out.data()) v += policy.weak_sigma * rng.normal();
    }
    return out;
  }
  const std::size_t d = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    if (policy.strong_sigma > 0.0) {
      for (double& v : row) v += policy.strong_sigma * rng.normal();
    }
    if (policy.dropout > 0.0) {
      for (std::size_t j = 0; j < d; ++j) {
        if (rng.bernoulli(policy.dropout)) row[j] = 0.0;
      }
    }
    if (policy.scale_lo != 1.0 || policy.scale_hi != 1.0) {
      const double s = policy.scale_lo == policy.scale_hi
                           ? policy.scale_lo
                           : rng.uniform(policy.scale_lo, policy.scale_hi);
      for (double& v : row) v *= s;
    }
  }
  return out;
}

}  // namespace ota
