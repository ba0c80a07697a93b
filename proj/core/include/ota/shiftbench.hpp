#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ota/rng.hpp"
#include "ota/tensor.hpp"

namespace ota {

// Class clusters on a ring in a 2-D latent plane, plus a per-class signature
// offset in `signature_dims` further latent coordinates (mutually orthogonal
// when signature_dims >= num_classes). The D-dimensional
// latent is embedded by a fixed random orthogonal map drawn from
// `geometry_seed`; per-sample Gaussian noise comes from `sample_seed`.
struct GeneratorSpec {
  std::size_t num_classes = 10;
  std::size_t dim = 32;
  std::size_t n_per_class = 500;
  double ring_radius = 1.0;
  double cluster_sigma = 0.25;
  std::size_t signature_dims = 10;
  double signature_scale = 0.7;
  std::uint64_t geometry_seed = 0;
  std::uint64_t sample_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j);
};

enum class ShiftKind { none, rotation, scale, translate, composite };

std::string to_string(ShiftKind kind);
ShiftKind parse_shift_kind(const std::string& text);

// Magnitude units: degrees for rotation, relative radius change for scale,
// ring radii for translate. Magnitude 0 is the identity for every kind.
struct ShiftSpec {
  ShiftKind kind = ShiftKind::none;
  double magnitude = 0.0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ShiftSpec from_json(const nlohmann::json& j);
};

struct ImbalanceSpec {
  double imbalance_ratio = 1.0;
  std::uint64_t seed = 0;
};

enum class Bucket { many, medium, few };
std::string to_string(Bucket b);

// Many/medium/few cutoffs scaled from 100 and 20 samples at a 1280-sample head.
struct ClassBuckets {
  std::vector<std::size_t> train_counts;
  std::size_t many_above = 0;
  std::size_t few_below = 0;

  static ClassBuckets from_counts(std::vector<std::size_t> counts);
  Bucket of(std::size_t cls) const;

  nlohmann::json to_json() const;
  static ClassBuckets from_json(const nlohmann::json& j);
};

enum class Domain { source, target };

// Feature rows of a dataset with no way to reach its labels. Adaptation code
// only ever receives this view. Non-owning: the viewed tensor must outlive it.
class UnlabeledView {
 public:
  UnlabeledView(const Tensor& features, std::size_t num_classes)
      : features_(&features), num_classes_(num_classes) {}

  const Tensor& features() const noexcept { return *features_; }
  std::size_t size() const { return features_->rows(); }
  std::size_t dim() const { return features_->cols(); }
  std::size_t num_classes() const noexcept { return num_classes_; }

 private:
  const Tensor* features_;
  std::size_t num_classes_;
};

struct Dataset {
  Tensor features;
  std::optional<std::vector<int>> labels;
  std::size_t num_classes = 0;
  Domain domain = Domain::source;
  ShiftSpec shift;
  std::vector<std::size_t> class_counts;
  // Generator metadata; present for generated data, needed by apply_shift.
  std::optional<GeneratorSpec> geometry;
  std::optional<Tensor> latent;
  // Present when the data was long-tail subsampled.
  std::optional<ClassBuckets> buckets;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool has_labels() const { return labels.has_value(); }
  UnlabeledView unlabeled() const { return UnlabeledView(features, num_classes); }
  const std::vector<int>& label_values() const;

  void validate() const;
};

Dataset generate(const GeneratorSpec& spec);
Dataset apply_shift(const Dataset& src, const ShiftSpec& shift);
// Class c keeps round(n_max * ratio^(-c / (C - 1))) of its rows.
Dataset subsample_longtail(const Dataset& src, const ImbalanceSpec& imb);
std::vector<std::size_t> longtail_counts(std::size_t n_max, std::size_t num_classes, double ratio);

struct AugmentationPolicy {
  double weak_sigma = 0.02;
  double strong_sigma = 0.10;
  double dropout = 0.2;
  double scale_lo = 0.8;
  double scale_hi = 1.25;

  static AugmentationPolicy identity() { return {0.0, 0.0, 0.0, 1.0, 1.0}; }
  void validate() const;
  nlohmann::json to_json() const;
  static AugmentationPolicy from_json(const nlohmann::json& j);
};

enum class AugmentMode { weak, strong };

// weak: x + N(0, weak_sigma^2). strong: x + N(0, strong_sigma^2), each feature
// zeroed with probability `dropout`, then each row scaled by U(scale_lo, scale_hi).
Tensor augment(const Tensor& x, const AugmentationPolicy& policy, AugmentMode mode, Rng& rng);

// File layout: "OTAD", u32 version, u64 header length, UTF-8 JSON header,
// N*D little-endian f64 features, then N u32 labels when has_labels.
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace ota
