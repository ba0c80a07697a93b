#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ota/layers.hpp"

namespace ota {

// Dense/batchnorm/relu blocks followed by a dense classifier.
// Text form: "32-64-64-10" is input 32, hidden widths 64 and 64, 10 classes.
struct ArchSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t num_classes = 0;
  bool batchnorm = true;

  static ArchSpec parse(std::string_view text);
  std::string to_string() const;
  std::size_t feature_dim() const { return hidden.empty() ? input_dim : hidden.back(); }

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

enum class ParamRole { weight, bias, gamma, beta };

struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
  ParamRole role = ParamRole::weight;
  std::size_t layer = 0;
  bool classifier = false;

  // Only dense weights receive weight decay.
  bool decays() const noexcept { return role == ParamRole::weight; }
};

struct NamedTensor {
  std::string name;
  const Tensor* tensor = nullptr;
};

// Ordered layer stack. With a classifier, the last layer is the dense
// classification layer; without one the stack is a backbone (a feature
// extractor, or an encoder plus projection head).
class Network {
 public:
  Network() = default;
  Network(std::vector<Layer> layers, bool has_classifier);

  static Network build(const ArchSpec& arch, Rng& rng);
  static Network build_backbone(const ArchSpec& arch, Rng& rng);
  // Layers of `front` followed by layers of `back`; the result takes its
  // classifier flag from `back`.
  static Network concat(const Network& front, const Network& back);

  Tensor forward(const Tensor& batch);
  // Output of the last backbone layer (everything before the classifier).
  Tensor features(const Tensor& batch);
  // Overwrites every parameter gradient and returns d(loss)/d(input).
  Tensor backward(const Tensor& upstream);

  void set_mode(Mode mode) noexcept { mode_ = mode; }
  Mode mode() const noexcept { return mode_; }

  bool has_classifier() const noexcept { return has_classifier_; }
  std::size_t classifier_index() const;
  const Dense& classifier() const;
  Dense& classifier();

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t feature_dim() const;

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  // Layers [0, classifier_index) as a classifier-free network.
  Network backbone() const;
  Network slice(std::size_t begin, std::size_t end, bool has_classifier) const;

  // Trainable tensors (dense weight/bias, batchnorm gamma/beta).
  std::vector<ParamRef> parameters();
  // Every persisted tensor, running statistics included, in a stable order.
  std::vector<NamedTensor> state() const;
  std::vector<Tensor*> mutable_state();

  std::size_t parameter_count() const;

  nlohmann::json architecture() const;
  static Network from_architecture(const nlohmann::json& arch, bool has_classifier);
  bool same_architecture(const Network& other) const;

  std::string fingerprint() const;
  std::string classifier_fingerprint() const;
  std::string backbone_fingerprint() const;

  void clear_caches() noexcept;

 private:
  std::vector<Layer> layers_;
  bool has_classifier_ = false;
  Mode mode_ = Mode::train;
};

}  // namespace ota
