#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ota/network.hpp"
#include "ota/rng.hpp"
#include "ota/shiftbench.hpp"

namespace ota {

enum class InitKind { contrastive, source_copy, random };

std::string to_string(InitKind k);
InitKind parse_init_kind(const std::string& text);

struct ContrastiveConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double temperature = 0.2;
  // Projection head width E (head is E -> E -> E/2); 0 uses the backbone width.
  std::size_t embedding_dim = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ContrastiveConfig from_json(const nlohmann::json& j);
};

// A student backbone (no classifier) plus where it came from.
struct InitializedStudent {
  Network backbone;
  InitKind provenance = InitKind::random;
  std::vector<double> loss_curve;
};

// Pluggable stage-2 initializer.
class StudentInitializer {
 public:
  virtual ~StudentInitializer() = default;
  virtual InitKind kind() const = 0;
  virtual InitializedStudent initialize(const ArchSpec& student_arch, const UnlabeledView& target,
                                        Rng& rng) const = 0;
};

class ContrastiveInitializer final : public StudentInitializer {
 public:
  ContrastiveInitializer(ContrastiveConfig cfg, AugmentationPolicy policy)
      : cfg_(cfg), policy_(policy) {}
  InitKind kind() const override { return InitKind::contrastive; }
  InitializedStudent initialize(const ArchSpec& student_arch, const UnlabeledView& target,
                                Rng& rng) const override;

 private:
  ContrastiveConfig cfg_;
  AugmentationPolicy policy_;
};

class RandomInitializer final : public StudentInitializer {
 public:
  InitKind kind() const override { return InitKind::random; }
  InitializedStudent initialize(const ArchSpec& student_arch, const UnlabeledView& target,
                                Rng& rng) const override;
};

class SourceCopyInitializer final : public StudentInitializer {
 public:
  explicit SourceCopyInitializer(const Network& teacher) : teacher_(teacher) {}
  InitKind kind() const override { return InitKind::source_copy; }
  InitializedStudent initialize(const ArchSpec& student_arch, const UnlabeledView& target,
                                Rng& rng) const override;

 private:
  const Network& teacher_;
};

// InfoNCE over two strongly augmented views of each target row, encoder
// shared between views; the projection head is dropped from the result.
InitializedStudent pretrain(const ArchSpec& arch, const UnlabeledView& target,
                            const ContrastiveConfig& cfg, const AugmentationPolicy& policy,
                            Rng& rng);

// Student = chosen backbone + freshly initialised classifier of arch.num_classes outputs.
Network make_student(InitKind kind, const Network& teacher, const InitializedStudent* pretrained,
                     const ArchSpec& student_arch, Rng& rng);

// Fresh classifier on top of a stored initialisation, whatever its provenance.
Network student_from(const InitializedStudent& init, const ArchSpec& student_arch, Rng& rng);

}  // namespace ota
