#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ota/losses.hpp"
#include "ota/network.hpp"
#include "ota/rng.hpp"
#include "ota/selfsup.hpp"
#include "ota/shiftbench.hpp"

namespace ota {

// Phases are numbered from 1. With soft_label_interleave, even-numbered
// phases train on soft labels for soft_phase_epochs; the rest use hard labels
// for epochs_per_phase.
struct PhaseSchedule {
  std::size_t num_phases = 3;
  std::size_t epochs_per_phase = 10;
  bool soft_label_interleave = false;
  std::size_t soft_phase_epochs = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static PhaseSchedule from_json(const nlohmann::json& j);
};

enum class PhaseMode { hard, soft };
std::string to_string(PhaseMode m);

PhaseMode phase_mode(const PhaseSchedule& s, std::size_t phase);
std::size_t phase_epochs(const PhaseSchedule& s, std::size_t phase);

struct DistillConfig {
  PhaseSchedule schedule;
  std::size_t batch_size = 256;
  double lr = 0.01;
  double min_lr = 0.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // Draw a fresh weak view for pseudo-labelling in every phase; otherwise
  // every phase labels the same weak view.
  bool resample_weak_view = true;

  void validate() const;
  nlohmann::json to_json() const;
  static DistillConfig from_json(const nlohmann::json& j);
};

struct PseudoLabels {
  std::vector<int> hard;
  Probs soft;
  std::string teacher_fingerprint;
  // Fraction of rows whose hard label matches the previous phase's labels.
  std::optional<double> agreement_with_previous;
};

PseudoLabels pseudo_label(const Network& teacher, const UnlabeledView& target,
                          const AugmentationPolicy& policy, Rng& rng);

struct PhaseStats {
  std::vector<double> epoch_loss;
  bool aborted = false;
  std::string abort_reason;
};

// Trains the student on strong views against the labels with a cosine
// schedule over the phase. Hard mode: smoothed-free cross entropy on hard
// labels. Soft mode: KL against the soft labels.
Network run_phase(Network student, const PseudoLabels& labels, const UnlabeledView& target,
                  std::size_t epochs, PhaseMode mode, const DistillConfig& cfg,
                  const AugmentationPolicy& policy, Rng& rng, PhaseStats* stats = nullptr);

struct PhaseRecord {
  std::size_t phase = 0;
  PhaseMode mode = PhaseMode::hard;
  std::size_t epochs = 0;
  std::string teacher_fingerprint;
  std::string student_start_backbone;
  std::optional<double> label_agreement;
  std::vector<double> epoch_loss;
  std::optional<double> accuracy;
  bool aborted = false;

  nlohmann::json to_json() const;
};

struct DistillResult {
  Network student;
  std::vector<PhaseRecord> trace;

  nlohmann::json trace_json() const;
};

// Evaluation hook for the per-phase trace; never feeds back into training.
using PhaseEvaluator = std::function<double(Network&)>;

DistillResult distill(const Network& teacher, const InitializedStudent& student_init,
                      const ArchSpec& student_arch, const UnlabeledView& target,
                      const DistillConfig& cfg, const AugmentationPolicy& policy, Rng& rng,
                      const PhaseEvaluator& evaluate = {});

// Per-class multiplicative scale on classifier weight rows; all entries > 0.
struct ScaleVector {
  std::vector<double> s;
};

struct CalibrateConfig {
  std::size_t rounds = 3;
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  double lr = 0.01;
  double momentum = 0.9;

  void validate() const;
  nlohmann::json to_json() const;
  static CalibrateConfig from_json(const nlohmann::json& j);
};

struct CalibrationResult {
  ScaleVector scales;
  Network model;
  std::vector<double> round_loss;
  std::vector<double> round_agreement;
};

// logits_c = s_c * <w_c, f(x)> + b_c
Network apply_scales(const Network& model, const ScaleVector& scales);

// Fits only the scale vector with the feature extractor, classifier weights
// and biases frozen: label weak views, fit s by cross entropy on strong views,
// relabel, repeat for `rounds`.
CalibrationResult calibrate_classifier(const Network& model, const UnlabeledView& target,
                                       const CalibrateConfig& cfg,
                                       const AugmentationPolicy& policy, Rng& rng);

}  // namespace ota
