#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ota/adapt.hpp"
#include "ota/distill.hpp"
#include "ota/network.hpp"
#include "ota/selfsup.hpp"
#include "ota/shiftbench.hpp"
#include "ota/training.hpp"

namespace ota {

enum class EvalSplit { transductive, heldout };

struct BenchmarkConfig {
  // num_classes, dim, ring/cluster geometry; the seeds inside are ignored and
  // derived from each run seed instead.
  GeneratorSpec geometry;
  std::size_t n_source_per_class = 500;
  std::size_t n_target_per_class = 500;
  ShiftSpec shift{ShiftKind::rotation, 45.0, 0};
  // > 1 subsamples the source into a long tail; the target stays balanced.
  double imbalance_ratio = 1.0;
  EvalSplit eval_split = EvalSplit::transductive;
  // Optional pre-generated dataset files used instead of the generator.
  std::string source_path;
  std::string target_path;

  nlohmann::json to_json() const;
  static BenchmarkConfig from_json(const nlohmann::json& j);
};

struct StageToggles {
  bool stage1 = true;
  bool stage2 = true;
  bool stage3 = true;
  bool calibrate = false;

  // "source-only", "1", "1+3", "1+2+3", "1+2+3+cal", ...
  std::string label() const;
  nlohmann::json to_json() const;
  static StageToggles from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
  BenchmarkConfig benchmark;
  StageToggles stages;
  ArchSpec teacher_arch = ArchSpec::parse("32-64-64-10");
  // Stage-0 checkpoint to load instead of training; "{seed}" is replaced by
  // the run seed.
  std::string source_checkpoint;
  ArchSpec student_arch = ArchSpec::parse("32-32-32-10");
  SourceTrainConfig source;
  AdaptConfig adapt;
  ContrastiveConfig pretrain;
  DistillConfig distill;
  // Student initialisation for stage 3 when stage 2 is disabled.
  InitKind fallback_init = InitKind::random;
  CalibrateConfig calibrate;
  AugmentationPolicy augment;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string output_dir;
  bool save_checkpoints = true;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

// Applies "a.b.c=value" to a JSON tree; value is parsed as JSON when possible
// and kept as a string otherwise.
void apply_override(nlohmann::json& tree, const std::string& assignment);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});

}  // namespace ota
