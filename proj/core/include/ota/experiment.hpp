#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ota/config.hpp"
#include "ota/metrics.hpp"

namespace ota {

inline constexpr int kReportSchemaVersion = 1;

// Datasets for one seed of an experiment: labeled source, target pool, the
// labeled evaluation set and a fresh in-domain draw.
struct BenchmarkData {
  Dataset source;
  Dataset target;
  Dataset eval;
  Dataset in_domain;
};

BenchmarkData build_benchmark(const ExperimentConfig& cfg, std::uint64_t seed);

struct StageResult {
  std::string name;
  MetricsReport metrics;
};

struct SeedReport {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  int error_code = 0;
  std::vector<StageResult> stages;
  // Source model on a fresh in-domain draw, for the shift gap.
  std::optional<MetricsReport> in_domain;
  nlohmann::json adapt_report;
  std::vector<double> source_loss;
  std::vector<double> pretrain_loss;
  nlohmann::json distill_trace = nlohmann::json::array();
  std::vector<double> calibration_scales;
  std::vector<double> calibration_loss;
  nlohmann::json fingerprints = nlohmann::json::object();
  double runtime_seconds = 0.0;

  const StageResult* stage(const std::string& name) const;
  const MetricsReport* final_metrics() const;
  nlohmann::json to_json() const;
};

struct ExperimentResult {
  std::string label;
  std::vector<SeedReport> seeds;
  nlohmann::json summary;

  nlohmann::json report_json(const ExperimentConfig& cfg) const;
};

// Runs one seed of the pipeline: stage 0, then the enabled stages 1 -> 2 -> 3
// (-> calibrate), evaluating after each classifier-producing stage.
SeedReport run_seed(const ExperimentConfig& cfg, std::uint64_t seed);

// All seeds (in parallel, capped by OTA_THREADS), then median/IQR summary.
// Writes report.json, per_class.csv, trace.csv and timing.json when
// cfg.output_dir is set.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

double median(std::vector<double> values);
double interquartile_range(std::vector<double> values);

std::string per_class_csv(const ExperimentResult& result);
std::string trace_csv(const ExperimentResult& result);

// Aligned stage-ablation table over report.json files.
struct ComparisonTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> cells;
  std::vector<std::string> row_labels;

  std::string to_text() const;
  std::string to_csv() const;
};

ComparisonTable compare(const std::vector<nlohmann::json>& reports);
ComparisonTable compare_files(const std::vector<std::filesystem::path>& paths);

}  // namespace ota
