#pragma once

// Default-benchmark data and stage-0 models, built once per seed and shared
// between tests in one binary.

#include <cstdint>
#include <map>
#include <vector>

#include "ota/experiment.hpp"
#include "ota/metrics.hpp"
#include "ota/training.hpp"

namespace ota::testing {

inline const ExperimentConfig& default_config() {
  static const ExperimentConfig cfg;
  return cfg;
}

inline const BenchmarkData& default_benchmark(std::uint64_t seed) {
  static std::map<std::uint64_t, BenchmarkData> cache;
  auto it = cache.find(seed);
  if (it == cache.end()) it = cache.emplace(seed, build_benchmark(default_config(), seed)).first;
  return it->second;
}

// Trained exactly as the pipeline's stage 0 for this seed.
inline const Network& default_source_model(std::uint64_t seed) {
  static std::map<std::uint64_t, Network> cache;
  auto it = cache.find(seed);
  if (it == cache.end()) {
    const ExperimentConfig& cfg = default_config();
    Rng rng = Rng(seed).substream("stage0");
    it = cache.emplace(seed, train_source(cfg.teacher_arch, default_benchmark(seed).source,
                                          cfg.source, rng))
             .first;
  }
  return it->second;
}

inline std::vector<int> labels_at(const Dataset& d, const std::vector<std::size_t>& rows) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (std::size_t r : rows) y.push_back(d.label_values()[r]);
  return y;
}

// Even rows train a probe, odd rows test it.
struct HalfSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline HalfSplit half_split(std::size_t n) {
  HalfSplit s;
  for (std::size_t i = 0; i < n; ++i) (i % 2 == 0 ? s.train : s.test).push_back(i);
  return s;
}

inline double probe_accuracy(const Network& backbone, const Dataset& labeled) {
  const Tensor f = extract_features(backbone, labeled.features);
  const HalfSplit split = half_split(labeled.size());
  Rng rng(7);
  return linear_probe_accuracy(f.gather_rows(split.train), labels_at(labeled, split.train),
                               f.gather_rows(split.test), labels_at(labeled, split.test),
                               labeled.num_classes, ProbeConfig{}, rng);
}

}  // namespace ota::testing
