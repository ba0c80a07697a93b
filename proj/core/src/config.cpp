#include "ota/config.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "ota/error.hpp"

namespace ota {

nlohmann::json BenchmarkConfig::to_json() const {
  nlohmann::json g = geometry.to_json();
  g.erase("geometry_seed");
  g.erase("sample_seed");
  g.erase("n_per_class");
  return {{"geometry", g},
          {"n_source_per_class", n_source_per_class},
          {"n_target_per_class", n_target_per_class},
          {"shift", shift.to_json()},
          {"imbalance_ratio", imbalance_ratio},
          {"eval_split", eval_split == EvalSplit::transductive ? "transductive" : "heldout"},
          {"source_path", source_path},
          {"target_path", target_path}};
}

BenchmarkConfig BenchmarkConfig::from_json(const nlohmann::json& j) {
  BenchmarkConfig b;
  if (j.contains("geometry")) b.geometry = GeneratorSpec::from_json(j["geometry"]);
  b.n_source_per_class = j.value("n_source_per_class", b.n_source_per_class);
  b.n_target_per_class = j.value("n_target_per_class", b.n_target_per_class);
  if (j.contains("shift")) b.shift = ShiftSpec::from_json(j["shift"]);
  b.imbalance_ratio = j.value("imbalance_ratio", b.imbalance_ratio);
  const std::string split = j.value("eval_split", std::string("transductive"));
  if (split != "transductive" && split != "heldout") {
    throw ConfigError(fmt::format("unknown eval split '{}'", split));
  }
  b.eval_split = split == "transductive" ? EvalSplit::transductive : EvalSplit::heldout;
  b.source_path = j.value("source_path", std::string{});
  b.target_path = j.value("target_path", std::string{});
  return b;
}

std::string StageToggles::label() const {
  std::vector<std::string> parts;
  if (stage1) parts.emplace_back("1");
  if (stage2) parts.emplace_back("2");
  if (stage3) parts.emplace_back("3");
  if (calibrate) parts.emplace_back("cal");
  if (parts.empty()) return "source-only";
  std::string s = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) s += "+" + parts[i];
  return s;
}

nlohmann::json StageToggles::to_json() const {
  return {{"stage1", stage1}, {"stage2", stage2}, {"stage3", stage3}, {"calibrate", calibrate}};
}

StageToggles StageToggles::from_json(const nlohmann::json& j) {
  StageToggles t;
  t.stage1 = j.value("stage1", t.stage1);
  t.stage2 = j.value("stage2", t.stage2);
  t.stage3 = j.value("stage3", t.stage3);
  t.calibrate = j.value("calibrate", t.calibrate);
  return t;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  augment.validate();
  source.validate();
  adapt.validate();
  pretrain.validate();
  distill.validate();
  calibrate.validate();
  if (teacher_arch.num_classes != student_arch.num_classes ||
      teacher_arch.input_dim != student_arch.input_dim) {
    throw ConfigError("teacher and student architectures must share input width and class count");
  }
  if (benchmark.source_path.empty() &&
      (teacher_arch.input_dim != benchmark.geometry.dim ||
       teacher_arch.num_classes != benchmark.geometry.num_classes)) {
    throw ConfigError(fmt::format("architecture {} does not fit benchmark D={} C={}",
                                  teacher_arch.to_string(), benchmark.geometry.dim,
                                  benchmark.geometry.num_classes));
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"benchmark", benchmark.to_json()},
          {"stages", stages.to_json()},
          {"teacher_arch", teacher_arch.to_string()},
          {"student_arch", student_arch.to_string()},
          {"source", source.to_json()},
          {"source_checkpoint", source_checkpoint},
          {"adapt", adapt.to_json()},
          {"pretrain", pretrain.to_json()},
          {"distill", distill.to_json()},
          {"fallback_init", to_string(fallback_init)},
          {"calibrate", calibrate.to_json()},
          {"augment", augment.to_json()},
          {"seeds", seeds},
          {"output_dir", output_dir},
          {"save_checkpoints", save_checkpoints}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    const auto empty = nlohmann::json::object();
    auto section = [&](const char* key) -> const nlohmann::json& {
      return j.contains(key) ? j.at(key) : empty;
    };
    c.benchmark = BenchmarkConfig::from_json(section("benchmark"));
    c.stages = StageToggles::from_json(section("stages"));
    if (j.contains("teacher_arch")) c.teacher_arch = ArchSpec::parse(j["teacher_arch"].get<std::string>());
    if (j.contains("student_arch")) c.student_arch = ArchSpec::parse(j["student_arch"].get<std::string>());
    c.source = SourceTrainConfig::from_json(section("source"));
    c.source_checkpoint = j.value("source_checkpoint", c.source_checkpoint);
    c.adapt = AdaptConfig::from_json(section("adapt"));
    c.pretrain = ContrastiveConfig::from_json(section("pretrain"));
    c.distill = DistillConfig::from_json(section("distill"));
    c.fallback_init = parse_init_kind(j.value("fallback_init", to_string(c.fallback_init)));
    c.calibrate = CalibrateConfig::from_json(section("calibrate"));
    c.augment = AugmentationPolicy::from_json(section("augment"));
    c.seeds = j.value("seeds", c.seeds);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.save_checkpoints = j.value("save_checkpoints", c.save_checkpoints);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("invalid experiment config: {}", e.what()));
  }
  c.validate();
  return c;
}

void apply_override(nlohmann::json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(fmt::format("override '{}' is not of the form key=value", assignment));
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError(fmt::format("malformed override key '{}'", path));
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(fmt::format("cannot open '{}'", path.string()));
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("'{}' is not valid JSON: {}", path.string(), e.what()));
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  os << text;
  if (!os) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides) {
  nlohmann::json tree = path.empty() ? nlohmann::json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(tree, o);
  return ExperimentConfig::from_json(tree);
}

}  // namespace ota
