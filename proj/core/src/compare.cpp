#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "ota/config.hpp"
#include "ota/error.hpp"
#include "ota/experiment.hpp"

namespace ota {

namespace {

constexpr const char* kMissing = "—";

std::size_t stage_count(const std::string& label) {
  if (label == "source-only") return 0;
  return static_cast<std::size_t>(std::count(label.begin(), label.end(), '+')) + 1;
}

std::optional<double> json_median(const nlohmann::json& node) {
  if (!node.is_object() || !node.contains("median") || !node["median"].is_number()) return std::nullopt;
  if (node.value("n", std::size_t{1}) == 0) return std::nullopt;
  return node["median"].get<double>();
}

std::string cell(const std::optional<double>& v) {
  return v ? fmt::format("{:.2f}", *v * 100.0) : std::string(kMissing);
}

// Display width for padding; the missing-cell dash is one column but three bytes.
std::size_t display_width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char ch : s) w += (ch & 0xC0) != 0x80 ? 1 : 0;
  return w;
}

}  // namespace

ComparisonTable compare(const std::vector<nlohmann::json>& reports) {
  std::vector<const nlohmann::json*> ordered;
  for (const auto& r : reports) {
    const int version = r.value("schema_version", -1);
    if (version != kReportSchemaVersion) {
      throw FormatError(fmt::format("report schema version {} is not supported (expected {})", version,
                                    kReportSchemaVersion));
    }
    if (!r.contains("summary") || !r.contains("label")) throw FormatError("report is missing label or summary");
    ordered.push_back(&r);
  }
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
    const std::string la = (*a)["label"].template get<std::string>();
    const std::string lb = (*b)["label"].template get<std::string>();
    const auto ca = stage_count(la), cb = stage_count(lb);
    return ca != cb ? ca < cb : la < lb;
  });

  std::size_t max_phase = 0;
  for (const auto* r : ordered) max_phase = std::max(max_phase, (*r)["summary"].value("phases", nlohmann::json::array()).size());

  ComparisonTable table;
  table.columns = {"acc", "avg"};
  for (std::size_t p = 1; p <= max_phase; ++p) table.columns.push_back(fmt::format("phase_{}", p));

  for (const auto* r : ordered) {
    const auto& summary = (*r)["summary"];
    std::vector<std::optional<double>> row;
    const std::string final_stage = summary.value("final_stage", nlohmann::json()).is_string()
                                        ? summary["final_stage"].get<std::string>()
                                        : std::string{};
    const nlohmann::json stage = final_stage.empty() ? nlohmann::json() : summary["stages"].value(final_stage, nlohmann::json());
    row.push_back(stage.is_object() ? json_median(stage.value("acc", nlohmann::json())) : std::nullopt);
    row.push_back(stage.is_object() ? json_median(stage.value("avg", nlohmann::json())) : std::nullopt);
    const auto phases = summary.value("phases", nlohmann::json::array());
    for (std::size_t p = 0; p < max_phase; ++p) {
      row.push_back(p < phases.size() ? json_median(phases[p].value("accuracy", nlohmann::json())) : std::nullopt);
    }
    table.row_labels.push_back((*r)["label"].get<std::string>());
    table.cells.push_back(std::move(row));
  }
  return table;
}

ComparisonTable compare_files(const std::vector<std::filesystem::path>& paths) {
  std::vector<nlohmann::json> reports;
  for (const auto& p : paths) {
    const auto dir_report = p / "report.json";
    reports.push_back(read_json_file(std::filesystem::is_directory(p) ? dir_report : p));
  }
  return compare(reports);
}

std::string ComparisonTable::to_text() const {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"stages"};
  header.insert(header.end(), columns.begin(), columns.end());
  grid.push_back(header);
  for (std::size_t r = 0; r < cells.size(); ++r) {
    std::vector<std::string> line{row_labels[r]};
    for (const auto& v : cells[r]) line.push_back(cell(v));
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], display_width(line[c]));
  }
  std::string out;
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      const std::string pad(widths[c] - display_width(line[c]), ' ');
      out += c == 0 ? line[c] + pad : "  " + pad + line[c];
    }
    out += "\n";
  }
  return out;
}

std::string ComparisonTable::to_csv() const {
  std::string out = "stages";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  for (std::size_t r = 0; r < cells.size(); ++r) {
    out += row_labels[r];
    for (const auto& v : cells[r]) out += "," + (v ? fmt::format("{}", *v) : std::string{});
    out += "\n";
  }
  return out;
}

}  // namespace ota
