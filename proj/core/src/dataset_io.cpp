#include <fstream>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "ota/error.hpp"
#include "ota/shiftbench.hpp"

namespace ota {

namespace {

constexpr char kMagic[4] = {'O', 'T', 'A', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  nlohmann::json header = {
      {"format_version", kDatasetVersion},
      {"N", data.size()},
      {"D", data.dim()},
      {"C", data.num_classes},
      {"domain_tag", data.domain == Domain::source ? "source" : "target"},
      {"shift", data.shift.to_json()},
      {"class_counts", data.class_counts},
      {"has_labels", data.has_labels()},
  };
  if (data.geometry) header["geometry"] = data.geometry->to_json();
  if (data.buckets) header["buckets"] = data.buckets->to_json();
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  os.write(kMagic, sizeof(kMagic));
  detail::write_le<std::uint32_t>(os, kDatasetVersion);
  detail::write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::write_le_array<double>(os, data.features.data());
  if (data.labels) {
    std::vector<std::uint32_t> labels(data.labels->begin(), data.labels->end());
    detail::write_le_array<std::uint32_t>(os, labels);
  }
  if (!os) throw IoError(fmt::format("failed writing dataset '{}'", path.string()));
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot open dataset '{}'", path.string()));
  char magic[4] = {};
  is.read(magic, sizeof(magic));
  if (!is || std::string_view(magic, 4) != std::string_view(kMagic, 4)) {
    throw FormatError(fmt::format("'{}' is not a dataset file (bad magic)", path.string()));
  }
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  if (version != kDatasetVersion) {
    throw FormatError(fmt::format("dataset version {} unsupported", version));
  }
  const auto header_len = detail::read_le<std::uint64_t>(is, "header length");
  const std::string text = detail::read_bytes(is, header_len, "header");

  Dataset ds;
  try {
    const auto header = nlohmann::json::parse(text);
    const auto n = header.at("N").get<std::size_t>();
    const auto d = header.at("D").get<std::size_t>();
    ds.num_classes = header.at("C").get<std::size_t>();
    const auto tag = header.at("domain_tag").get<std::string>();
    if (tag != "source" && tag != "target") {
      throw FormatError(fmt::format("unknown domain tag '{}'", tag));
    }
    ds.domain = tag == "source" ? Domain::source : Domain::target;
    ds.shift = ShiftSpec::from_json(header.at("shift"));
    ds.class_counts = header.at("class_counts").get<std::vector<std::size_t>>();
    if (header.contains("geometry")) ds.geometry = GeneratorSpec::from_json(header["geometry"]);
    if (header.contains("buckets")) ds.buckets = ClassBuckets::from_json(header["buckets"]);

    if (n == 0 || d == 0 || n * d > (std::size_t{1} << 28)) {
      throw FormatError("implausible dataset dimensions");
    }
    ds.features = Tensor::matrix(n, d);
    detail::read_le_array<double>(is, ds.features.data(), "features");
    if (header.at("has_labels").get<bool>()) {
      std::vector<std::uint32_t> raw(n);
      detail::read_le_array<std::uint32_t>(is, std::span<std::uint32_t>(raw), "labels");
      ds.labels = std::vector<int>(raw.begin(), raw.end());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("corrupt dataset header: {}", e.what()));
  }
  try {
    ds.validate();
  } catch (const ConfigError& e) {
    throw FormatError(fmt::format("invalid dataset '{}': {}", path.string(), e.what()));
  }
  return ds;
}

}  // namespace ota
