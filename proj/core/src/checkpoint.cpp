#include "ota/checkpoint.hpp"

#include <fstream>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "ota/error.hpp"

namespace ota {

namespace {

constexpr char kMagic[4] = {'O', 'T', 'A', 'C'};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto named = ckpt.network.state();
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& n : named) {
    tensors.push_back({{"name", n.name}, {"shape", n.tensor->shape()}, {"offset", offset}});
    offset += n.tensor->size() * sizeof(double);
  }
  nlohmann::json header = {
      {"format_version", ckpt.format_version},
      {"backbone_only", ckpt.backbone_only()},
      {"architecture", ckpt.network.architecture()},
      {"tensors", tensors},
      {"data_bytes", offset},
      {"rng_state", ckpt.rng_state},
      {"meta", ckpt.meta},
  };
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  os.write(kMagic, sizeof(kMagic));
  detail::write_le<std::uint32_t>(os, ckpt.format_version);
  detail::write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& n : named) detail::write_le_array<double>(os, n.tensor->data());
  if (!os) throw IoError(fmt::format("failed writing checkpoint '{}'", path.string()));
}

void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     const std::string& rng_state, const nlohmann::json& meta) {
  Checkpoint ckpt;
  ckpt.network = net;
  ckpt.rng_state = rng_state;
  ckpt.meta = meta;
  save_checkpoint(path, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot open checkpoint '{}'", path.string()));
  char magic[4] = {};
  is.read(magic, sizeof(magic));
  if (!is || std::string_view(magic, 4) != std::string_view(kMagic, 4)) {
    throw FormatError(fmt::format("'{}' is not a checkpoint (bad magic)", path.string()));
  }
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError(fmt::format("checkpoint version {} unsupported (expected {})", version,
                                  kCheckpointVersion));
  }
  const auto header_len = detail::read_le<std::uint64_t>(is, "header length");
  const std::string text = detail::read_bytes(is, header_len, "header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("corrupt checkpoint header: {}", e.what()));
  }

  Checkpoint ckpt;
  ckpt.format_version = version;
  try {
    const bool backbone_only = header.at("backbone_only").get<bool>();
    ckpt.network = Network::from_architecture(header.at("architecture"), !backbone_only);
    ckpt.rng_state = header.value("rng_state", std::string{});
    ckpt.meta = header.value("meta", nlohmann::json::object());

    const auto& entries = header.at("tensors");
    auto slots = ckpt.network.mutable_state();
    const auto names = ckpt.network.state();
    if (entries.size() != slots.size()) throw FormatError("checkpoint tensor count mismatch");
    const auto data_bytes = header.at("data_bytes").get<std::uint64_t>();
    const std::string blob = detail::read_bytes(is, data_bytes, "tensor data");
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const auto& e = entries[i];
      if (e.at("name").get<std::string>() != names[i].name ||
          e.at("shape").get<std::vector<std::size_t>>() != slots[i]->shape()) {
        throw FormatError(fmt::format("checkpoint tensor '{}' does not match its architecture",
                                      e.at("name").get<std::string>()));
      }
      const auto offset = e.at("offset").get<std::uint64_t>();
      const std::uint64_t bytes = slots[i]->size() * sizeof(double);
      if (offset + bytes > blob.size()) throw FormatError("checkpoint tensor data out of bounds");
      std::memcpy(slots[i]->storage().data(), blob.data() + offset, bytes);
      if constexpr (std::endian::native != std::endian::little) {
        for (double& v : slots[i]->data()) v = detail::to_little(v);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("corrupt checkpoint header: {}", e.what()));
  }
  ckpt.network.set_mode(Mode::eval);
  return ckpt;
}

void load_checkpoint_into(const std::filesystem::path& path, Network& net) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!ckpt.network.same_architecture(net)) {
    throw ArchitectureMismatch(
        fmt::format("checkpoint '{}' architecture does not match the target network",
                    path.string()));
  }
  const Mode mode = net.mode();
  net = std::move(ckpt.network);
  net.set_mode(mode);
}

}  // namespace ota
