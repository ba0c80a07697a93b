#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ota/network.hpp"

namespace ota {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// On disk: "OTAC", u32 version, u64 header length, UTF-8 JSON header
// (architecture, tensor names/shapes/byte offsets, rng state, backbone_only
// flag, free-form meta), then the raw little-endian f64 tensor block.
struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  Network network;
  std::string rng_state;
  nlohmann::json meta = nlohmann::json::object();

  bool backbone_only() const { return !network.has_classifier(); }
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     const std::string& rng_state = {},
                     const nlohmann::json& meta = nlohmann::json::object());

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Loads tensor values into an existing network; throws ArchitectureMismatch
// when the stored architecture differs.
void load_checkpoint_into(const std::filesystem::path& path, Network& net);

}  // namespace ota
