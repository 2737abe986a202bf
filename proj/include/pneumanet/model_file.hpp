#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pneumanet/network.hpp"

namespace pneumanet {

// Layout (all integers little-endian):
//   "PNMX"  u32 version  u32 descriptor_len  descriptor (UTF-8 JSON)
//   u64 value_count  value_count x f32  u32 CRC-32 of the f32 bytes
// The descriptor holds the network description, a "kind" tag, free-form
// "meta", and the shape of every parameter and buffer tensor in payload order.
constexpr std::uint32_t kModelFormatVersion = 1;

class ModelFileError : public Error {
 public:
  enum class Kind { io, malformed, bad_magic, unsupported_version, checksum_mismatch, shape_mismatch };

  ModelFileError(Kind kind, const std::string& message);
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

const char* to_string(ModelFileError::Kind kind);

struct ModelFile {
  nn::Network<float> network;
  std::string kind;    // "classifier", "gan_generator", ...
  nlohmann::json meta;  // training provenance, configs
  std::uint32_t checksum = 0;

  // "pnmx1-<crc32 hex>"; stable for identical payloads.
  std::string version_tag() const;
};

std::vector<std::uint8_t> serialize_model(const nn::Network<float>& net, const std::string& kind,
                                          const nlohmann::json& meta = nlohmann::json::object());
ModelFile deserialize_model(const std::vector<std::uint8_t>& bytes);

// Writes to a temporary sibling and renames it into place.
void save_model(const std::filesystem::path& path, const nn::Network<float>& net,
                const std::string& kind, const nlohmann::json& meta = nlohmann::json::object());
ModelFile load_model(const std::filesystem::path& path);

}  // namespace pneumanet
