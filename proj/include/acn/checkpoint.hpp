#pragma once

// Binary checkpoint: magic "ACNCKPT\0", u32 format version, u32 header length,
// a JSON header (model config, vocab hash, parameter group labels), then per
// parameter: u32 name length, name, u32 rank, u64 dims, little-endian doubles.

#include <cstdint>
#include <string>

#include "json.hpp"

#include "acn/model.hpp"
#include "acn/textcodec.hpp"

namespace acn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::ordered_json config_to_json(const ModelConfig& config);
// Missing keys keep their defaults; unknown keys raise ConfigError.
ModelConfig config_from_json(const nlohmann::json& j);

struct LoadedCheckpoint {
  Model model;
  std::uint64_t vocab_hash = 0;
};

std::string serialize_checkpoint(const Model& model, std::uint64_t vocab_hash);
LoadedCheckpoint parse_checkpoint(const std::string& bytes, const std::string& source = "<checkpoint>");
void save_checkpoint(const Model& model, std::uint64_t vocab_hash, const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path);

// Throws ConfigError when the checkpoint was trained with another vocabulary.
void require_vocab(const LoadedCheckpoint& ckpt, const Vocab& vocab);

}  // namespace acn
