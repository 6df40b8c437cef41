#pragma once

// Checkpoint files for single experts and the on-disk forest (manifest plus
// one checkpoint per expert). The byte layout is documented in
// docs/checkpoint-format.md.

#include "btm/forest.hpp"
#include "btm/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace btm {

inline constexpr char kCheckpointMagic[4] = {'B', 'T', 'M', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kForestManifest = "forest.json";

struct LoadedExpert {
    ModelConfig config;
    ExpertModel expert;
    std::string checkpoint_id;
};

// Encodes to bytes; the checkpoint id is the trailing checksum in hex.
std::string encode_checkpoint(const ExpertModel& expert, const ModelConfig& config);
LoadedExpert decode_checkpoint(std::string_view bytes,
                               const std::optional<ModelConfig>& expected = std::nullopt);

// Writes atomically (temp file then rename) and returns the checkpoint id.
std::string save_expert(const ExpertModel& expert, const ModelConfig& config,
                        const std::filesystem::path& path);
// Fails on a bad magic, version, checksum or (when `expected` is given) a
// parameter count that does not match the expected config.
LoadedExpert load_expert(const std::filesystem::path& path,
                         const std::optional<ModelConfig>& expected = std::nullopt);

// Reads only the checksum of a checkpoint file, as stored in its trailer.
std::string checkpoint_id(const std::filesystem::path& path);

// Writes <dir>/forest.json and <dir>/experts/<expert_id>.btmf.
void save_forest(const ElmForest& forest, const std::filesystem::path& dir);
// Missing or corrupt member checkpoints are reported by expert id.
ElmForest load_forest(const std::filesystem::path& dir);

} // namespace btm
