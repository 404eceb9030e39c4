#pragma once

#include "nlreg/nlista.hpp"

#include <filesystem>

#include <json.hpp>

namespace nlreg {

/// Binary layout, little-endian (docs/FORMATS.md):
///   "NLISTACK" | u32 version | u32 layers | u64 m | u64 n |
///   { f64 beta | f64 theta | f64[m*n] W column-major }*
inline constexpr char kCheckpointMagic[8] = {'N', 'L', 'I', 'S', 'T', 'A', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes `<stem>.bin` and `<stem>.json`. `extra` is merged into the metadata
/// (generation and training settings supplied by the caller).
void save_checkpoint(const NlistaModel& model, const std::filesystem::path& stem, const nlohmann::json& extra = {});

struct LoadedCheckpoint {
  NlistaModel model;
  nlohmann::json meta;
};

/// Reads a checkpoint and attaches the dictionary `A`, which must have the
/// fingerprint recorded at save time.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem, std::shared_ptr<const Matrix> A);
nlohmann::json read_checkpoint_meta(const std::filesystem::path& stem);

}  // namespace nlreg
