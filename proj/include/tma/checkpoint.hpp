#pragma once

#include "tma/trainer.hpp"

#include <filesystem>
#include <string>

namespace tma {

// Checkpoint layout, all integers and floats little-endian:
//
//   offset  size         field
//   0       4            magic "TMA1"
//   4       4            u32 version (= 1)
//   8       4            u32 d  (columns)
//   12      4            u32 r  (rows)
//   16      6*r*d*8      f64 matrices K, P, U, V, Lambda, Psi, each row-major
//   ...     8            u64 length L of the trailer
//   ...     L            TrainerConfig as UTF-8 JSON
//
// Nothing follows the trailer.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelState state;
  TrainerConfig config;
};

std::string encode_checkpoint(const ModelState& state, const TrainerConfig& cfg);

/// Throws SchemaError on a bad magic, version, truncation or trailing bytes.
Checkpoint decode_checkpoint(const std::string& bytes);

/// Written to a temporary sibling and renamed into place, so a reader never
/// sees a half-written file.
void save_checkpoint(const std::filesystem::path& path, const ModelState& state,
                     const TrainerConfig& cfg);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tma
