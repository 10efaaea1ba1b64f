#pragma once

#include "hichunk/training.hpp"

#include <filesystem>

namespace hichunk {

// Checkpoint file: 4-byte magic "HCCK", u32 version, u64 header length, JSON header (run
// config, denoiser config, stats, ladder, epoch/step, rng state, parameter names and shapes),
// then raw little-endian float32 weights in header order, then Adam moments m and v when
// the header says they are present.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const TrainingState& state, bool with_optimizer = true);
TrainingState load_checkpoint(const std::filesystem::path& path);

std::string denoiser_config_to_json(const DenoiserConfig& config);
DenoiserConfig denoiser_config_from_json(const std::string& text);

}  // namespace hichunk
