#pragma once

#include "hichunk/diffusion.hpp"
#include "hichunk/network.hpp"
#include "hichunk/temporal.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hichunk {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Every tunable of a run. Serialised as one flat JSON object; unknown keys are rejected.
struct RunConfig {
    std::string task = "approach_insert";
    std::string data_root = "data";
    std::string out_dir = "runs";
    std::uint64_t seed = 0;

    // demonstrations
    int demos = 100;
    std::uint64_t demo_seed = 0;

    // temporal structure
    int num_frequencies = 3;
    std::vector<int> strides{1, 2, 4};
    std::vector<double> thresholds{-6.0, -5.5};  // M - 1 inner thresholds
    double base_rate_hz = 15.0;
    int history_len = 3;
    int chunk_len = 8;
    int action_horizon = 8;

    // denoiser
    int hidden = 32;
    std::vector<int> unet_channels{32, 64, 64};
    int step_embed_dim = 128;
    int attention_heads = 4;
    int kernel_size = 5;
    int norm_groups = 8;
    bool global_fusion = true;
    std::string condition = "hierarchical";

    // diffusion
    int diffusion_steps = 100;
    bool clip_denoised = true;

    // optimisation
    int batch = 128;
    int epochs = 100;
    int steps_per_epoch = 0;  // 0: one pass over the base-rate frames
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-6;
    std::string lr_schedule = "constant";  // constant | cosine
    int warmup_steps = 0;
    int checkpoint_every = 0;  // epochs; 0 keeps only the final checkpoint

    // execution / evaluation
    int samples = 100;
    int eval_episodes = 100;
    std::uint64_t eval_seed = 1000;
    int max_steps = -1;
    double percentile_low = 10.0;
    double percentile_high = 70.0;

    void validate() const;
    FrequencyLadder ladder() const;
    DenoiserConfig denoiser(int visual_dim, int proprio_dim, int action_dim) const;
    DiffusionSchedule schedule() const { return DiffusionSchedule::squared_cosine(diffusion_steps); }

    bool operator==(const RunConfig&) const = default;
};

std::string config_to_json(const RunConfig& config);
// Keys absent from `text` keep their defaults.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);
// Applies one key=value override using the same typing rules as the file format.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

}  // namespace hichunk
