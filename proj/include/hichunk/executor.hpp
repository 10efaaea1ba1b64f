#pragma once

#include "hichunk/dataset.hpp"
#include "hichunk/diffusion.hpp"
#include "hichunk/envbench.hpp"
#include "hichunk/network.hpp"

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hichunk {

inline constexpr double kVarianceFloor = 1e-12;

struct EntropyEstimate {
    MatD per_step;  // (M, L_c)
    double overall = 0.0;
    int n_samples = 0;
};

// Gaussian entropy of N samples, each a flattened hierarchical chunk. `samples` is
// (N * M * L_c, D_a), sample-major.
EntropyEstimate estimate_entropy(const MatD& samples, int n, int num_frequencies, int chunk_len);
EntropyEstimate estimate_entropy(const std::vector<HierarchicalChunk>& samples);

// Interval index k with H in (thresholds[k], thresholds[k + 1]]; 0 is the highest frequency.
int select_frequency(double entropy, const FrequencyLadder& ladder);

// Anything that draws hierarchical chunks for one history. Histories and chunks live in the
// model's own (normalised) space; `to_model` / `to_command` convert at the env boundary.
class ChunkModel {
public:
    virtual ~ChunkModel() = default;
    virtual int num_frequencies() const = 0;
    virtual int history_len() const = 0;
    virtual int chunk_len() const = 0;
    virtual int action_dim() const = 0;
    // n samples, (n * M * L_c, D_a).
    virtual MatD sample(const HierarchicalHistory& history, int n, Rng& rng) = 0;
    virtual Observation to_model(const Observation& raw) const { return raw; }
    virtual Action to_command(const Action& a) const { return a; }
};

// Trained denoiser plus everything needed to run it against raw observations.
class DiffusionPolicy final : public ChunkModel {
public:
    DiffusionPolicy(std::shared_ptr<Denoiser<float>> net, DiffusionSchedule schedule, NormalizationStats stats,
                    SamplerOptions options = {});

    int num_frequencies() const override { return net_->config().num_frequencies; }
    int history_len() const override { return net_->config().history_len; }
    int chunk_len() const override { return net_->config().chunk_len; }
    int action_dim() const override { return net_->config().action_dim; }
    MatD sample(const HierarchicalHistory& history, int n, Rng& rng) override;
    Observation to_model(const Observation& raw) const override { return normalize(raw, stats_); }
    Action to_command(const Action& a) const override { return denormalize(a, stats_); }

    const DiffusionSchedule& schedule() const { return schedule_; }

private:
    std::shared_ptr<Denoiser<float>> net_;
    DiffusionSchedule schedule_;
    NormalizationStats stats_;
    SamplerOptions options_;
};

struct ExecutionDecision {
    int selected_frequency_index = 0;
    std::vector<Action> executed_actions;  // L_c actions of the first sample at that frequency
    EntropyEstimate entropy;
};

// Draws N samples in one batch, gates on their entropy, executes the first sample.
ExecutionDecision decide(ChunkModel& model, const HierarchicalHistory& history, const FrequencyLadder& ladder, int n,
                         Rng& rng);

struct RolloutConfig {
    int action_horizon = 8;  // h_exec
    int samples = 100;       // N
    int max_steps = -1;      // base-step budget; task default when negative
    // Gating disabled: always execute this frequency. Entropy is still logged when samples >= 2.
    std::optional<int> fixed_frequency;
};

RolloutTrace rollout(ChunkModel& model, const Task& task, std::uint64_t env_seed, const FrequencyLadder& ladder,
                     const RolloutConfig& config, Rng& rng);

// One JSON object per decision followed by one summary object.
void write_trace(std::ostream& os, const RolloutTrace& trace);
RolloutTrace read_trace(std::istream& is);

}  // namespace hichunk
