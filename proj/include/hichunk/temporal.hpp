#pragma once

#include "hichunk/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace hichunk {

struct Observation {
    Vec visual;   // low-dim scene state
    Vec proprio;  // effector pose + gripper
};

struct Action {
    Vec command;  // absolute effector setpoint + gripper command
};

// A stored demonstration or rollout at the base control rate.
struct EpisodeRecord {
    std::vector<Observation> observations;
    std::vector<Action> actions;  // same length as observations
    std::string task_id;
    bool success = false;
    std::uint64_t seed = 0;

    std::size_t length() const { return observations.size(); }
};

// Ordered set of sampling strides over the base rate plus the entropy thresholds that
// gate them. Index 0 is the highest frequency (stride 1).
class FrequencyLadder {
public:
    // `thresholds` must hold M+1 ascending values whose extremes are -inf and +inf.
    FrequencyLadder(std::vector<int> strides, std::vector<double> thresholds, double base_rate_hz = 15.0);

    // strides {1, 2, 4}, thresholds {-inf, -6.0, -5.5, +inf}, 15 Hz.
    static FrequencyLadder standard();
    // Single stride-1 frequency; gating is inert.
    static FrequencyLadder single();
    // Convenience: sentinels are added around `inner` (M-1 values).
    static FrequencyLadder with_inner_thresholds(std::vector<int> strides, const std::vector<double>& inner,
                                                 double base_rate_hz = 15.0);

    int size() const { return static_cast<int>(strides_.size()); }
    int stride(int m) const { return strides_.at(static_cast<std::size_t>(m)); }
    const std::vector<int>& strides() const { return strides_; }
    const std::vector<double>& thresholds() const { return thresholds_; }
    double base_rate_hz() const { return base_rate_hz_; }
    double frequency_hz(int m) const { return base_rate_hz_ / stride(m); }

    FrequencyLadder with_thresholds(std::vector<double> thresholds) const;

    bool operator==(const FrequencyLadder&) const = default;

private:
    std::vector<int> strides_;
    std::vector<double> thresholds_;
    double base_rate_hz_;
};

// per_frequency[m][i], i = 0 is the oldest frame, i = L_h - 1 is the frame at t.
struct HierarchicalHistory {
    std::vector<std::vector<Observation>> per_frequency;

    int num_frequencies() const { return static_cast<int>(per_frequency.size()); }
    int length() const { return per_frequency.empty() ? 0 : static_cast<int>(per_frequency.front().size()); }
};

// per_frequency[m][j] is the setpoint issued at base step t + j * stride(m).
struct HierarchicalChunk {
    std::vector<std::vector<Action>> per_frequency;

    int num_frequencies() const { return static_cast<int>(per_frequency.size()); }
    int length() const { return per_frequency.empty() ? 0 : static_cast<int>(per_frequency.front().size()); }
};

// Base-step indices used by the resamplers, exposed for inspection and tests.
std::vector<std::vector<std::size_t>> history_indices(std::size_t episode_length, std::size_t t,
                                                      const FrequencyLadder& ladder, int history_len);
std::vector<std::vector<std::size_t>> chunk_indices(std::size_t episode_length, std::size_t t,
                                                    const FrequencyLadder& ladder, int chunk_len);

HierarchicalHistory resample_history(const std::vector<Observation>& observations, std::size_t t,
                                     const FrequencyLadder& ladder, int history_len);
HierarchicalHistory resample_history(const EpisodeRecord& episode, std::size_t t, const FrequencyLadder& ladder,
                                     int history_len);
HierarchicalChunk resample_chunk(const EpisodeRecord& episode, std::size_t t, const FrequencyLadder& ladder,
                                 int chunk_len);

// (M * L_c, D_a), frequency-major then time.
MatD flatten(const HierarchicalChunk& chunk);
HierarchicalChunk unflatten(const MatD& flat, int num_frequencies, int chunk_len);

}  // namespace hichunk
