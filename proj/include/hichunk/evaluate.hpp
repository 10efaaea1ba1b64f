#pragma once

#include "hichunk/envbench.hpp"
#include "hichunk/executor.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace hichunk {

enum class EvalMode { EntropyGated, FixedHigh, FixedMid, FixedLow };

std::string to_string(EvalMode mode);
EvalMode eval_mode_from_string(const std::string& s);
std::vector<std::string> eval_mode_names();

// Frequency index a fixed mode pins; nullopt for gated execution.
std::optional<int> fixed_index(EvalMode mode, int num_frequencies);

struct EvalOptions {
    EvalMode mode = EvalMode::EntropyGated;
    int episodes = 100;
    std::uint64_t env_seed = 1000;   // episode e uses env seed env_seed + e
    std::uint64_t policy_seed = 0;   // sampler noise stream
    int samples = 100;               // N
    int action_horizon = 8;
    int max_steps = -1;
};

EvalReport evaluate_policy(ChunkModel& model, const Task& task, const FrequencyLadder& ladder,
                           const EvalOptions& options);

// Linear-interpolated percentile, p in [0, 100].
double percentile(std::vector<double> values, double p);

class CalibrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// M - 1 inner thresholds spaced between the low and high percentiles of `entropies`.
std::vector<double> thresholds_from_entropies(const std::vector<double>& entropies, int num_frequencies,
                                              double p_low, double p_high, std::size_t min_samples = 100);
// Gathers decision entropies from fixed-high rollouts, then calls thresholds_from_entropies.
std::vector<double> calibrate_thresholds(ChunkModel& model, const Task& task, const FrequencyLadder& ladder,
                                         const EvalOptions& options, double p_low, double p_high,
                                         std::vector<double>* entropies = nullptr);

// One results record per evaluation, appended to a JSONL file.
struct ResultRecord {
    std::string timestamp;
    std::string label;
    std::string task_id;
    std::string mode;
    int episodes = 0;
    double success_rate = 0.0;
    double mean_executed_commands = 0.0;
    double mean_base_steps = 0.0;
    int aborted = 0;
};

ResultRecord make_record(const EvalReport& report, const std::string& label, EvalMode mode);
void append_result(const std::filesystem::path& path, const ResultRecord& record);
std::vector<ResultRecord> read_results(const std::filesystem::path& path);
// Columns: label, task, mode, SR, executed commands, base steps.
void print_table(std::ostream& os, const std::vector<ResultRecord>& records);

// decision_index, base_step, entropy, frequency_index.
void write_entropy_csv(std::ostream& os, const RolloutTrace& trace);
// Simple SVG entropy curve with the selected frequency shaded per decision.
void write_entropy_svg(std::ostream& os, const RolloutTrace& trace, const std::vector<double>& thresholds);

}  // namespace hichunk
