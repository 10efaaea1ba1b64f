#pragma once

#include "hichunk/config.hpp"
#include "hichunk/evaluate.hpp"
#include "hichunk/training.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace hichunk {

// One row of the ablation matrix: a training configuration plus how it is executed.
struct AblationCell {
    std::string label;
    RunConfig config;
    EvalMode mode = EvalMode::FixedHigh;
    int samples = 1;
};

// Full model; high-only / low-only conditioning; fusion removed; single frequency;
// sample counts N in {2, 5, 10, 100}; (L_h, L_c, M) sweep.
std::vector<AblationCell> ablation_grid(const RunConfig& base);

struct AblationResult {
    std::string label;
    bool failed = false;
    std::string error;
    ResultRecord record;
};

using AblationLog = std::function<void(const std::string&)>;

// Cells with identical training configurations share one trained model. A failing cell is
// marked and the remaining cells still run.
std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells,
                                         const std::vector<EpisodeRecord>& episodes, const AblationLog& log = {});

// Trains a fresh model for `config` on `episodes`.
TrainingState train_model(const RunConfig& config, const std::vector<EpisodeRecord>& episodes,
                          const AblationLog& log = {});

}  // namespace hichunk
