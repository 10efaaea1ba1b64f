#include "hichunk/experiments.hpp"

#include <sstream>

namespace hichunk {

namespace {

RunConfig with_structure(RunConfig c, int history_len, int chunk_len, int num_frequencies) {
    static const std::vector<int> kStrides{1, 2, 4, 8, 16};
    c.history_len = history_len;
    c.chunk_len = chunk_len;
    c.action_horizon = std::min(c.action_horizon, chunk_len);
    c.num_frequencies = num_frequencies;
    c.strides.assign(kStrides.begin(), kStrides.begin() + num_frequencies);
    if (static_cast<int>(c.thresholds.size()) != num_frequencies - 1) {
        c.thresholds.clear();
        for (int i = 0; i < num_frequencies - 1; ++i) c.thresholds.push_back(-6.0 + 0.5 * i);
    }
    return c;
}

}  // namespace

std::vector<AblationCell> ablation_grid(const RunConfig& base) {
    std::vector<AblationCell> cells;
    const RunConfig full = with_structure(base, base.history_len, base.chunk_len, 3);
    cells.push_back({"full", full, EvalMode::FixedHigh, 1});

    RunConfig high = full;
    high.condition = "high_only";
    cells.push_back({"condition_high_only", high, EvalMode::FixedHigh, 1});
    RunConfig low = full;
    low.condition = "low_only";
    cells.push_back({"condition_low_only", low, EvalMode::FixedHigh, 1});
    RunConfig nofuse = full;
    nofuse.global_fusion = false;
    cells.push_back({"no_fusion", nofuse, EvalMode::FixedHigh, 1});
    cells.push_back({"single_frequency", with_structure(base, base.history_len, base.chunk_len, 1), EvalMode::FixedHigh, 1});

    for (int n : {2, 5, 10, 100}) cells.push_back({"gated_N" + std::to_string(n), full, EvalMode::EntropyGated, n});

    const int sweep[][3] = {{3, 8, 3}, {1, 8, 3}, {5, 8, 3}, {3, 4, 3}, {3, 8, 1}};
    for (const auto& s : sweep) {
        std::ostringstream label;
        label << "Lh" << s[0] << "_Lc" << s[1] << "_M" << s[2];
        cells.push_back({label.str(), with_structure(base, s[0], s[1], s[2]), EvalMode::FixedHigh, 1});
    }
    return cells;
}

TrainingState train_model(const RunConfig& config, const std::vector<EpisodeRecord>& episodes, const AblationLog& log) {
    TrainingState state = init_training(config, episodes);
    train(state, episodes, [&](const TrainingState& s, double loss) {
        if (log) {
            std::ostringstream msg;
            msg << "epoch " << s.epoch << "/" << s.config.epochs << " loss " << loss;
            log(msg.str());
        }
    });
    return state;
}

std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells,
                                         const std::vector<EpisodeRecord>& episodes, const AblationLog& log) {
    std::map<std::string, TrainingState> trained;
    std::map<std::string, std::vector<double>> calibrated;
    std::vector<AblationResult> out;
    for (const auto& cell : cells) {
        AblationResult r;
        r.label = cell.label;
        try {
            const std::string key = config_to_json(cell.config);
            auto it = trained.find(key);
            if (it == trained.end()) {
                if (log) log("training " + cell.label);
                it = trained.emplace(key, train_model(cell.config, episodes, log)).first;
            }
            TrainingState& state = it->second;
            DiffusionPolicy policy = make_policy(state);
            const Task& task = find_task(cell.config.task);
            FrequencyLadder ladder = state.ladder;

            EvalOptions opts;
            opts.mode = cell.mode;
            opts.episodes = cell.config.eval_episodes;
            opts.env_seed = cell.config.eval_seed;
            opts.policy_seed = cell.config.seed;
            opts.samples = cell.samples;
            opts.action_horizon = cell.config.action_horizon;
            opts.max_steps = cell.config.max_steps;
            if (cell.mode == EvalMode::EntropyGated && ladder.size() > 1) {
                auto cal = calibrated.find(key);
                if (cal == calibrated.end()) {
                    EvalOptions co = opts;
                    co.samples = cell.config.samples;
                    co.env_seed = cell.config.eval_seed + 100000;
                    co.episodes = std::max(5, opts.episodes / 5);
                    cal = calibrated
                              .emplace(key, calibrate_thresholds(policy, task, ladder, co, cell.config.percentile_low,
                                                                 cell.config.percentile_high))
                              .first;
                }
                ladder = FrequencyLadder::with_inner_thresholds(ladder.strides(), cal->second, ladder.base_rate_hz());
            }
            const EvalReport report = evaluate_policy(policy, task, ladder, opts);
            r.record = make_record(report, cell.label, cell.mode);
        } catch (const std::exception& e) {
            r.failed = true;
            r.error = e.what();
            if (log) log("cell " + cell.label + " failed: " + e.what());
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace hichunk
