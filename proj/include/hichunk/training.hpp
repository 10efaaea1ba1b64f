#pragma once

#include "hichunk/config.hpp"
#include "hichunk/dataset.hpp"
#include "hichunk/diffusion.hpp"
#include "hichunk/executor.hpp"
#include "hichunk/network.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace hichunk {

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Adam with decoupled weight decay.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;
    long t = 0;
    std::vector<MatF> m;
    std::vector<MatF> v;

    void step(const std::vector<nn::Parameter<float>*>& params, double lr);
};

// Everything a run needs to continue from where it stopped.
struct TrainingState {
    RunConfig config;
    DenoiserConfig net_config;
    NormalizationStats stats;
    FrequencyLadder ladder = FrequencyLadder::standard();
    std::shared_ptr<Denoiser<float>> net;
    AdamW optimizer;
    int epoch = 0;       // completed epochs
    long step = 0;       // completed optimiser steps
    Rng rng;
    std::vector<double> epoch_losses;
};

// Fresh weights and optimiser; stats are fitted on `episodes`.
TrainingState init_training(const RunConfig& config, const std::vector<EpisodeRecord>& episodes);

int steps_per_epoch(const RunConfig& config, const std::vector<EpisodeRecord>& episodes);
double learning_rate(const RunConfig& config, long step, long total_steps);

// One optimiser step on a fresh batch; returns the batch loss.
double train_step(TrainingState& state, const std::vector<EpisodeRecord>& normalized, long total_steps);

// Trains until `state.epoch == config.epochs`. `on_epoch` runs after every epoch.
using EpochCallback = std::function<void(const TrainingState&, double mean_loss)>;
void train(TrainingState& state, const std::vector<EpisodeRecord>& episodes, const EpochCallback& on_epoch = {});

DiffusionPolicy make_policy(const TrainingState& state);

}  // namespace hichunk
