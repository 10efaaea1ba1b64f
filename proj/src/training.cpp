#include "hichunk/training.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace hichunk {

void AdamW::step(const std::vector<nn::Parameter<float>*>& params, double lr) {
    if (m.empty()) {
        for (auto* p : params) {
            m.push_back(MatF::Zero(p->value.rows(), p->value.cols()));
            v.push_back(MatF::Zero(p->value.rows(), p->value.cols()));
        }
    }
    if (m.size() != params.size()) throw std::logic_error("optimizer state does not match the parameters");
    ++t;
    const auto b1 = static_cast<float>(beta1);
    const auto b2 = static_cast<float>(beta2);
    const auto c1 = static_cast<float>(1.0 - std::pow(beta1, static_cast<double>(t)));
    const auto c2 = static_cast<float>(1.0 - std::pow(beta2, static_cast<double>(t)));
    const auto lrf = static_cast<float>(lr);
    const auto decay = static_cast<float>(1.0 - lr * weight_decay);
    const auto e = static_cast<float>(eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (p.grad.size() == 0) p.zero_grad();
        m[i] = b1 * m[i] + (1.0f - b1) * p.grad;
        v[i] = b2 * v[i] + (1.0f - b2) * p.grad.cwiseProduct(p.grad);
        p.value *= decay;
        p.value.array() -= lrf * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + e);
    }
}

TrainingState init_training(const RunConfig& config, const std::vector<EpisodeRecord>& episodes) {
    config.validate();
    if (episodes.empty()) throw std::invalid_argument("training needs episodes");
    TrainingState s;
    s.config = config;
    s.stats = fit_normalizer(episodes);
    s.ladder = config.ladder();
    const auto& o = episodes.front().observations.front();
    s.net_config = config.denoiser(static_cast<int>(o.visual.size()), static_cast<int>(o.proprio.size()),
                                   static_cast<int>(episodes.front().actions.front().command.size()));
    s.net = std::make_shared<Denoiser<float>>(s.net_config, mix_seed(config.seed, 1));
    s.optimizer.beta1 = config.beta1;
    s.optimizer.beta2 = config.beta2;
    s.optimizer.weight_decay = config.weight_decay;
    s.rng = Rng(mix_seed(config.seed, 2));
    return s;
}

int steps_per_epoch(const RunConfig& config, const std::vector<EpisodeRecord>& episodes) {
    if (config.steps_per_epoch > 0) return config.steps_per_epoch;
    std::size_t frames = 0;
    for (const auto& ep : episodes) frames += ep.length();
    const auto b = static_cast<std::size_t>(config.batch);
    return static_cast<int>(std::max<std::size_t>(1, (frames + b - 1) / b));
}

double learning_rate(const RunConfig& config, long step, long total_steps) {
    if (config.warmup_steps > 0 && step < config.warmup_steps) {
        return config.lr * static_cast<double>(step + 1) / config.warmup_steps;
    }
    if (config.lr_schedule == "cosine" && total_steps > config.warmup_steps) {
        const double u = static_cast<double>(step - config.warmup_steps) / (total_steps - config.warmup_steps);
        return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, u)));
    }
    return config.lr;
}

double train_step(TrainingState& s, const std::vector<EpisodeRecord>& normalized, long total_steps) {
    const auto& c = s.config;
    const auto samples = sample_normalized(normalized, s.ladder, c.history_len, c.chunk_len, c.batch, s.rng);
    std::vector<HierarchicalHistory> histories;
    std::vector<HierarchicalChunk> chunks;
    histories.reserve(samples.size());
    chunks.reserve(samples.size());
    for (const auto& smp : samples) {
        histories.push_back(smp.history);
        chunks.push_back(smp.chunk);
    }
    const auto hist = pack_histories<float>(histories);
    const MatD clean = pack_chunks(chunks);
    const auto schedule = c.schedule();
    const NoisedBatch nb = noise_batch(clean, c.batch, schedule, s.rng);

    s.net->zero_grad();
    nn::Tape<float> tape(true);
    const auto cond = s.net->condition(tape, hist);
    const std::vector<double> steps(nb.steps.begin(), nb.steps.end());
    const Var pred = s.net->denoise(tape, cond, tape.constant(nb.noisy.cast<float>()), steps);
    const Var loss = nn::ops::mse(tape, pred, tape.constant(nb.eps.cast<float>()));
    const double value = static_cast<double>(tape.value(loss)(0, 0));
    if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "loss became non-finite at step " << s.step << " (epoch " << s.epoch + 1 << ")";
        throw TrainingDiverged(msg.str());
    }
    tape.backward(loss);
    s.optimizer.step(s.net->parameters(), learning_rate(c, s.step, total_steps));
    ++s.step;
    return value;
}

void train(TrainingState& s, const std::vector<EpisodeRecord>& episodes, const EpochCallback& on_epoch) {
    const auto normalized = normalize_episodes(episodes, s.stats);
    const int per_epoch = steps_per_epoch(s.config, episodes);
    const long total = static_cast<long>(per_epoch) * s.config.epochs;
    while (s.epoch < s.config.epochs) {
        double sum = 0.0;
        for (int i = 0; i < per_epoch; ++i) sum += train_step(s, normalized, total);
        ++s.epoch;
        const double mean = sum / per_epoch;
        s.epoch_losses.push_back(mean);
        if (on_epoch) on_epoch(s, mean);
    }
}

DiffusionPolicy make_policy(const TrainingState& s) {
    SamplerOptions opts;
    opts.clip_denoised = s.config.clip_denoised;
    return DiffusionPolicy(s.net, s.config.schedule(), s.stats, opts);
}

}  // namespace hichunk
