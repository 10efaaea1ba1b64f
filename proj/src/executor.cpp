#include "hichunk/executor.hpp"

#include <json.hpp>

#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace hichunk {

using nlohmann::json;

EntropyEstimate estimate_entropy(const MatD& samples, int n, int num_frequencies, int chunk_len) {
    if (n < 2) throw std::invalid_argument("entropy needs at least two samples");
    const Eigen::Index per = static_cast<Eigen::Index>(num_frequencies) * chunk_len;
    if (samples.rows() != per * n) throw std::invalid_argument("samples rows != N * M * L_c");
    const Eigen::Index dims = samples.cols();
    const double log_c = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);

    // Two-pass mean / unbiased variance over the sample axis.
    MatD mean = MatD::Zero(per, dims);
    for (int s = 0; s < n; ++s) mean += samples.middleRows(s * per, per);
    mean /= n;
    MatD var = MatD::Zero(per, dims);
    for (int s = 0; s < n; ++s) var += (samples.middleRows(s * per, per) - mean).array().square().matrix();
    var /= (n - 1);

    EntropyEstimate est;
    est.n_samples = n;
    est.per_step = MatD(num_frequencies, chunk_len);
    for (Eigen::Index r = 0; r < per; ++r) {
        double h = 0.0;
        for (Eigen::Index d = 0; d < dims; ++d) h += log_c + 0.5 * std::log(std::max(var(r, d), kVarianceFloor));
        est.per_step(r / chunk_len, r % chunk_len) = h / static_cast<double>(dims);
    }
    est.overall = est.per_step.mean();
    return est;
}

EntropyEstimate estimate_entropy(const std::vector<HierarchicalChunk>& samples) {
    if (samples.size() < 2) throw std::invalid_argument("entropy needs at least two samples");
    const int M = samples.front().num_frequencies();
    const int L = samples.front().length();
    return estimate_entropy(pack_chunks(samples), static_cast<int>(samples.size()), M, L);
}

int select_frequency(double entropy, const FrequencyLadder& ladder) {
    const auto& th = ladder.thresholds();
    for (int k = 0; k < ladder.size(); ++k) {
        if (entropy > th[static_cast<std::size_t>(k)] && entropy <= th[static_cast<std::size_t>(k) + 1]) return k;
    }
    // Only -inf itself falls outside every (lo, hi].
    return 0;
}

DiffusionPolicy::DiffusionPolicy(std::shared_ptr<Denoiser<float>> net, DiffusionSchedule schedule,
                                 NormalizationStats stats, SamplerOptions options)
    : net_(std::move(net)), schedule_(std::move(schedule)), stats_(std::move(stats)), options_(options) {
    if (!net_) throw std::invalid_argument("policy needs a network");
}

MatD DiffusionPolicy::sample(const HierarchicalHistory& history, int n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("sample count must be positive");
    const auto batch = pack_histories<float>({history});
    const auto cached = net_->cache_conditioning(batch, n);
    const auto& cfg = net_->config();
    NoiseModel model = [&](const MatD& noisy, const std::vector<int>& steps) -> MatD {
        const std::vector<double> k(steps.begin(), steps.end());
        return net_->predict_noise(cached, noisy.cast<float>(), k).cast<double>();
    };
    return sample_chunks(model, n, cfg.trunk_length(), cfg.action_dim, schedule_, rng, options_);
}

ExecutionDecision decide(ChunkModel& model, const HierarchicalHistory& history, const FrequencyLadder& ladder, int n,
                         Rng& rng) {
    if (n < 2) throw std::invalid_argument("decide needs N >= 2");
    if (ladder.size() != model.num_frequencies()) throw std::invalid_argument("ladder size != model frequencies");
    const int M = model.num_frequencies();
    const int L = model.chunk_len();
    const MatD samples = model.sample(history, n, rng);
    ExecutionDecision d;
    d.entropy = estimate_entropy(samples, n, M, L);
    d.selected_frequency_index = select_frequency(d.entropy.overall, ladder);
    const MatD first = samples.topRows(static_cast<Eigen::Index>(M) * L);
    const auto chunk = unflatten(first, M, L);
    d.executed_actions = chunk.per_frequency[static_cast<std::size_t>(d.selected_frequency_index)];
    return d;
}

RolloutTrace rollout(ChunkModel& model, const Task& task, std::uint64_t env_seed, const FrequencyLadder& ladder,
                     const RolloutConfig& config, Rng& rng) {
    const int L = model.chunk_len();
    if (config.action_horizon < 1 || config.action_horizon > L) throw std::invalid_argument("need 1 <= h_exec <= L_c");
    if (ladder.size() != model.num_frequencies()) throw std::invalid_argument("ladder size != model frequencies");
    if (config.fixed_frequency && (*config.fixed_frequency < 0 || *config.fixed_frequency >= ladder.size())) {
        throw std::invalid_argument("fixed frequency out of range");
    }
    if (!config.fixed_frequency && config.samples < 2) throw std::invalid_argument("gated execution needs N >= 2");
    const int budget = config.max_steps < 0 ? task.spec().max_steps : config.max_steps;

    RolloutTrace trace;
    trace.task_id = task.spec().task_id;
    trace.seed = env_seed;
    EnvState state = task.reset(env_seed);
    std::vector<Observation> observed{model.to_model(observe(task, state))};

    const auto finish = [&] {
        trace.success = task.success(state);
        trace.base_steps_elapsed = state.step;
        trace.max_phase = state.phase;
        trace.final_state = state;
        return trace;
    };

    int decision = 0;
    while (state.step < budget && !task.success(state)) {
        const auto history = resample_history(observed, observed.size() - 1, ladder, model.history_len());
        DecisionRecord rec;
        rec.decision = decision++;
        rec.base_step = state.step;
        rec.state = state;
        std::vector<Action> chunk_actions;
        int m = 0;
        try {
            if (config.fixed_frequency) {
                const int n = std::max(1, config.samples);
                const MatD samples = model.sample(history, n, rng);
                m = *config.fixed_frequency;
                rec.entropy = n >= 2 ? estimate_entropy(samples, n, model.num_frequencies(), L).overall
                                     : std::numeric_limits<double>::quiet_NaN();
                chunk_actions = unflatten(samples.topRows(static_cast<Eigen::Index>(model.num_frequencies()) * L),
                                          model.num_frequencies(), L)
                                    .per_frequency[static_cast<std::size_t>(m)];
            } else {
                auto d = decide(model, history, ladder, config.samples, rng);
                m = d.selected_frequency_index;
                rec.entropy = d.entropy.overall;
                chunk_actions = std::move(d.executed_actions);
            }
        } catch (const SamplerDiverged& e) {
            trace.aborted = true;
            trace.abort_reason = e.what();
            trace.decisions.push_back(std::move(rec));
            return finish();
        }
        rec.frequency_index = m;
        const int stride = ladder.stride(m);
        for (int i = 0; i < config.action_horizon && state.step < budget; ++i) {
            const Action cmd = model.to_command(chunk_actions[static_cast<std::size_t>(i)]);
            bool finite = true;
            for (double v : cmd.command) finite = finite && std::isfinite(v);
            if (!finite) {
                trace.aborted = true;
                trace.abort_reason = "non-finite command";
                trace.decisions.push_back(std::move(rec));
                return finish();
            }
            rec.actions.push_back(cmd.command);
            ++trace.executed_commands;
            for (int s = 0; s < stride && state.step < budget; ++s) {
                state = step(task, state, cmd, 1);
                observed.push_back(model.to_model(observe(task, state)));
                if (task.success(state)) break;
            }
            if (task.success(state)) break;
        }
        trace.decisions.push_back(std::move(rec));
    }
    return finish();
}

namespace {

json vec2_json(Vec2 v) { return json::array({v.x, v.y}); }

Vec2 vec2_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json state_json(const EnvState& s) {
    json objs = json::array();
    for (const auto& o : s.objects) objs.push_back(vec2_json(o));
    json tgts = json::array();
    for (const auto& t : s.targets) tgts.push_back(vec2_json(t));
    return {{"effector", vec2_json(s.effector)},
            {"gripper", s.gripper},
            {"objects", objs},
            {"targets", tgts},
            {"attached", s.attached},
            {"grasp_offset", vec2_json(s.grasp_offset)},
            {"phase", s.phase},
            {"step", s.step},
            {"swing", s.swing},
            {"press_count", s.press_count},
            {"latched", s.latched},
            {"jammed", s.jammed}};
}

EnvState state_from(const json& j) {
    EnvState s;
    s.effector = vec2_from(j.at("effector"));
    s.gripper = j.at("gripper").get<double>();
    for (const auto& o : j.at("objects")) s.objects.push_back(vec2_from(o));
    for (const auto& t : j.at("targets")) s.targets.push_back(vec2_from(t));
    s.attached = j.at("attached").get<int>();
    s.grasp_offset = vec2_from(j.at("grasp_offset"));
    s.phase = j.at("phase").get<int>();
    s.step = j.at("step").get<int>();
    s.swing = j.at("swing").get<double>();
    s.press_count = j.at("press_count").get<int>();
    s.latched = j.at("latched").get<bool>();
    s.jammed = j.at("jammed").get<bool>();
    return s;
}

}  // namespace

void write_trace(std::ostream& os, const RolloutTrace& trace) {
    for (const auto& d : trace.decisions) {
        json rec = {{"decision", d.decision},
                    {"base_step", d.base_step},
                    {"frequency_index", d.frequency_index},
                    {"actions", d.actions},
                    {"state", state_json(d.state)}};
        rec["entropy"] = std::isfinite(d.entropy) ? json(d.entropy) : json(nullptr);
        os << rec.dump() << '\n';
    }
    json summary = {{"summary", true},
                    {"task_id", trace.task_id},
                    {"seed", trace.seed},
                    {"success", trace.success},
                    {"aborted", trace.aborted},
                    {"abort_reason", trace.abort_reason},
                    {"executed_commands", trace.executed_commands},
                    {"base_steps_elapsed", trace.base_steps_elapsed},
                    {"max_phase", trace.max_phase},
                    {"final_state", state_json(trace.final_state)}};
    os << summary.dump() << '\n';
}

RolloutTrace read_trace(std::istream& is) {
    RolloutTrace trace;
    bool have_summary = false;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            if (j.contains("summary")) {
                trace.task_id = j.at("task_id").get<std::string>();
                trace.seed = j.at("seed").get<std::uint64_t>();
                trace.success = j.at("success").get<bool>();
                trace.aborted = j.at("aborted").get<bool>();
                trace.abort_reason = j.at("abort_reason").get<std::string>();
                trace.executed_commands = j.at("executed_commands").get<int>();
                trace.base_steps_elapsed = j.at("base_steps_elapsed").get<int>();
                trace.max_phase = j.at("max_phase").get<int>();
                trace.final_state = state_from(j.at("final_state"));
                have_summary = true;
                continue;
            }
            DecisionRecord d;
            d.decision = j.at("decision").get<int>();
            d.base_step = j.at("base_step").get<int>();
            d.entropy = j.at("entropy").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                   : j.at("entropy").get<double>();
            d.frequency_index = j.at("frequency_index").get<int>();
            d.actions = j.at("actions").get<std::vector<Vec>>();
            d.state = state_from(j.at("state"));
            trace.decisions.push_back(std::move(d));
        } catch (const json::exception& e) {
            std::ostringstream msg;
            msg << "malformed trace line " << lineno << ": " << e.what();
            throw std::runtime_error(msg.str());
        }
    }
    if (!have_summary) throw std::runtime_error("trace has no summary record");
    return trace;
}

}  // namespace hichunk
