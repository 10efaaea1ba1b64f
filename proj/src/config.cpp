#include "hichunk/config.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace hichunk {

using nlohmann::json;

std::string to_string(ConditionMode mode) {
    switch (mode) {
        case ConditionMode::Hierarchical: return "hierarchical";
        case ConditionMode::HighOnly: return "high_only";
        case ConditionMode::LowOnly: return "low_only";
    }
    return "hierarchical";
}

ConditionMode condition_mode_from_string(const std::string& s) {
    if (s == "hierarchical") return ConditionMode::Hierarchical;
    if (s == "high_only") return ConditionMode::HighOnly;
    if (s == "low_only") return ConditionMode::LowOnly;
    throw ConfigError("condition must be one of hierarchical, high_only, low_only (got '" + s + "')");
}

namespace {

struct Field {
    const char* key;
    std::function<json(const RunConfig&)> get;
    std::function<void(RunConfig&, const json&)> set;
};

[[noreturn]] void type_error(const std::string& key, const char* expected) {
    throw ConfigError("config key '" + key + "' expects " + expected);
}

template <typename M>
Field field(const char* key, M RunConfig::*member) {
    using V = std::remove_cvref_t<decltype(std::declval<RunConfig>().*member)>;
    Field f;
    f.key = key;
    f.get = [member](const RunConfig& c) { return json(c.*member); };
    f.set = [member, key](RunConfig& c, const json& j) {
        if constexpr (std::is_same_v<V, bool>) {
            if (!j.is_boolean()) type_error(key, "a boolean");
            c.*member = j.get<bool>();
        } else if constexpr (std::is_same_v<V, std::uint64_t>) {
            if (!j.is_number_unsigned()) type_error(key, "a non-negative integer");
            c.*member = j.get<std::uint64_t>();
        } else if constexpr (std::is_integral_v<V>) {
            if (!j.is_number_integer()) type_error(key, "an integer");
            c.*member = j.get<V>();
        } else if constexpr (std::is_floating_point_v<V>) {
            if (!j.is_number()) type_error(key, "a number");
            c.*member = j.get<V>();
        } else if constexpr (std::is_same_v<V, std::string>) {
            if (!j.is_string()) type_error(key, "a string");
            c.*member = j.get<std::string>();
        } else if constexpr (std::is_same_v<V, std::vector<int>>) {
            if (!j.is_array()) type_error(key, "an array of integers");
            for (const auto& e : j) {
                if (!e.is_number_integer()) type_error(key, "an array of integers");
            }
            c.*member = j.get<std::vector<int>>();
        } else {
            static_assert(std::is_same_v<V, std::vector<double>>);
            if (!j.is_array()) type_error(key, "an array of numbers");
            for (const auto& e : j) {
                if (!e.is_number()) type_error(key, "an array of numbers");
            }
            c.*member = j.get<std::vector<double>>();
        }
    };
    return f;
}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        field("task", &RunConfig::task),
        field("data_root", &RunConfig::data_root),
        field("out_dir", &RunConfig::out_dir),
        field("seed", &RunConfig::seed),
        field("demos", &RunConfig::demos),
        field("demo_seed", &RunConfig::demo_seed),
        field("num_frequencies", &RunConfig::num_frequencies),
        field("strides", &RunConfig::strides),
        field("thresholds", &RunConfig::thresholds),
        field("base_rate_hz", &RunConfig::base_rate_hz),
        field("history_len", &RunConfig::history_len),
        field("chunk_len", &RunConfig::chunk_len),
        field("action_horizon", &RunConfig::action_horizon),
        field("hidden", &RunConfig::hidden),
        field("unet_channels", &RunConfig::unet_channels),
        field("step_embed_dim", &RunConfig::step_embed_dim),
        field("attention_heads", &RunConfig::attention_heads),
        field("kernel_size", &RunConfig::kernel_size),
        field("norm_groups", &RunConfig::norm_groups),
        field("global_fusion", &RunConfig::global_fusion),
        field("condition", &RunConfig::condition),
        field("diffusion_steps", &RunConfig::diffusion_steps),
        field("clip_denoised", &RunConfig::clip_denoised),
        field("batch", &RunConfig::batch),
        field("epochs", &RunConfig::epochs),
        field("steps_per_epoch", &RunConfig::steps_per_epoch),
        field("lr", &RunConfig::lr),
        field("beta1", &RunConfig::beta1),
        field("beta2", &RunConfig::beta2),
        field("weight_decay", &RunConfig::weight_decay),
        field("lr_schedule", &RunConfig::lr_schedule),
        field("warmup_steps", &RunConfig::warmup_steps),
        field("checkpoint_every", &RunConfig::checkpoint_every),
        field("samples", &RunConfig::samples),
        field("eval_episodes", &RunConfig::eval_episodes),
        field("eval_seed", &RunConfig::eval_seed),
        field("max_steps", &RunConfig::max_steps),
        field("percentile_low", &RunConfig::percentile_low),
        field("percentile_high", &RunConfig::percentile_high),
    };
    return f;
}

const Field* find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (key == f.key) return &f;
    }
    return nullptr;
}

}  // namespace

void RunConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(demos, "demos");
    positive(num_frequencies, "num_frequencies");
    positive(history_len, "history_len");
    positive(chunk_len, "chunk_len");
    positive(batch, "batch");
    positive(epochs, "epochs");
    positive(diffusion_steps, "diffusion_steps");
    positive(samples, "samples");
    positive(eval_episodes, "eval_episodes");
    if (steps_per_epoch < 0) throw ConfigError("steps_per_epoch must be >= 0");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (action_horizon < 1 || action_horizon > chunk_len) throw ConfigError("action_horizon must lie in [1, chunk_len]");
    if (static_cast<int>(strides.size()) != num_frequencies) throw ConfigError("strides must hold num_frequencies entries");
    if (static_cast<int>(thresholds.size()) != num_frequencies - 1) {
        throw ConfigError("thresholds must hold num_frequencies - 1 inner values");
    }
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (lr_schedule != "constant" && lr_schedule != "cosine") throw ConfigError("lr_schedule must be constant or cosine");
    if (!(percentile_low > 0.0 && percentile_low < percentile_high && percentile_high < 100.0)) {
        throw ConfigError("percentiles must satisfy 0 < low < high < 100");
    }
    condition_mode_from_string(condition);
    try {
        (void)ladder();
        denoiser(1, 1, 1).validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

FrequencyLadder RunConfig::ladder() const {
    return FrequencyLadder::with_inner_thresholds(strides, thresholds, base_rate_hz);
}

DenoiserConfig RunConfig::denoiser(int visual_dim, int proprio_dim, int action_dim) const {
    DenoiserConfig d;
    d.num_frequencies = num_frequencies;
    d.history_len = history_len;
    d.chunk_len = chunk_len;
    d.action_dim = action_dim;
    d.visual_dim = visual_dim;
    d.proprio_dim = proprio_dim;
    d.hidden = hidden;
    d.unet_channels = unet_channels;
    d.step_embed_dim = step_embed_dim;
    d.attention_heads = attention_heads;
    d.kernel_size = kernel_size;
    d.norm_groups = norm_groups;
    d.global_fusion = global_fusion;
    d.condition = condition_mode_from_string(condition);
    return d;
}

std::string config_to_json(const RunConfig& config) {
    json j = json::object();
    for (const auto& f : fields()) j[f.key] = f.get(config);
    return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    for (const auto& [key, value] : j.items()) {
        const Field* f = find_field(key);
        if (!f) throw ConfigError("unknown config key '" + key + "'");
        f->set(c, value);
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return config_from_json(ss.str());
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << config_to_json(config) << '\n';
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "'");
    json j;
    try {
        j = json::parse(value);
    } catch (const json::parse_error&) {
        j = value;
    }
    f->set(config, j);
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
}

}  // namespace hichunk
