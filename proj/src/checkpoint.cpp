#include "hichunk/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace hichunk {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'H', 'C', 'C', 'K'};
static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

json denoiser_json(const DenoiserConfig& d) {
    return {{"num_frequencies", d.num_frequencies}, {"history_len", d.history_len},
            {"chunk_len", d.chunk_len},             {"action_dim", d.action_dim},
            {"visual_dim", d.visual_dim},           {"proprio_dim", d.proprio_dim},
            {"hidden", d.hidden},                   {"unet_channels", d.unet_channels},
            {"step_embed_dim", d.step_embed_dim},   {"attention_heads", d.attention_heads},
            {"kernel_size", d.kernel_size},         {"norm_groups", d.norm_groups},
            {"global_fusion", d.global_fusion},     {"condition", to_string(d.condition)}};
}

DenoiserConfig denoiser_from(const json& j) {
    DenoiserConfig d;
    d.num_frequencies = j.at("num_frequencies").get<int>();
    d.history_len = j.at("history_len").get<int>();
    d.chunk_len = j.at("chunk_len").get<int>();
    d.action_dim = j.at("action_dim").get<int>();
    d.visual_dim = j.at("visual_dim").get<int>();
    d.proprio_dim = j.at("proprio_dim").get<int>();
    d.hidden = j.at("hidden").get<int>();
    d.unet_channels = j.at("unet_channels").get<std::vector<int>>();
    d.step_embed_dim = j.at("step_embed_dim").get<int>();
    d.attention_heads = j.at("attention_heads").get<int>();
    d.kernel_size = j.at("kernel_size").get<int>();
    d.norm_groups = j.at("norm_groups").get<int>();
    d.global_fusion = j.at("global_fusion").get<bool>();
    d.condition = condition_mode_from_string(j.at("condition").get<std::string>());
    d.validate();
    return d;
}

json ladder_json(const FrequencyLadder& l) {
    json th = json::array();
    for (std::size_t i = 1; i + 1 < l.thresholds().size(); ++i) th.push_back(l.thresholds()[i]);
    return {{"strides", l.strides()}, {"thresholds", th}, {"base_rate_hz", l.base_rate_hz()}};
}

FrequencyLadder ladder_from(const json& j) {
    return FrequencyLadder::with_inner_thresholds(j.at("strides").get<std::vector<int>>(),
                                                  j.at("thresholds").get<std::vector<double>>(),
                                                  j.at("base_rate_hz").get<double>());
}

void write_floats(std::ostream& os, const MatF& m) {
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

void read_floats(std::istream& is, MatF& m) {
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!is) throw CheckpointError("checkpoint truncated");
}

}  // namespace

std::string denoiser_config_to_json(const DenoiserConfig& config) { return denoiser_json(config).dump(); }

DenoiserConfig denoiser_config_from_json(const std::string& text) { return denoiser_from(json::parse(text)); }

void save_checkpoint(const fs::path& path, const TrainingState& s, bool with_optimizer) {
    if (!s.net) throw std::invalid_argument("save_checkpoint: no network");
    const auto params = s.net->named_parameters();
    const bool opt = with_optimizer && s.optimizer.m.size() == params.size();
    json names = json::array();
    for (const auto& [name, p] : params) names.push_back({{"name", name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
    json header = {{"run_config", json::parse(config_to_json(s.config))},
                   {"denoiser", denoiser_json(s.net_config)},
                   {"stats", json::parse(stats_to_json(s.stats))},
                   {"ladder", ladder_json(s.ladder)},
                   {"epoch", s.epoch},
                   {"step", s.step},
                   {"epoch_losses", s.epoch_losses},
                   {"rng_state", s.rng.state()},
                   {"parameters", names},
                   {"optimizer", opt},
                   {"adam_t", s.optimizer.t}};
    const std::string h = header.dump();

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw CheckpointError("cannot write " + tmp.string());
        os.write(kMagic, 4);
        const std::uint32_t version = kCheckpointFormatVersion;
        const std::uint64_t len = h.size();
        os.write(reinterpret_cast<const char*>(&version), sizeof version);
        os.write(reinterpret_cast<const char*>(&len), sizeof len);
        os.write(h.data(), static_cast<std::streamsize>(h.size()));
        for (const auto& [_, p] : params) write_floats(os, p->value);
        if (opt) {
            for (const auto& m : s.optimizer.m) write_floats(os, m);
            for (const auto& v : s.optimizer.v) write_floats(os, v);
        }
        if (!os) throw CheckpointError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

TrainingState load_checkpoint(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError("not a checkpoint: " + path.string());
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&version), sizeof version);
    is.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!is) throw CheckpointError("checkpoint truncated");
    if (version != kCheckpointFormatVersion) throw CheckpointError("unsupported checkpoint version");
    std::string h(len, '\0');
    is.read(h.data(), static_cast<std::streamsize>(len));
    if (!is) throw CheckpointError("checkpoint truncated");

    TrainingState s;
    try {
        const json header = json::parse(h);
        s.config = config_from_json(header.at("run_config").dump());
        s.net_config = denoiser_from(header.at("denoiser"));
        s.stats = stats_from_json(header.at("stats").dump());
        s.ladder = ladder_from(header.at("ladder"));
        s.epoch = header.at("epoch").get<int>();
        s.step = header.at("step").get<long>();
        s.epoch_losses = header.at("epoch_losses").get<std::vector<double>>();
        s.rng.set_state(header.at("rng_state").get<std::string>());
        s.net = std::make_shared<Denoiser<float>>(s.net_config, 0);
        const auto params = s.net->named_parameters();
        const auto& names = header.at("parameters");
        if (names.size() != params.size()) throw CheckpointError("checkpoint parameter count does not match the network");
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& [name, p] = params[i];
            if (names[i].at("name").get<std::string>() != name || names[i].at("rows").get<Eigen::Index>() != p->value.rows() ||
                names[i].at("cols").get<Eigen::Index>() != p->value.cols()) {
                throw CheckpointError("checkpoint parameter '" + names[i].at("name").get<std::string>() +
                                      "' does not match the network");
            }
            read_floats(is, p->value);
        }
        s.optimizer.beta1 = s.config.beta1;
        s.optimizer.beta2 = s.config.beta2;
        s.optimizer.weight_decay = s.config.weight_decay;
        s.optimizer.t = header.at("adam_t").get<long>();
        if (header.at("optimizer").get<bool>()) {
            for (const auto& [_, p] : params) {
                s.optimizer.m.emplace_back(p->value.rows(), p->value.cols());
                read_floats(is, s.optimizer.m.back());
            }
            for (const auto& [_, p] : params) {
                s.optimizer.v.emplace_back(p->value.rows(), p->value.cols());
                read_floats(is, s.optimizer.v.back());
            }
        }
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    }
    return s;
}

}  // namespace hichunk
