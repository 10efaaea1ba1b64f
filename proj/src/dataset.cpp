#include "hichunk/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <regex>
#include <sstream>

namespace hichunk {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<EpisodeRecord> generate_demos(const std::string& task_id, int count, std::uint64_t seed,
                                          int retry_budget) {
    if (count < 1) throw std::invalid_argument("generate_demos: count must be at least 1");
    const Task& task = find_task(task_id);
    const int budget = retry_budget < 0 ? count : retry_budget;
    std::vector<EpisodeRecord> out;
    out.reserve(static_cast<std::size_t>(count));
    int failures = 0;
    for (std::uint64_t attempt = 0; static_cast<int>(out.size()) < count; ++attempt) {
        EpisodeRecord ep = record_expert(task, mix_seed(seed, attempt));
        if (ep.success) {
            out.push_back(std::move(ep));
        } else if (++failures > budget) {
            std::ostringstream msg;
            msg << "scripted expert failed " << failures << " times on " << task_id << "; retry budget " << budget
                << " exhausted";
            throw RetryBudgetExhausted(msg.str());
        }
    }
    return out;
}

namespace {

void widen(MinMax& r) {
    for (std::size_t i = 0; i < r.lo.size(); ++i) {
        if (!(r.hi[i] - r.lo[i] > 2 * MinMax::kWiden)) {
            const double mid = 0.5 * (r.lo[i] + r.hi[i]);
            r.lo[i] = mid - MinMax::kWiden;
            r.hi[i] = mid + MinMax::kWiden;
        }
    }
}

void extend(MinMax& r, const Vec& x) {
    if (r.lo.empty()) {
        r.lo = x;
        r.hi = x;
        return;
    }
    if (x.size() != r.lo.size()) throw std::invalid_argument("inconsistent vector dimension across episodes");
    for (std::size_t i = 0; i < x.size(); ++i) {
        r.lo[i] = std::min(r.lo[i], x[i]);
        r.hi[i] = std::max(r.hi[i], x[i]);
    }
}

}  // namespace

NormalizationStats fit_normalizer(const std::vector<EpisodeRecord>& episodes) {
    if (episodes.empty()) throw std::invalid_argument("fit_normalizer: no episodes");
    NormalizationStats s;
    for (const auto& ep : episodes) {
        for (const auto& o : ep.observations) {
            extend(s.visual, o.visual);
            extend(s.proprio, o.proprio);
        }
        for (const auto& a : ep.actions) extend(s.action, a.command);
    }
    widen(s.visual);
    widen(s.proprio);
    widen(s.action);
    return s;
}

Vec normalize(const Vec& x, const MinMax& r) {
    if (x.size() != r.lo.size()) throw std::invalid_argument("normalize: dimension mismatch");
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 2.0 * (x[i] - r.lo[i]) / (r.hi[i] - r.lo[i]) - 1.0;
    return out;
}

Vec denormalize(const Vec& x, const MinMax& r) {
    if (x.size() != r.lo.size()) throw std::invalid_argument("denormalize: dimension mismatch");
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 0.5 * (x[i] + 1.0) * (r.hi[i] - r.lo[i]) + r.lo[i];
    return out;
}

Observation normalize(const Observation& o, const NormalizationStats& s) {
    return {normalize(o.visual, s.visual), normalize(o.proprio, s.proprio)};
}

Action normalize(const Action& a, const NormalizationStats& s) { return {normalize(a.command, s.action)}; }

Action denormalize(const Action& a, const NormalizationStats& s) { return {denormalize(a.command, s.action)}; }

std::vector<EpisodeRecord> normalize_episodes(const std::vector<EpisodeRecord>& episodes,
                                              const NormalizationStats& stats) {
    std::vector<EpisodeRecord> out;
    out.reserve(episodes.size());
    for (const auto& ep : episodes) {
        EpisodeRecord n;
        n.task_id = ep.task_id;
        n.success = ep.success;
        n.seed = ep.seed;
        for (const auto& o : ep.observations) n.observations.push_back(normalize(o, stats));
        for (const auto& a : ep.actions) n.actions.push_back(normalize(a, stats));
        out.push_back(std::move(n));
    }
    return out;
}

std::vector<TrainingSample> sample_normalized(const std::vector<EpisodeRecord>& normalized,
                                              const FrequencyLadder& ladder, int history_len, int chunk_len,
                                              int batch, Rng& rng) {
    if (batch < 1) throw std::invalid_argument("sample_batch: batch must be at least 1");
    if (normalized.empty()) throw std::invalid_argument("sample_batch: no episodes");
    std::vector<std::size_t> ends;
    std::size_t total = 0;
    for (const auto& ep : normalized) {
        if (ep.length() == 0 || ep.actions.size() != ep.length()) {
            throw std::invalid_argument("sample_batch: malformed episode");
        }
        total += ep.length();
        ends.push_back(total);
    }
    std::vector<TrainingSample> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        const auto g = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(total) - 1));
        const auto e = static_cast<std::size_t>(std::upper_bound(ends.begin(), ends.end(), g) - ends.begin());
        const std::size_t t = g - (e == 0 ? 0 : ends[e - 1]);
        TrainingSample s;
        s.history = resample_history(normalized[e], t, ladder, history_len);
        s.chunk = resample_chunk(normalized[e], t, ladder, chunk_len);
        s.t = t;
        s.episode_id = e;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<TrainingSample> sample_batch(const std::vector<EpisodeRecord>& episodes, const NormalizationStats& stats,
                                         const FrequencyLadder& ladder, int history_len, int chunk_len, int batch,
                                         Rng& rng) {
    if (batch < 1) throw std::invalid_argument("sample_batch: batch must be at least 1");
    return sample_normalized(normalize_episodes(episodes, stats), ladder, history_len, chunk_len, batch, rng);
}

template <typename T>
HistoryBatch<T> pack_histories(const std::vector<HierarchicalHistory>& histories) {
    if (histories.empty()) throw std::invalid_argument("pack_histories: empty batch");
    const int M = histories.front().num_frequencies();
    const int L = histories.front().length();
    const auto dv = static_cast<Eigen::Index>(histories.front().per_frequency.at(0).at(0).visual.size());
    const auto dp = static_cast<Eigen::Index>(histories.front().per_frequency.at(0).at(0).proprio.size());
    HistoryBatch<T> out;
    out.batch = static_cast<Eigen::Index>(histories.size());
    out.visual.resize(out.batch * M * L, dv);
    out.proprio.resize(out.batch * M * L, dp);
    Eigen::Index row = 0;
    for (const auto& h : histories) {
        if (h.num_frequencies() != M || h.length() != L) throw std::invalid_argument("pack_histories: ragged batch");
        for (const auto& seq : h.per_frequency) {
            for (const auto& o : seq) {
                if (static_cast<Eigen::Index>(o.visual.size()) != dv || static_cast<Eigen::Index>(o.proprio.size()) != dp) {
                    throw std::invalid_argument("pack_histories: observation dimension mismatch");
                }
                for (Eigen::Index k = 0; k < dv; ++k) out.visual(row, k) = static_cast<T>(o.visual[static_cast<std::size_t>(k)]);
                for (Eigen::Index k = 0; k < dp; ++k) out.proprio(row, k) = static_cast<T>(o.proprio[static_cast<std::size_t>(k)]);
                ++row;
            }
        }
    }
    return out;
}

template HistoryBatch<float> pack_histories<float>(const std::vector<HierarchicalHistory>&);
template HistoryBatch<double> pack_histories<double>(const std::vector<HierarchicalHistory>&);

MatD pack_chunks(const std::vector<HierarchicalChunk>& chunks) {
    if (chunks.empty()) throw std::invalid_argument("pack_chunks: empty batch");
    const MatD first = flatten(chunks.front());
    MatD out(first.rows() * static_cast<Eigen::Index>(chunks.size()), first.cols());
    for (std::size_t b = 0; b < chunks.size(); ++b) {
        const MatD f = b == 0 ? first : flatten(chunks[b]);
        if (f.rows() != first.rows() || f.cols() != first.cols()) throw std::invalid_argument("pack_chunks: ragged batch");
        out.middleRows(static_cast<Eigen::Index>(b) * first.rows(), first.rows()) = f;
    }
    return out;
}

namespace {

constexpr char kMagic[4] = {'H', 'C', 'E', 'P'};

static_assert(std::endian::native == std::endian::little, "episode files are written little-endian");

template <typename V>
void put(std::ostream& os, V v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw std::runtime_error("episode file truncated");
    return v;
}

}  // namespace

void save_episode(const fs::path& path, const EpisodeRecord& ep) {
    if (ep.length() == 0 || ep.actions.size() != ep.length()) throw std::invalid_argument("save_episode: malformed episode");
    const std::size_t dv = ep.observations[0].visual.size();
    const std::size_t dp = ep.observations[0].proprio.size();
    const std::size_t da = ep.actions[0].command.size();
    json header = {{"task_id", ep.task_id}, {"success", ep.success}, {"seed", ep.seed},
                   {"length", ep.length()},  {"visual_dim", dv},      {"proprio_dim", dp},
                   {"action_dim", da}};
    const std::string h = header.dump();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kEpisodeFormatVersion);
    put<std::uint64_t>(os, h.size());
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& o : ep.observations) {
        if (o.visual.size() != dv) throw std::invalid_argument("save_episode: ragged visual");
        for (double v : o.visual) put(os, v);
    }
    for (const auto& o : ep.observations) {
        if (o.proprio.size() != dp) throw std::invalid_argument("save_episode: ragged proprio");
        for (double v : o.proprio) put(os, v);
    }
    for (const auto& a : ep.actions) {
        if (a.command.size() != da) throw std::invalid_argument("save_episode: ragged action");
        for (double v : a.command) put(os, v);
    }
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

EpisodeRecord load_episode(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not an episode file: " + path.string());
    const auto version = get<std::uint32_t>(is);
    if (version != kEpisodeFormatVersion) throw std::runtime_error("unsupported episode format version");
    const auto hlen = get<std::uint64_t>(is);
    std::string h(hlen, '\0');
    is.read(h.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw std::runtime_error("episode file truncated");
    const json header = json::parse(h);
    EpisodeRecord ep;
    ep.task_id = header.at("task_id").get<std::string>();
    ep.success = header.at("success").get<bool>();
    ep.seed = header.at("seed").get<std::uint64_t>();
    const auto n = header.at("length").get<std::size_t>();
    const auto dv = header.at("visual_dim").get<std::size_t>();
    const auto dp = header.at("proprio_dim").get<std::size_t>();
    const auto da = header.at("action_dim").get<std::size_t>();
    ep.observations.resize(n);
    ep.actions.resize(n);
    for (auto& o : ep.observations) {
        o.visual.resize(dv);
        for (auto& v : o.visual) v = get<double>(is);
    }
    for (auto& o : ep.observations) {
        o.proprio.resize(dp);
        for (auto& v : o.proprio) v = get<double>(is);
    }
    for (auto& a : ep.actions) {
        a.command.resize(da);
        for (auto& v : a.command) v = get<double>(is);
    }
    return ep;
}

namespace {

json range_json(const MinMax& r) { return {{"min", r.lo}, {"max", r.hi}}; }

MinMax range_from(const json& j) {
    MinMax r{j.at("min").get<Vec>(), j.at("max").get<Vec>()};
    if (r.lo.size() != r.hi.size()) throw std::runtime_error("stats: min/max length mismatch");
    for (std::size_t i = 0; i < r.lo.size(); ++i) {
        if (!(r.hi[i] > r.lo[i])) throw std::runtime_error("stats: max must exceed min");
    }
    return r;
}

}  // namespace

std::string stats_to_json(const NormalizationStats& s) {
    json j = {{"version", 1},
              {"visual", range_json(s.visual)},
              {"proprio", range_json(s.proprio)},
              {"action", range_json(s.action)}};
    return j.dump(2);
}

NormalizationStats stats_from_json(const std::string& text) {
    const json j = json::parse(text);
    if (j.value("version", 0) != 1) throw std::runtime_error("unsupported stats version");
    return {range_from(j.at("visual")), range_from(j.at("proprio")), range_from(j.at("action"))};
}

void save_stats(const fs::path& path, const NormalizationStats& stats) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << stats_to_json(stats) << '\n';
}

NormalizationStats load_stats(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return stats_from_json(ss.str());
}

fs::path task_dir(const fs::path& root, const std::string& task_id) { return root / task_id; }

namespace {

std::vector<std::pair<int, fs::path>> episode_files(const fs::path& dir) {
    static const std::regex pattern(R"(episode_(\d+)\.bin)");
    std::vector<std::pair<int, fs::path>> files;
    if (!fs::is_directory(dir)) return files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) files.emplace_back(std::stoi(m[1].str()), entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

void write_dataset(const fs::path& root, const std::string& task_id, const std::vector<EpisodeRecord>& episodes,
                   bool force) {
    if (episodes.empty()) throw std::invalid_argument("write_dataset: no episodes");
    const fs::path dir = task_dir(root, task_id);
    const auto existing = episode_files(dir);
    if (!existing.empty() || fs::exists(dir / "stats.json")) {
        if (!force) throw std::invalid_argument("dataset already exists at " + dir.string() + " (use --force)");
        for (const auto& [_, p] : existing) fs::remove(p);
        fs::remove(dir / "stats.json");
    }
    fs::create_directories(dir);
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        save_episode(dir / ("episode_" + std::to_string(i) + ".bin"), episodes[i]);
    }
    save_stats(dir / "stats.json", fit_normalizer(episodes));
}

std::vector<EpisodeRecord> load_dataset(const fs::path& root, const std::string& task_id) {
    const fs::path dir = task_dir(root, task_id);
    const auto files = episode_files(dir);
    if (files.empty()) throw std::runtime_error("no episodes under " + dir.string());
    std::vector<EpisodeRecord> out;
    for (const auto& [_, p] : files) out.push_back(load_episode(p));
    return out;
}

}  // namespace hichunk
