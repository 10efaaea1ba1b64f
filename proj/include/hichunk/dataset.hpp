#pragma once

#include "hichunk/envbench.hpp"
#include "hichunk/network.hpp"
#include "hichunk/temporal.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hichunk {

class RetryBudgetExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// `count` successful scripted episodes. Failed runs are discarded and replaced by the next
// derived seed; gives up after `retry_budget` failures (default: count).
std::vector<EpisodeRecord> generate_demos(const std::string& task_id, int count, std::uint64_t seed,
                                          int retry_budget = -1);

// Per-dimension range mapped to [-1, 1].
struct MinMax {
    Vec lo;
    Vec hi;

    static constexpr double kWiden = 1e-6;
    bool operator==(const MinMax&) const = default;
};

struct NormalizationStats {
    MinMax visual;
    MinMax proprio;
    MinMax action;

    bool operator==(const NormalizationStats&) const = default;
};

NormalizationStats fit_normalizer(const std::vector<EpisodeRecord>& episodes);

Vec normalize(const Vec& x, const MinMax& range);
Vec denormalize(const Vec& x, const MinMax& range);
Observation normalize(const Observation& o, const NormalizationStats& stats);
Action normalize(const Action& a, const NormalizationStats& stats);
Action denormalize(const Action& a, const NormalizationStats& stats);

struct TrainingSample {
    HierarchicalHistory history;  // normalised
    HierarchicalChunk chunk;      // normalised
    std::size_t t = 0;
    std::size_t episode_id = 0;
};

// Uniform over all (episode, t) pairs.
std::vector<TrainingSample> sample_batch(const std::vector<EpisodeRecord>& episodes, const NormalizationStats& stats,
                                         const FrequencyLadder& ladder, int history_len, int chunk_len, int batch,
                                         Rng& rng);

// Episodes with every field already normalised, for repeated sampling.
std::vector<EpisodeRecord> normalize_episodes(const std::vector<EpisodeRecord>& episodes,
                                              const NormalizationStats& stats);
// Same draw as sample_batch on pre-normalised episodes.
std::vector<TrainingSample> sample_normalized(const std::vector<EpisodeRecord>& normalized,
                                              const FrequencyLadder& ladder, int history_len, int chunk_len,
                                              int batch, Rng& rng);

template <typename T>
HistoryBatch<T> pack_histories(const std::vector<HierarchicalHistory>& histories);
MatD pack_chunks(const std::vector<HierarchicalChunk>& chunks);

// Episode file: 4-byte magic "HCEP", u32 version, u64 header length, JSON header, then
// little-endian float64 arrays visual (T x dv), proprio (T x dp), actions (T x da).
inline constexpr std::uint32_t kEpisodeFormatVersion = 1;
void save_episode(const std::filesystem::path& path, const EpisodeRecord& episode);
EpisodeRecord load_episode(const std::filesystem::path& path);

std::string stats_to_json(const NormalizationStats& stats);
NormalizationStats stats_from_json(const std::string& text);
void save_stats(const std::filesystem::path& path, const NormalizationStats& stats);
NormalizationStats load_stats(const std::filesystem::path& path);

// <root>/<task>/episode_<n>.bin plus <root>/<task>/stats.json.
std::filesystem::path task_dir(const std::filesystem::path& root, const std::string& task_id);
void write_dataset(const std::filesystem::path& root, const std::string& task_id,
                   const std::vector<EpisodeRecord>& episodes, bool force);
std::vector<EpisodeRecord> load_dataset(const std::filesystem::path& root, const std::string& task_id);

}  // namespace hichunk
