#include "hichunk/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hichunk {

FrequencyLadder::FrequencyLadder(std::vector<int> strides, std::vector<double> thresholds, double base_rate_hz)
    : strides_(std::move(strides)), thresholds_(std::move(thresholds)), base_rate_hz_(base_rate_hz) {
    if (strides_.empty()) throw std::invalid_argument("frequency ladder needs at least one stride");
    if (strides_.front() != 1) throw std::invalid_argument("first stride must be 1");
    for (std::size_t i = 1; i < strides_.size(); ++i) {
        if (strides_[i] <= strides_[i - 1]) throw std::invalid_argument("strides must be strictly ascending");
    }
    if (thresholds_.size() != strides_.size() + 1) {
        throw std::invalid_argument("ladder needs M+1 thresholds");
    }
    if (thresholds_.front() != -std::numeric_limits<double>::infinity() ||
        thresholds_.back() != std::numeric_limits<double>::infinity()) {
        throw std::invalid_argument("threshold list must start at -inf and end at +inf");
    }
    for (std::size_t i = 1; i < thresholds_.size(); ++i) {
        if (!(thresholds_[i] > thresholds_[i - 1])) throw std::invalid_argument("thresholds must be strictly ascending");
    }
    if (!(base_rate_hz_ > 0.0)) throw std::invalid_argument("base rate must be positive");
}

FrequencyLadder FrequencyLadder::with_inner_thresholds(std::vector<int> strides, const std::vector<double>& inner,
                                                       double base_rate_hz) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> th{-inf};
    th.insert(th.end(), inner.begin(), inner.end());
    th.push_back(inf);
    return FrequencyLadder(std::move(strides), std::move(th), base_rate_hz);
}

FrequencyLadder FrequencyLadder::standard() { return with_inner_thresholds({1, 2, 4}, {-6.0, -5.5}); }

FrequencyLadder FrequencyLadder::single() { return with_inner_thresholds({1}, {}); }

FrequencyLadder FrequencyLadder::with_thresholds(std::vector<double> thresholds) const {
    return FrequencyLadder(strides_, std::move(thresholds), base_rate_hz_);
}

std::vector<std::vector<std::size_t>> history_indices(std::size_t episode_length, std::size_t t,
                                                      const FrequencyLadder& ladder, int history_len) {
    if (history_len < 1) throw std::invalid_argument("history length must be >= 1");
    if (episode_length == 0) throw std::invalid_argument("episode is empty");
    if (t >= episode_length) throw std::out_of_range("history index beyond episode end");
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(ladder.size()));
    for (int m = 0; m < ladder.size(); ++m) {
        const auto s = static_cast<std::int64_t>(ladder.stride(m));
        auto& seq = out[static_cast<std::size_t>(m)];
        seq.reserve(static_cast<std::size_t>(history_len));
        for (int i = 0; i < history_len; ++i) {
            const std::int64_t idx = static_cast<std::int64_t>(t) - (history_len - 1 - i) * s;
            seq.push_back(static_cast<std::size_t>(std::max<std::int64_t>(idx, 0)));
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> chunk_indices(std::size_t episode_length, std::size_t t,
                                                    const FrequencyLadder& ladder, int chunk_len) {
    if (chunk_len < 1) throw std::invalid_argument("chunk length must be >= 1");
    if (episode_length == 0) throw std::invalid_argument("episode is empty");
    if (t >= episode_length) throw std::out_of_range("chunk index beyond episode end");
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(ladder.size()));
    for (int m = 0; m < ladder.size(); ++m) {
        const auto s = static_cast<std::size_t>(ladder.stride(m));
        auto& seq = out[static_cast<std::size_t>(m)];
        seq.reserve(static_cast<std::size_t>(chunk_len));
        for (int j = 0; j < chunk_len; ++j) {
            seq.push_back(std::min(t + static_cast<std::size_t>(j) * s, episode_length - 1));
        }
    }
    return out;
}

HierarchicalHistory resample_history(const std::vector<Observation>& observations, std::size_t t,
                                     const FrequencyLadder& ladder, int history_len) {
    const auto idx = history_indices(observations.size(), t, ladder, history_len);
    HierarchicalHistory h;
    h.per_frequency.resize(idx.size());
    for (std::size_t m = 0; m < idx.size(); ++m) {
        for (auto i : idx[m]) h.per_frequency[m].push_back(observations[i]);
    }
    return h;
}

HierarchicalHistory resample_history(const EpisodeRecord& episode, std::size_t t, const FrequencyLadder& ladder,
                                     int history_len) {
    return resample_history(episode.observations, t, ladder, history_len);
}

HierarchicalChunk resample_chunk(const EpisodeRecord& episode, std::size_t t, const FrequencyLadder& ladder,
                                 int chunk_len) {
    const auto idx = chunk_indices(episode.actions.size(), t, ladder, chunk_len);
    HierarchicalChunk c;
    c.per_frequency.resize(idx.size());
    for (std::size_t m = 0; m < idx.size(); ++m) {
        for (auto i : idx[m]) c.per_frequency[m].push_back(episode.actions[i]);
    }
    return c;
}

MatD flatten(const HierarchicalChunk& chunk) {
    const int M = chunk.num_frequencies();
    const int L = chunk.length();
    if (M == 0 || L == 0) throw std::invalid_argument("cannot flatten an empty chunk");
    const auto D = chunk.per_frequency[0][0].command.size();
    MatD out(M * L, static_cast<Eigen::Index>(D));
    for (int m = 0; m < M; ++m) {
        const auto& seq = chunk.per_frequency[static_cast<std::size_t>(m)];
        if (static_cast<int>(seq.size()) != L) throw std::invalid_argument("ragged chunk");
        for (int j = 0; j < L; ++j) {
            const auto& a = seq[static_cast<std::size_t>(j)].command;
            if (a.size() != D) throw std::invalid_argument("inconsistent action dimension");
            for (std::size_t d = 0; d < D; ++d) out(m * L + j, static_cast<Eigen::Index>(d)) = a[d];
        }
    }
    return out;
}

HierarchicalChunk unflatten(const MatD& flat, int num_frequencies, int chunk_len) {
    if (num_frequencies < 1 || chunk_len < 1 || flat.rows() != num_frequencies * chunk_len) {
        throw std::invalid_argument("flattened chunk shape does not match (M * L_c, D_a)");
    }
    HierarchicalChunk c;
    c.per_frequency.resize(static_cast<std::size_t>(num_frequencies));
    for (int m = 0; m < num_frequencies; ++m) {
        auto& seq = c.per_frequency[static_cast<std::size_t>(m)];
        seq.resize(static_cast<std::size_t>(chunk_len));
        for (int j = 0; j < chunk_len; ++j) {
            const auto row = flat.row(m * chunk_len + j);
            seq[static_cast<std::size_t>(j)].command.assign(row.data(), row.data() + row.size());
        }
    }
    return c;
}

}  // namespace hichunk
