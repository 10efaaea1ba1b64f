#pragma once

#include "hichunk/temporal.hpp"

#include <doctest.h>

namespace hichunk::testing {

// Episode whose observation/action at base step i carry i in every entry.
inline EpisodeRecord indexed_episode(std::size_t length, int visual_dim = 2, int proprio_dim = 3, int action_dim = 3) {
    EpisodeRecord ep;
    ep.task_id = "synthetic";
    ep.success = true;
    for (std::size_t i = 0; i < length; ++i) {
        const double v = static_cast<double>(i);
        ep.observations.push_back({Vec(static_cast<std::size_t>(visual_dim), v), Vec(static_cast<std::size_t>(proprio_dim), v)});
        ep.actions.push_back({Vec(static_cast<std::size_t>(action_dim), v)});
    }
    return ep;
}

inline std::vector<std::vector<std::size_t>> history_ids(const HierarchicalHistory& h) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& seq : h.per_frequency) {
        std::vector<std::size_t> ids;
        for (const auto& o : seq) ids.push_back(static_cast<std::size_t>(o.visual.front()));
        out.push_back(ids);
    }
    return out;
}

inline std::vector<std::vector<std::size_t>> chunk_ids(const HierarchicalChunk& c) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& seq : c.per_frequency) {
        std::vector<std::size_t> ids;
        for (const auto& a : seq) ids.push_back(static_cast<std::size_t>(a.command.front()));
        out.push_back(ids);
    }
    return out;
}

}  // namespace hichunk::testing
