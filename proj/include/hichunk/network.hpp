#pragma once

#include "hichunk/nn/layers.hpp"

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hichunk {

using nn::Var;

// Which per-frequency observation histories feed the per-frequency FiLM conditions.
enum class ConditionMode {
    Hierarchical,  // frequency m is conditioned on the stride-m history
    HighOnly,      // every frequency sees the stride-1 history
    LowOnly,       // every frequency sees the coarsest history
};

std::string to_string(ConditionMode mode);
ConditionMode condition_mode_from_string(const std::string& s);

struct DenoiserConfig {
    int num_frequencies = 3;  // M
    int history_len = 3;      // L_h
    int chunk_len = 8;        // L_c
    int action_dim = 3;       // D_a
    int visual_dim = 2;
    int proprio_dim = 3;
    int hidden = 32;  // C
    std::vector<int> unet_channels{32, 64, 64};
    int step_embed_dim = 128;
    int attention_heads = 4;
    int kernel_size = 5;
    int norm_groups = 8;
    bool global_fusion = true;
    ConditionMode condition = ConditionMode::Hierarchical;

    int trunk_length() const { return num_frequencies * chunk_len; }

    void validate() const {
        auto positive = [](int v, const char* name) {
            if (v < 1) throw std::invalid_argument(std::string("denoiser config: ") + name + " must be positive");
        };
        positive(num_frequencies, "num_frequencies");
        positive(history_len, "history_len");
        positive(chunk_len, "chunk_len");
        positive(action_dim, "action_dim");
        positive(visual_dim, "visual_dim");
        positive(proprio_dim, "proprio_dim");
        positive(hidden, "hidden");
        positive(step_embed_dim, "step_embed_dim");
        positive(attention_heads, "attention_heads");
        positive(kernel_size, "kernel_size");
        positive(norm_groups, "norm_groups");
        if (unet_channels.empty()) throw std::invalid_argument("denoiser config: unet_channels is empty");
        for (int c : unet_channels) {
            positive(c, "unet channel");
            if (c % norm_groups != 0) throw std::invalid_argument("denoiser config: channels must divide into groups");
        }
        if (hidden % attention_heads != 0) throw std::invalid_argument("denoiser config: hidden % heads != 0");
        if (step_embed_dim % 2 != 0) throw std::invalid_argument("denoiser config: step_embed_dim must be even");
        if (kernel_size % 2 == 0) throw std::invalid_argument("denoiser config: kernel_size must be odd");
    }

    bool operator==(const DenoiserConfig&) const = default;
};

// Normalised observation histories for a batch. Rows are ordered (item, frequency, frame):
// row (b * M + m) * L_h + i.
template <typename T>
struct HistoryBatch {
    Mat<T> visual;
    Mat<T> proprio;
    Eigen::Index batch = 0;
};

// Observation-dependent tensors of one forward pass; reusable across diffusion steps.
template <typename T>
struct Conditioning {
    Var film_local;  // (B * M * L_c, 2C) scale/shift of the per-frequency FiLM
    Var film_fused;  // (B * M * L_c, 2C) scale/shift of the post-fusion FiLM
    Var obs_flat;    // (B, M * L_h * C)
    Eigen::Index batch = 0;
};

// Same tensors detached from any tape, for sampling loops.
template <typename T>
struct CachedConditioning {
    Mat<T> film_local;
    Mat<T> film_fused;
    Mat<T> obs_flat;
    Eigen::Index batch = 0;
};

// epsilon-prediction network over flattened hierarchical chunks (M * L_c, D_a).
template <typename T>
class Denoiser {
public:
    Denoiser(const DenoiserConfig& config, std::uint64_t seed) : cfg_(config) {
        cfg_.validate();
        Rng rng(seed);
        const int C = cfg_.hidden;
        const int M = cfg_.num_frequencies;
        vis_fc1_ = nn::Linear<T>(cfg_.visual_dim, C, rng);
        vis_fc2_ = nn::Linear<T>(C, C, rng);
        prop_fc1_ = nn::Linear<T>(cfg_.proprio_dim, C, rng);
        prop_fc2_ = nn::Linear<T>(C, C, rng);
        obs_proj_ = nn::Linear<T>(2 * C, C, rng);
        action_embed_ = nn::Linear<T>(cfg_.action_dim, C, rng);
        position_.value = nn::uniform_init<T>(cfg_.trunk_length(), C, 0.1, rng);
        film_local_ = nn::FiLM<T>(C, C, rng);
        if (cfg_.global_fusion) {
            attention_ = nn::ClsCrossAttention<T>(C, cfg_.attention_heads, rng);
            const int lt = cfg_.trunk_length();
            fuse_mix_.value = Mat<T>::Zero(lt, lt + cfg_.chunk_len);
            fuse_mix_.value.leftCols(lt).setIdentity();
            fuse_mix_.value.rightCols(cfg_.chunk_len) =
                nn::uniform_init<T>(lt, cfg_.chunk_len, 0.1 / std::sqrt(double(cfg_.chunk_len)), rng);
        }
        film_fused_ = nn::FiLM<T>(C, C, rng);
        step_embed_ = nn::StepEmbedding<T>(cfg_.step_embed_dim, cfg_.step_embed_dim, rng);

        const int cond_dim = cfg_.step_embed_dim + M * cfg_.history_len * C;
        const auto& ch = cfg_.unet_channels;
        const int K = cfg_.kernel_size;
        const int G = cfg_.norm_groups;
        int prev = C;
        for (std::size_t i = 0; i < ch.size(); ++i) {
            down_.emplace_back(prev, ch[i], cond_dim, K, G, rng);
            if (i + 1 < ch.size()) downsample_.emplace_back(ch[i], ch[i], 3, 2, 1, rng);
            prev = ch[i];
        }
        mid_ = nn::ResBlock1d<T>(prev, prev, cond_dim, K, G, rng);
        for (std::size_t i = ch.size() - 1; i-- > 0;) {
            upsample_.emplace_back(prev, prev, 3, 1, 1, rng);
            up_.emplace_back(prev + ch[i], ch[i], cond_dim, K, G, rng);
            prev = ch[i];
        }
        final_conv_ = nn::Conv1d<T>(prev, prev, K, 1, K / 2, rng);
        final_norm_ = nn::GroupNorm<T>(prev, G);
        head_ = nn::Linear<T>(prev, cfg_.action_dim, rng);

        interp_ = interpolation_matrix(cfg_.history_len, cfg_.chunk_len);
    }

    const DenoiserConfig& config() const { return cfg_; }

    // Linear interpolation from `from` positions onto `to` positions, (to, from).
    static Mat<T> interpolation_matrix(int from, int to) {
        Mat<T> p = Mat<T>::Zero(to, from);
        for (int j = 0; j < to; ++j) {
            if (from == 1) {
                p(j, 0) = T(1);
                continue;
            }
            const double u = to == 1 ? double(from - 1) : double(j) * (from - 1) / (to - 1);
            const int lo = std::min(static_cast<int>(u), from - 2);
            const double w = u - lo;
            p(j, lo) = static_cast<T>(1.0 - w);
            p(j, lo + 1) = static_cast<T>(w);
        }
        return p;
    }

    // Per-frequency observation features, (B * M * L_h, C). Encoder weights are shared
    // across frequencies.
    Var encode_observations(nn::Tape<T>& tape, const HistoryBatch<T>& history) {
        const auto rows = history.batch * cfg_.num_frequencies * cfg_.history_len;
        if (history.visual.rows() != rows || history.proprio.rows() != rows) {
            throw std::invalid_argument("history rows != batch * M * L_h");
        }
        if (history.visual.cols() != cfg_.visual_dim || history.proprio.cols() != cfg_.proprio_dim) {
            throw std::invalid_argument("history feature width does not match the denoiser config");
        }
        Var v = tape.constant(select_condition(history.visual, history.batch));
        Var p = tape.constant(select_condition(history.proprio, history.batch));
        Var fv = vis_fc2_(tape, nn::ops::silu(tape, vis_fc1_(tape, v)));
        Var fp = prop_fc2_(tape, nn::ops::silu(tape, prop_fc1_(tape, p)));
        return obs_proj_(tape, nn::ops::concat_cols(tape, fv, fp));
    }

    Conditioning<T> condition(nn::Tape<T>& tape, const HistoryBatch<T>& history) {
        const Eigen::Index B = history.batch;
        const int M = cfg_.num_frequencies;
        Var feats = encode_observations(tape, history);
        // Stretch each frequency's L_h features onto its L_c chunk positions.
        Var stretched = nn::ops::time_mix(tape, feats, tape.constant(interp_), B * M);
        Conditioning<T> c;
        c.film_local = film_local_.modulation(tape, stretched);
        c.film_fused = film_fused_.modulation(tape, stretched);
        c.obs_flat = nn::ops::reshape(tape, feats, B, static_cast<Eigen::Index>(M) * cfg_.history_len * cfg_.hidden);
        c.batch = B;
        return c;
    }

    // CLS cross-attention over all M * L_c action tokens of each item, (B, C).
    Var global_fuse(nn::Tape<T>& tape, Var action_tokens, Eigen::Index batch, Mat<T>* weights = nullptr) {
        return attention_(tape, action_tokens, batch, cfg_.trunk_length(), weights);
    }

    // noisy: (B * M * L_c, D_a); steps: one diffusion step per batch item.
    Var denoise(nn::Tape<T>& tape, const Conditioning<T>& cond, Var noisy, const std::vector<double>& steps) {
        const Eigen::Index B = cond.batch;
        const Eigen::Index L = cfg_.trunk_length();
        if (tape.value(noisy).rows() != B * L || tape.value(noisy).cols() != cfg_.action_dim) {
            throw std::invalid_argument("noisy chunk shape != (B * M * L_c, D_a)");
        }
        if (static_cast<Eigen::Index>(steps.size()) != B) throw std::invalid_argument("one step per batch item");

        Var x = action_embed_(tape, noisy);
        x = nn::ops::add(tape, x, nn::ops::broadcast_rows_tiled(tape, tape.param(position_), B));
        x = film_local_.apply(tape, cond.film_local, x);
        if (cfg_.global_fusion) {
            Var global = global_fuse(tape, x, B);
            Var tiled = nn::ops::broadcast_rows(tape, global, cfg_.chunk_len);
            Var joined = nn::ops::concat_time(tape, x, tiled, B);
            x = nn::ops::time_mix(tape, joined, tape.param(fuse_mix_), B);
        }
        x = film_fused_.apply(tape, cond.film_fused, x);

        Var block_cond = nn::ops::concat_cols(tape, step_embed_(tape, steps), cond.obs_flat);
        std::vector<Var> skips;
        std::vector<Eigen::Index> lengths;
        Eigen::Index len = L;
        for (std::size_t i = 0; i < down_.size(); ++i) {
            x = down_[i](tape, x, block_cond, B, len);
            if (i < downsample_.size()) {
                skips.push_back(x);
                lengths.push_back(len);
                x = downsample_[i](tape, x, B, len);
            }
        }
        x = mid_(tape, x, block_cond, B, len);
        for (std::size_t i = 0; i < up_.size(); ++i) {
            const Var skip = skips.back();
            const Eigen::Index target = lengths.back();
            skips.pop_back();
            lengths.pop_back();
            x = nn::ops::upsample_nearest(tape, x, B, len, target);
            len = target;
            x = upsample_[i](tape, x, B, len);
            x = up_[i](tape, nn::ops::concat_cols(tape, x, skip), block_cond, B, len);
        }
        x = final_conv_(tape, x, B, len);
        x = nn::ops::silu(tape, final_norm_(tape, x, B, len));
        return head_(tape, x);
    }

    // Full forward for a batch without gradient tracking.
    Mat<T> predict_noise(const Mat<T>& noisy, const std::vector<double>& steps, const HistoryBatch<T>& history) {
        nn::Tape<T> tape(false);
        auto c = condition(tape, history);
        return tape.value(denoise(tape, c, tape.constant(noisy), steps));
    }

    // Conditioning for each history item repeated `repeat` times (item-major), detached.
    CachedConditioning<T> cache_conditioning(const HistoryBatch<T>& history, Eigen::Index repeat) {
        nn::Tape<T> tape(false);
        auto c = condition(tape, history);
        CachedConditioning<T> out;
        out.batch = history.batch * repeat;
        out.film_local = repeat_items(tape.value(c.film_local), history.batch, repeat);
        out.film_fused = repeat_items(tape.value(c.film_fused), history.batch, repeat);
        out.obs_flat = repeat_items(tape.value(c.obs_flat), history.batch, repeat);
        return out;
    }

    Mat<T> predict_noise(const CachedConditioning<T>& cached, const Mat<T>& noisy, const std::vector<double>& steps) {
        nn::Tape<T> tape(false);
        Conditioning<T> c{tape.constant(cached.film_local), tape.constant(cached.film_fused),
                          tape.constant(cached.obs_flat), cached.batch};
        return tape.value(denoise(tape, c, tape.constant(noisy), steps));
    }

    std::vector<std::pair<std::string, nn::Parameter<T>*>> named_parameters() {
        std::vector<std::pair<std::string, nn::Parameter<T>*>> out;
        visit([&](const std::string& name, nn::Parameter<T>& p) { out.emplace_back(name, &p); });
        return out;
    }

    std::vector<nn::Parameter<T>*> parameters() {
        std::vector<nn::Parameter<T>*> out;
        visit([&](const std::string&, nn::Parameter<T>& p) { out.push_back(&p); });
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        visit([&](const std::string&, nn::Parameter<T>& p) { n += static_cast<std::size_t>(p.value.size()); });
        return n;
    }

    void zero_grad() {
        visit([](const std::string&, nn::Parameter<T>& p) { p.zero_grad(); });
    }

    void visit(const nn::ParamVisitor<T>& f) {
        vis_fc1_.visit("obs.visual.fc1", f);
        vis_fc2_.visit("obs.visual.fc2", f);
        prop_fc1_.visit("obs.proprio.fc1", f);
        prop_fc2_.visit("obs.proprio.fc2", f);
        obs_proj_.visit("obs.proj", f);
        action_embed_.visit("action_embed", f);
        f("position", position_);
        film_local_.visit("film_local", f);
        if (cfg_.global_fusion) {
            attention_.visit("fusion.attention", f);
            f("fusion.mix", fuse_mix_);
        }
        film_fused_.visit("film_fused", f);
        step_embed_.visit("step_embed", f);
        for (std::size_t i = 0; i < down_.size(); ++i) down_[i].visit("down" + std::to_string(i), f);
        for (std::size_t i = 0; i < downsample_.size(); ++i) downsample_[i].visit("downsample" + std::to_string(i), f);
        mid_.visit("mid", f);
        for (std::size_t i = 0; i < upsample_.size(); ++i) upsample_[i].visit("upsample" + std::to_string(i), f);
        for (std::size_t i = 0; i < up_.size(); ++i) up_[i].visit("up" + std::to_string(i), f);
        final_conv_.visit("final.conv", f);
        final_norm_.visit("final.norm", f);
        head_.visit("head", f);
    }

    nn::FiLM<T>& local_film() { return film_local_; }
    nn::ClsCrossAttention<T>& attention() { return attention_; }

private:
    // Applies the condition mode by substituting one stride's frames for every frequency.
    Mat<T> select_condition(const Mat<T>& rows, Eigen::Index batch) const {
        if (cfg_.condition == ConditionMode::Hierarchical || cfg_.num_frequencies == 1) return rows;
        const int M = cfg_.num_frequencies;
        const int Lh = cfg_.history_len;
        const int src = cfg_.condition == ConditionMode::HighOnly ? 0 : M - 1;
        Mat<T> out(rows.rows(), rows.cols());
        for (Eigen::Index b = 0; b < batch; ++b) {
            for (int m = 0; m < M; ++m) {
                out.middleRows((b * M + m) * Lh, Lh) = rows.middleRows((b * M + src) * Lh, Lh);
            }
        }
        return out;
    }

    static Mat<T> repeat_items(const Mat<T>& m, Eigen::Index items, Eigen::Index repeat) {
        const Eigen::Index per = m.rows() / items;
        Mat<T> out(m.rows() * repeat, m.cols());
        for (Eigen::Index i = 0; i < items; ++i) {
            for (Eigen::Index r = 0; r < repeat; ++r) out.middleRows((i * repeat + r) * per, per) = m.middleRows(i * per, per);
        }
        return out;
    }

    DenoiserConfig cfg_;
    nn::Linear<T> vis_fc1_, vis_fc2_, prop_fc1_, prop_fc2_, obs_proj_;
    nn::Linear<T> action_embed_;
    nn::Parameter<T> position_;  // (M * L_c, C)
    nn::FiLM<T> film_local_;
    nn::ClsCrossAttention<T> attention_;
    nn::Parameter<T> fuse_mix_;  // (M * L_c, (M + 1) * L_c)
    nn::FiLM<T> film_fused_;
    nn::StepEmbedding<T> step_embed_;
    std::vector<nn::ResBlock1d<T>> down_;
    std::vector<nn::Conv1d<T>> downsample_;
    nn::ResBlock1d<T> mid_;
    std::vector<nn::Conv1d<T>> upsample_;
    std::vector<nn::ResBlock1d<T>> up_;
    nn::Conv1d<T> final_conv_;
    nn::GroupNorm<T> final_norm_;
    nn::Linear<T> head_;
    Mat<T> interp_;
};

}  // namespace hichunk
