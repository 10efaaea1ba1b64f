#pragma once

#include "hichunk/nn/ops.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace hichunk::nn {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Parameter<T>&)>;

template <typename T>
Mat<T> uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    Mat<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    return m;
}

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(int in, int out, Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        weight.value = uniform_init<T>(in, out, bound, rng);
        bias.value = uniform_init<T>(1, out, bound, rng);
    }

    Var operator()(Tape<T>& tape, Var x) { return ops::linear(tape, x, tape.param(weight), tape.param(bias)); }

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        f(prefix + ".weight", weight);
        f(prefix + ".bias", bias);
    }

    int in_features() const { return static_cast<int>(weight.value.rows()); }
    int out_features() const { return static_cast<int>(weight.value.cols()); }

    Parameter<T> weight;  // (in, out)
    Parameter<T> bias;    // (1, out)
};

template <typename T>
class Conv1d {
public:
    Conv1d() = default;
    Conv1d(int in, int out, int kernel, int stride, int padding, Rng& rng)
        : kernel_(kernel), stride_(stride), padding_(padding) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel));
        weight.value = uniform_init<T>(static_cast<Eigen::Index>(kernel) * in, out, bound, rng);
        bias.value = uniform_init<T>(1, out, bound, rng);
    }

    // Returns the output; `length` is updated to the output length.
    Var operator()(Tape<T>& tape, Var x, Eigen::Index batch, Eigen::Index& length) {
        Eigen::Index lout = 0;
        Var y = ops::conv1d(tape, x, tape.param(weight), tape.param(bias), batch, length, kernel_, stride_, padding_,
                            &lout);
        length = lout;
        return y;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        f(prefix + ".weight", weight);
        f(prefix + ".bias", bias);
    }

    Parameter<T> weight;
    Parameter<T> bias;

private:
    int kernel_ = 1;
    int stride_ = 1;
    int padding_ = 0;
};

template <typename T>
class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(int channels, int groups) : groups_(groups) {
        gamma.value = Mat<T>::Ones(1, channels);
        beta.value = Mat<T>::Zero(1, channels);
    }

    Var operator()(Tape<T>& tape, Var x, Eigen::Index batch, Eigen::Index length) {
        return ops::group_norm(tape, x, tape.param(gamma), tape.param(beta), batch, length, groups_);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        f(prefix + ".gamma", gamma);
        f(prefix + ".beta", beta);
    }

    Parameter<T> gamma;
    Parameter<T> beta;

private:
    int groups_ = 1;
};

// Feature-wise linear modulation: [scale | shift] = cond * W + b, out = scale .* x + shift.
// The bias starts at scale = 1, shift = 0.
template <typename T>
class FiLM {
public:
    FiLM() = default;
    FiLM(int cond_dim, int channels, Rng& rng) : channels_(channels), proj_(cond_dim, 2 * channels, rng) {
        proj_.bias.value.leftCols(channels).setOnes();
        proj_.bias.value.rightCols(channels).setZero();
    }

    // cond and x share their row count.
    Var operator()(Tape<T>& tape, Var cond, Var x) { return apply(tape, modulation(tape, cond), x); }

    // [scale | shift] rows for a conditioning input; can be cached when cond is fixed.
    Var modulation(Tape<T>& tape, Var cond) { return proj_(tape, cond); }

    Var apply(Tape<T>& tape, Var scale_shift, Var x) {
        Var scale = ops::slice_cols(tape, scale_shift, 0, channels_);
        Var shift = ops::slice_cols(tape, scale_shift, channels_, channels_);
        return ops::add(tape, ops::mul(tape, scale, x), shift);
    }

    // cond has one row per batch item and is broadcast over `length` positions.
    Var broadcast(Tape<T>& tape, Var cond, Var x, Eigen::Index length) {
        return apply(tape, ops::broadcast_rows(tape, modulation(tape, cond), length), x);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& f) { proj_.visit(prefix + ".proj", f); }

    Linear<T>& projection() { return proj_; }
    int channels() const { return channels_; }

private:
    int channels_ = 0;
    Linear<T> proj_;
};

// Sinusoidal embedding of the diffusion step followed by a two-layer perceptron.
template <typename T>
class StepEmbedding {
public:
    StepEmbedding() = default;
    StepEmbedding(int embed_dim, int out_dim, Rng& rng)
        : embed_dim_(embed_dim), fc1_(embed_dim, out_dim, rng), fc2_(out_dim, out_dim, rng) {}

    static Mat<T> sinusoid(const std::vector<double>& steps, int dim) {
        const int half = dim / 2;
        Mat<T> out(static_cast<Eigen::Index>(steps.size()), dim);
        const double factor = half > 1 ? std::log(10000.0) / (half - 1) : 0.0;
        for (std::size_t r = 0; r < steps.size(); ++r) {
            for (int i = 0; i < half; ++i) {
                const double arg = steps[r] * std::exp(-factor * i);
                out(static_cast<Eigen::Index>(r), i) = static_cast<T>(std::sin(arg));
                out(static_cast<Eigen::Index>(r), half + i) = static_cast<T>(std::cos(arg));
            }
        }
        return out;
    }

    Var operator()(Tape<T>& tape, const std::vector<double>& steps) {
        Var e = tape.constant(sinusoid(steps, embed_dim_));
        return fc2_(tape, ops::silu(tape, fc1_(tape, e)));
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        fc1_.visit(prefix + ".fc1", f);
        fc2_.visit(prefix + ".fc2", f);
    }

    int embed_dim() const { return embed_dim_; }

private:
    int embed_dim_ = 128;
    Linear<T> fc1_;
    Linear<T> fc2_;
};

// Cross-attention from a learned CLS query onto a token set; returns one summary row per
// batch item.
template <typename T>
class ClsCrossAttention {
public:
    ClsCrossAttention() = default;
    ClsCrossAttention(int width, int heads, Rng& rng)
        : heads_(heads), q_(width, width, rng), k_(width, width, rng), v_(width, width, rng), out_(width, width, rng) {
        cls.value = uniform_init<T>(1, width, 1.0, rng);
    }

    Var operator()(Tape<T>& tape, Var tokens, Eigen::Index batch, Eigen::Index seq, Mat<T>* weights = nullptr) {
        Var query = q_(tape, tape.param(cls));
        Var keys = k_(tape, tokens);
        Var values = v_(tape, tokens);
        return out_(tape, ops::query_attention(tape, query, keys, values, batch, seq, heads_, weights));
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        f(prefix + ".cls", cls);
        q_.visit(prefix + ".q", f);
        k_.visit(prefix + ".k", f);
        v_.visit(prefix + ".v", f);
        out_.visit(prefix + ".out", f);
    }

    Linear<T>& query_proj() { return q_; }
    Linear<T>& key_proj() { return k_; }
    Linear<T>& value_proj() { return v_; }
    Linear<T>& out_proj() { return out_; }

    Parameter<T> cls;

private:
    int heads_ = 1;
    Linear<T> q_, k_, v_, out_;
};

// conv -> GN -> SiLU -> FiLM(cond) -> conv -> GN -> SiLU, plus a (1x1 conv) residual.
template <typename T>
class ResBlock1d {
public:
    ResBlock1d() = default;
    ResBlock1d(int in, int out, int cond_dim, int kernel, int groups, Rng& rng)
        : conv1_(in, out, kernel, 1, kernel / 2, rng),
          conv2_(out, out, kernel, 1, kernel / 2, rng),
          norm1_(out, groups),
          norm2_(out, groups),
          film_(cond_dim, out, rng),
          has_residual_proj_(in != out) {
        if (has_residual_proj_) residual_ = Conv1d<T>(in, out, 1, 1, 0, rng);
    }

    Var operator()(Tape<T>& tape, Var x, Var cond, Eigen::Index batch, Eigen::Index length) {
        Eigen::Index l = length;
        Var h = conv1_(tape, x, batch, l);
        h = ops::silu(tape, norm1_(tape, h, batch, l));
        h = film_.broadcast(tape, cond, h, l);
        h = conv2_(tape, h, batch, l);
        h = ops::silu(tape, norm2_(tape, h, batch, l));
        Var skip = x;
        if (has_residual_proj_) {
            Eigen::Index lr = length;
            skip = residual_(tape, x, batch, lr);
        }
        return ops::add(tape, h, skip);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        conv1_.visit(prefix + ".conv1", f);
        norm1_.visit(prefix + ".norm1", f);
        film_.visit(prefix + ".film", f);
        conv2_.visit(prefix + ".conv2", f);
        norm2_.visit(prefix + ".norm2", f);
        if (has_residual_proj_) residual_.visit(prefix + ".residual", f);
    }

private:
    Conv1d<T> conv1_, conv2_;
    GroupNorm<T> norm1_, norm2_;
    FiLM<T> film_;
    bool has_residual_proj_ = false;
    Conv1d<T> residual_;
};

}  // namespace hichunk::nn
