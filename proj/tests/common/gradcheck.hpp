#pragma once

// Central finite-difference checks for the custom layers, double precision.

#include "hichunk/network.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace hichunk::testing {

using ParamD = nn::Parameter<double>;
using LossFn = std::function<Var(nn::Tape<double>&)>;

struct GradReport {
    double max_rel_err = 0.0;
    std::string worst;
    int checked = 0;
};

// Gradients that vanish analytically (a key bias under softmax) leave only round-off
// of order eps / h in the difference quotient, hence the 1e-4 floor on the scale.
inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

// Compares tape gradients of `loss` against (f(x+h) - f(x-h)) / 2h for every entry of every
// parameter.
inline GradReport check_gradients(const std::vector<std::pair<std::string, ParamD*>>& params, const LossFn& loss,
                                  double h = 1e-6) {
    for (auto& [_, p] : params) p->zero_grad();
    {
        nn::Tape<double> tape(true);
        tape.backward(loss(tape));
    }
    auto eval = [&] {
        nn::Tape<double> tape(false);
        return tape.value(loss(tape))(0, 0);
    };
    GradReport rep;
    for (auto& [name, p] : params) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            double& x = p->value.data()[i];
            const double saved = x;
            x = saved + h;
            const double up = eval();
            x = saved - h;
            const double down = eval();
            x = saved;
            const double err = relative_error(p->grad.data()[i], (up - down) / (2 * h));
            ++rep.checked;
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

inline MatD random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    MatD m(r, c);
    rng.fill_normal(m);
    return m * scale;
}

// FiLM over random (rows, C) inputs; checks weights and both inputs.
inline GradReport film_gradcheck(std::uint64_t seed) {
    Rng rng(seed);
    const int C = rng.uniform_int(2, 5);
    const int D = rng.uniform_int(2, 5);
    const int rows = rng.uniform_int(1, 6);
    nn::FiLM<double> film(D, C, rng);
    // Move away from the identity initialisation so scale and shift both matter.
    film.projection().weight.value = random_mat(D, 2 * C, rng, 0.5);
    film.projection().bias.value = random_mat(1, 2 * C, rng, 0.5);
    ParamD cond{"cond", random_mat(rows, D, rng), {}};
    ParamD x{"x", random_mat(rows, C, rng), {}};
    const MatD w = random_mat(rows, C, rng);
    std::vector<std::pair<std::string, ParamD*>> params{{"cond", &cond}, {"x", &x}};
    film.visit("film", [&](const std::string& n, ParamD& p) { params.emplace_back(n, &p); });
    return check_gradients(params, [&](nn::Tape<double>& t) {
        return nn::ops::weighted_sum(t, film(t, t.param(cond), t.param(x)), w);
    });
}

// CLS cross-attention over random token sets.
inline GradReport attention_gradcheck(std::uint64_t seed) {
    Rng rng(seed);
    const int heads = rng.uniform_int(1, 3);
    const int C = heads * rng.uniform_int(1, 3);
    const int B = rng.uniform_int(1, 3);
    const int S = rng.uniform_int(1, 5);
    nn::ClsCrossAttention<double> attn(C, heads, rng);
    ParamD tokens{"tokens", random_mat(B * S, C, rng), {}};
    const MatD w = random_mat(B, C, rng);
    std::vector<std::pair<std::string, ParamD*>> params{{"tokens", &tokens}};
    attn.visit("attn", [&](const std::string& n, ParamD& p) { params.emplace_back(n, &p); });
    return check_gradients(params, [&](nn::Tape<double>& t) {
        return nn::ops::weighted_sum(t, attn(t, t.param(tokens), B, S), w);
    });
}

// Sinusoidal step embedding followed by its perceptron.
inline GradReport step_embedding_gradcheck(std::uint64_t seed) {
    Rng rng(seed);
    const int dim = 2 * rng.uniform_int(2, 6);
    const int out = rng.uniform_int(2, 6);
    nn::StepEmbedding<double> emb(dim, out, rng);
    std::vector<double> steps;
    const int B = rng.uniform_int(1, 4);
    for (int b = 0; b < B; ++b) steps.push_back(rng.uniform_int(1, 100));
    const MatD w = random_mat(B, out, rng);
    std::vector<std::pair<std::string, ParamD*>> params;
    emb.visit("step", [&](const std::string& n, ParamD& p) { params.emplace_back(n, &p); });
    return check_gradients(params, [&](nn::Tape<double>& t) { return nn::ops::weighted_sum(t, emb(t, steps), w); });
}

}  // namespace hichunk::testing
