#include "hichunk/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace hichunk {

DiffusionSchedule DiffusionSchedule::squared_cosine(int steps, double offset) {
    if (steps < 1) throw std::invalid_argument("diffusion needs at least one step");
    auto f = [&](double t) {
        const double v = std::cos((t / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
        return v * v;
    };
    std::vector<double> betas;
    betas.reserve(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) betas.push_back(std::min(1.0 - f(i + 1) / f(i), 0.999));
    return from_betas(betas);
}

DiffusionSchedule DiffusionSchedule::from_betas(const std::vector<double>& betas) {
    if (betas.empty()) throw std::invalid_argument("diffusion needs at least one step");
    DiffusionSchedule s;
    s.steps_ = static_cast<int>(betas.size());
    s.betas_.assign(1, 0.0);
    s.alpha_bars_.assign(1, 1.0);
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("betas must lie in (0, 1)");
        s.betas_.push_back(b);
        s.alpha_bars_.push_back(s.alpha_bars_.back() * (1.0 - b));
    }
    return s;
}

double DiffusionSchedule::sigma(int k) const {
    check(k);
    if (k == 1) return 0.0;
    // Posterior variance of q(a^{k-1} | a^k, a^0).
    return std::sqrt((1.0 - alpha_bar(k - 1)) / (1.0 - alpha_bar(k)) * beta(k));
}

MatD add_noise_with_alpha_bar(const MatD& clean, double alpha_bar, const MatD& eps) {
    if (clean.rows() != eps.rows() || clean.cols() != eps.cols()) {
        throw std::invalid_argument("noise shape must equal chunk shape");
    }
    return std::sqrt(alpha_bar) * clean + std::sqrt(1.0 - alpha_bar) * eps;
}

MatD add_noise(const MatD& clean, int k, const MatD& eps, const DiffusionSchedule& schedule) {
    if (k < 1 || k > schedule.steps()) throw std::out_of_range("diffusion step out of range");
    return add_noise_with_alpha_bar(clean, schedule.alpha_bar(k), eps);
}

NoisedBatch noise_batch(const MatD& chunks, Eigen::Index batch, const DiffusionSchedule& schedule, Rng& rng) {
    if (batch < 1 || chunks.rows() % batch != 0) throw std::invalid_argument("chunk rows not divisible by batch");
    const Eigen::Index per = chunks.rows() / batch;
    NoisedBatch out;
    out.eps = MatD(chunks.rows(), chunks.cols());
    rng.fill_normal(out.eps);
    out.noisy = MatD(chunks.rows(), chunks.cols());
    out.steps.resize(static_cast<std::size_t>(batch));
    for (Eigen::Index b = 0; b < batch; ++b) {
        const int k = static_cast<int>(rng.uniform_int(1, schedule.steps()));
        out.steps[static_cast<std::size_t>(b)] = k;
        out.noisy.middleRows(b * per, per) =
            add_noise(chunks.middleRows(b * per, per), k, out.eps.middleRows(b * per, per), schedule);
    }
    return out;
}

double diffusion_loss(const NoiseModel& model, const MatD& chunks, Eigen::Index batch,
                      const DiffusionSchedule& schedule, Rng& rng) {
    if (batch < 1 || chunks.rows() == 0) throw std::invalid_argument("loss needs a nonempty batch");
    auto nb = noise_batch(chunks, batch, schedule, rng);
    const MatD pred = model(nb.noisy, nb.steps);
    if (pred.rows() != nb.eps.rows() || pred.cols() != nb.eps.cols()) {
        throw std::invalid_argument("noise model returned the wrong shape");
    }
    return (nb.eps - pred).squaredNorm() / static_cast<double>(pred.size());
}

MatD sample_chunks(const NoiseModel& model, Eigen::Index batch, Eigen::Index rows_per_item, Eigen::Index action_dim,
                   const DiffusionSchedule& schedule, Rng& rng, const SamplerOptions& options) {
    MatD a(batch * rows_per_item, action_dim);
    rng.fill_normal(a);
    MatD z(a.rows(), a.cols());
    for (int k = schedule.steps(); k >= 1; --k) {
        const std::vector<int> steps(static_cast<std::size_t>(batch), k);
        const MatD eps_hat = model(a, steps);
        if (options.clip_denoised) {
            // Posterior mean written through the a^0 estimate.
            const double ab = schedule.alpha_bar(k);
            const double ab_prev = schedule.alpha_bar(k - 1);
            MatD a0 = (a - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
            a0 = a0.cwiseMax(-1.0).cwiseMin(1.0);
            const double c0 = std::sqrt(ab_prev) * schedule.beta(k) / (1.0 - ab);
            const double ck = std::sqrt(schedule.alpha(k)) * (1.0 - ab_prev) / (1.0 - ab);
            a = c0 * a0 + ck * a;
        } else {
            a = schedule.reverse_scale(k) * (a - schedule.noise_scale(k) * eps_hat);
        }
        const double sig = schedule.sigma(k);
        if (sig > 0.0) {
            rng.fill_normal(z);
            a += sig * z;
        }
        if (!a.allFinite()) {
            std::ostringstream msg;
            msg << "sampler produced a non-finite state at step " << k;
            throw SamplerDiverged(msg.str());
        }
    }
    if (options.clip_output) a = a.cwiseMax(-1.0).cwiseMin(1.0);
    return a;
}

}  // namespace hichunk
