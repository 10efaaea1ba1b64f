#pragma once

#include "hichunk/network.hpp"
#include "hichunk/temporal.hpp"

#include <functional>
#include <stdexcept>
#include <vector>

namespace hichunk {

// DDPM coefficients for steps k = 1..K. Vectors are indexed by k (entry 0 is the k = 0
// identity: alpha_bar = 1, beta = 0).
class DiffusionSchedule {
public:
    // Squared-cosine beta schedule, betas capped at 0.999.
    static DiffusionSchedule squared_cosine(int steps, double offset = 0.008);
    // Explicit betas for k = 1..K.
    static DiffusionSchedule from_betas(const std::vector<double>& betas);

    int steps() const { return steps_; }
    double beta(int k) const { return betas_.at(check(k)); }
    double alpha(int k) const { return 1.0 - beta(k); }
    double alpha_bar(int k) const { return alpha_bars_.at(static_cast<std::size_t>(k)); }

    // Reverse update a^{k-1} = coef_a(k) * (a^k - coef_eps(k) * eps_hat) + sigma(k) * z.
    double reverse_scale(int k) const { return 1.0 / std::sqrt(alpha(k)); }
    double noise_scale(int k) const { return beta(k) / std::sqrt(1.0 - alpha_bar(k)); }
    double sigma(int k) const;

private:
    std::size_t check(int k) const {
        if (k < 1 || k > steps_) throw std::out_of_range("diffusion step out of range");
        return static_cast<std::size_t>(k);
    }

    int steps_ = 0;
    std::vector<double> betas_;       // size K + 1
    std::vector<double> alpha_bars_;  // size K + 1
};

// sqrt(alpha_bar_k) a0 + sqrt(1 - alpha_bar_k) eps.
MatD add_noise(const MatD& clean, int k, const MatD& eps, const DiffusionSchedule& schedule);

// Same, with the alpha_bar value given directly; valid for alpha_bar in [0, 1].
MatD add_noise_with_alpha_bar(const MatD& clean, double alpha_bar, const MatD& eps);

// Anything that predicts noise for a batch of flattened chunks. `noisy` is (B * M * L_c, D_a)
// and `steps` holds one step per batch item.
using NoiseModel = std::function<MatD(const MatD& noisy, const std::vector<int>& steps)>;

// Batch of normalised training pairs in tensor layout.
struct TrainingBatch {
    HistoryBatch<double> history;  // rows (b, m, i)
    MatD chunks;                   // (B * M * L_c, D_a)
    Eigen::Index batch = 0;
};

// Monte-Carlo epsilon-prediction loss with k ~ U{1..K} and eps ~ N(0, I) drawn per item.
// Returns the mean over all entries of (eps - f(a_k, k))^2.
double diffusion_loss(const NoiseModel& model, const MatD& chunks, Eigen::Index batch,
                      const DiffusionSchedule& schedule, Rng& rng);

struct SamplerOptions {
    // Re-express each update through a clipped estimate of a^0 (same update when the
    // estimate stays inside [-1, 1]).
    bool clip_denoised = true;
    bool clip_output = true;
};

class SamplerDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// K-step reverse process for `batch` chunks of `rows_per_item` rows each; starts from
// N(0, I). The final step is noise-free.
MatD sample_chunks(const NoiseModel& model, Eigen::Index batch, Eigen::Index rows_per_item, Eigen::Index action_dim,
                   const DiffusionSchedule& schedule, Rng& rng, const SamplerOptions& options = {});

// Training step helper: draws (k, eps), builds noisy inputs and the regression target.
struct NoisedBatch {
    MatD noisy;
    MatD eps;
    std::vector<int> steps;
};
NoisedBatch noise_batch(const MatD& chunks, Eigen::Index batch, const DiffusionSchedule& schedule, Rng& rng);

}  // namespace hichunk
