#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace hichunk {

// Row-major dense matrix. Batched sequences are stored as (batch * length, channels):
// row b * length + i holds position i of batch item b.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatD = Mat<double>;
using MatF = Mat<float>;
using Vec = std::vector<double>;

// Thin wrapper so every stochastic component takes the same generator type.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }

    // Inclusive on both ends.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }

    std::uint64_t next_u64() { return engine_(); }

    template <typename T>
    void fill_normal(Mat<T>& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal());
    }

    std::mt19937_64& engine() { return engine_; }

    // Full generator state, including any cached normal deviate.
    std::string state() const {
        std::ostringstream os;
        os << engine_ << ' ' << normal_ << ' ' << uniform_;
        return os.str();
    }
    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_ >> normal_ >> uniform_;
        if (!is) throw std::invalid_argument("malformed rng state");
    }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// splitmix64 finaliser; derives independent child seeds from (seed, stream).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace hichunk
