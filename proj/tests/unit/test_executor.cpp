#include <doctest.h>

#include "stub_models.hpp"

#include "hichunk/envbench.hpp"
#include "hichunk/executor.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

using namespace hichunk;
using namespace hichunk::testing;

namespace {

// -integral of phi log phi for N(0, 1), Simpson's rule on [-12, 12].
double gaussian_entropy_by_quadrature() {
    const int n = 20000;
    const double a = -12.0, b = 12.0, h = (b - a) / n;
    auto f = [](double x) {
        const double p = std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi);
        return p > 0 ? -p * std::log(p) : 0.0;
    };
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
    return s * h / 3;
}

MatD scalar_samples(const std::vector<double>& xs) {
    MatD m(static_cast<Eigen::Index>(xs.size()), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = xs[i];
    return m;
}

}  // namespace

TEST_SUITE("executor") {

TEST_CASE("entropy worked examples") {
    const auto same = estimate_entropy(MatD::Constant(5 * 2 * 3, 2, 0.4), 5, 2, 3);
    const double floored = std::log(std::sqrt(2 * std::numbers::pi * std::numbers::e) * 1e-6);
    CHECK(floored == doctest::Approx(-12.397).epsilon(1e-4));
    CHECK(same.overall == doctest::Approx(floored).epsilon(1e-12));
    CHECK(same.per_step.rows() == 2);
    CHECK(same.per_step.cols() == 3);
    CHECK(same.n_samples == 5);

    const auto unit = estimate_entropy(scalar_samples({-1, 0, 1}), 3, 1, 1);
    CHECK(unit.overall == doctest::Approx(gaussian_entropy_by_quadrature()).epsilon(1e-8));
    CHECK(unit.overall == doctest::Approx(1.4189).epsilon(1e-4));

    const double s0 = 1.0 / std::sqrt(2 * std::numbers::pi * std::numbers::e);
    const auto zero = estimate_entropy(scalar_samples({-s0, 0, s0}), 3, 1, 1);
    CHECK(std::abs(zero.overall) < 1e-12);

    CHECK_THROWS_AS(estimate_entropy(scalar_samples({1.0}), 1, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(estimate_entropy(MatD::Zero(7, 1), 2, 1, 3), std::invalid_argument);
}

TEST_CASE("entropy averages over dimensions, then positions") {
    // Position (m, j) = (0, 0): dims with sample variance 1 and 4; (0, 1): constant.
    MatD s(2 * 2, 2);
    s << -1, -2,  //
        5, 5,     //
        1, 2,     //
        5, 5;
    s *= std::sqrt(0.5);
    s.row(1).setConstant(5);
    s.row(3).setConstant(5);
    const auto e = estimate_entropy(s, 2, 1, 2);
    const double c = 0.5 * std::log(2 * std::numbers::pi * std::numbers::e);
    CHECK(e.per_step(0, 0) == doctest::Approx(c + 0.5 * (0.0 + std::log(2.0))));
    CHECK(e.per_step(0, 1) == doctest::Approx(c + 0.5 * std::log(1e-12)));
    CHECK(e.overall == doctest::Approx(0.5 * (e.per_step(0, 0) + e.per_step(0, 1))));
}

TEST_CASE("entropy scaling and translation") {
    Rng rng(12);
    const int n = 20, M = 2, L = 4;
    MatD s(n * M * L, 3);
    rng.fill_normal(s);
    const auto base = estimate_entropy(s, n, M, L);
    for (double c : {1.5, 3.0, 10.0}) {
        // Scale each position's spread about its own mean.
        MatD scaled = s * c;
        const auto e = estimate_entropy(scaled, n, M, L);
        CHECK((e.per_step.array() - base.per_step.array() - std::log(c)).abs().maxCoeff() < 1e-9);
    }
    MatD shifted = s;
    for (Eigen::Index r = 0; r < shifted.rows(); ++r) shifted.row(r) += Eigen::RowVector3d(3.0, -7.0, 0.5);
    const auto t = estimate_entropy(shifted, n, M, L);
    CHECK((t.per_step - base.per_step).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(select_frequency(t.overall, FrequencyLadder::standard()) == select_frequency(base.overall, FrequencyLadder::standard()));
}

TEST_CASE("gating table") {
    const auto ladder = FrequencyLadder::standard();
    CHECK(select_frequency(-6.5, ladder) == 0);
    CHECK(select_frequency(-5.7, ladder) == 1);
    CHECK(select_frequency(-5.0, ladder) == 2);
    // (lo, hi]: a value on a threshold stays in the interval below it.
    CHECK(select_frequency(-6.0, ladder) == 0);
    CHECK(select_frequency(-5.5, ladder) == 1);
    CHECK(select_frequency(-1e300, ladder) == 0);
    CHECK(select_frequency(1e300, ladder) == 2);
    CHECK(select_frequency(0.0, FrequencyLadder::single()) == 0);
}

TEST_CASE("select_frequency is a step function of the thresholds") {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const int M = rng.uniform_int(1, 5);
        std::vector<double> inner;
        double v = rng.uniform(-10, -5);
        for (int i = 0; i + 1 < M; ++i) {
            v += rng.uniform(0.01, 2.0);
            inner.push_back(v);
        }
        std::vector<int> strides;
        for (int m = 0; m < M; ++m) strides.push_back(1 << m);
        const auto ladder = FrequencyLadder::with_inner_thresholds(strides, inner);
        const auto& th = ladder.thresholds();
        int prev = -1;
        for (double h = -15.0; h <= 5.0; h += 0.01) {
            const int k = select_frequency(h, ladder);
            CHECK(h > th[static_cast<std::size_t>(k)]);
            CHECK(h <= th[static_cast<std::size_t>(k) + 1]);
            CHECK(k >= prev);
            prev = k;
        }
    }
}

TEST_CASE("decide with a deterministic stub") {
    const int M = 3, L = 4;
    MatD chunk(M * L, 3);
    for (Eigen::Index r = 0; r < chunk.rows(); ++r) chunk.row(r) = Eigen::RowVector3d(0.01 * r, -0.02 * r, 0.5);
    ConstantModel model(chunk, M, L);
    Rng rng(0);
    const auto d = decide(model, {}, FrequencyLadder::standard(), 10, rng);
    CHECK(d.selected_frequency_index == 0);
    CHECK(d.entropy.overall == doctest::Approx(std::log(std::sqrt(2 * std::numbers::pi * std::numbers::e) * 1e-6)));
    REQUIRE(d.executed_actions.size() == static_cast<std::size_t>(L));
    for (int j = 0; j < L; ++j) CHECK(d.executed_actions[static_cast<std::size_t>(j)].command == std::vector<double>{chunk(j, 0), chunk(j, 1), chunk(j, 2)});
    CHECK_THROWS_AS(decide(model, {}, FrequencyLadder::standard(), 1, rng), std::invalid_argument);
    CHECK_THROWS_AS(decide(model, {}, FrequencyLadder::single(), 4, rng), std::invalid_argument);
}

TEST_CASE("decide executes the first sample at the selected frequency") {
    LineModel model({0.9, 0.9}, {1, 2, 4}, 8, 0.02, 0.3);
    HierarchicalHistory h;
    h.per_frequency.assign(3, std::vector<Observation>(3, Observation{Vec{}, Vec{0.1, 0.1, 0.0}}));
    Rng r1(44), r2(44);
    const auto d = decide(model, h, FrequencyLadder::standard(), 6, r1);
    const MatD samples = model.sample(h, 6, r2);
    CHECK(d.selected_frequency_index == 2);  // noise 0.3 -> entropy well above -5.5
    for (int j = 0; j < 8; ++j) CHECK(d.executed_actions[static_cast<std::size_t>(j)].command[0] == samples(2 * 8 + j, 0));
    Rng r3(44);
    const auto again = decide(model, h, FrequencyLadder::standard(), 6, r3);
    CHECK(again.entropy.overall == d.entropy.overall);
}

TEST_CASE("rollout bookkeeping and stride semantics") {
    const Task& task = find_task("two_stage_pick_place");
    const EnvState s0 = task.reset(3);
    const Vec2 goal = s0.objects[0];
    const double v = task.spec().v_max;
    RolloutConfig cfg;
    cfg.action_horizon = 8;
    cfg.samples = 1;
    cfg.max_steps = 64;
    for (int m : {0, 1, 2}) {
        LineModel model(goal, {1, 2, 4}, 8, v);
        cfg.fixed_frequency = m;
        Rng rng(1);
        const auto tr = rollout(model, task, 3, FrequencyLadder::standard(), cfg, rng);
        int sent = 0;
        for (const auto& d : tr.decisions) {
            sent += static_cast<int>(d.actions.size());
            CHECK(d.frequency_index == m);
            CHECK(std::isnan(d.entropy));
        }
        CHECK(tr.executed_commands == sent);
        CHECK(tr.base_steps_elapsed >= tr.executed_commands);
        CHECK(tr.base_steps_elapsed == 64);
        CHECK(tr.executed_commands == 64 / (1 << m));
    }
    cfg.fixed_frequency.reset();
    cfg.samples = 1;
    LineModel model(goal, {1, 2, 4}, 8, v);
    Rng rng(1);
    CHECK_THROWS_AS(rollout(model, task, 3, FrequencyLadder::standard(), cfg, rng), std::invalid_argument);
    cfg.samples = 2;
    cfg.action_horizon = 9;
    CHECK_THROWS_AS(rollout(model, task, 3, FrequencyLadder::standard(), cfg, rng), std::invalid_argument);
}

TEST_CASE("transit base steps: lowest frequency never needs more than one extra command") {
    const Task& task = find_task("two_stage_pick_place");
    const double v = task.spec().v_max;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const EnvState s0 = task.reset(seed);
        const Vec2 goal = s0.objects[0];
        int reached[2] = {0, 0};
        int commands[2] = {0, 0};
        const int strides[2] = {1, 4};
        for (int i = 0; i < 2; ++i) {
            LineModel model(goal, {strides[i]}, 8, v);
            EnvState s = s0;
            Rng rng(0);
            while ((s.effector - goal).norm() > 1e-9 && s.step < 400) {
                HierarchicalHistory h;
                h.per_frequency.assign(1, std::vector<Observation>(3, observe(task, s)));
                const MatD c = model.sample(h, 1, rng);
                s = step(task, s, Action{{c(0, 0), c(0, 1), c(0, 2)}}, strides[i]);
                ++commands[i];
            }
            reached[i] = s.step;
        }
        CHECK(reached[1] <= reached[0] + 3);
        CHECK(commands[1] <= (commands[0] + 3) / 4);
    }
}

TEST_CASE("collapsed thresholds reproduce fixed high-frequency execution") {
    const Task& task = find_task("two_stage_pick_place");
    const Vec2 goal = task.reset(5).objects[0];
    LineModel model(goal, {1, 2, 4}, 8, task.spec().v_max, 0.05);
    const double inf = std::numeric_limits<double>::infinity();
    const FrequencyLadder collapsed({1, 2, 4}, {-inf, 1e300, 1.5e300, inf});
    RolloutConfig cfg;
    cfg.samples = 5;
    cfg.max_steps = 80;
    Rng r1(9), r2(9);
    const auto gated = rollout(model, task, 5, collapsed, cfg, r1);
    cfg.fixed_frequency = 0;
    const auto fixed = rollout(model, task, 5, FrequencyLadder::standard(), cfg, r2);
    REQUIRE(gated.decisions.size() == fixed.decisions.size());
    for (std::size_t i = 0; i < gated.decisions.size(); ++i) {
        CHECK(gated.decisions[i].frequency_index == 0);
        CHECK(gated.decisions[i].actions == fixed.decisions[i].actions);
        CHECK(gated.decisions[i].entropy == fixed.decisions[i].entropy);
    }
    CHECK(gated.final_state == fixed.final_state);
}

TEST_CASE("rollout determinism and trace serialisation") {
    const Task& task = find_task("latch_close");
    LineModel model({0.8, 0.5}, {1, 2, 4}, 8, 0.02, 0.01);
    RolloutConfig cfg;
    cfg.samples = 4;
    cfg.max_steps = 60;
    Rng r1(3), r2(3);
    const auto a = rollout(model, task, 11, FrequencyLadder::standard(), cfg, r1);
    const auto b = rollout(model, task, 11, FrequencyLadder::standard(), cfg, r2);
    std::ostringstream sa, sb;
    write_trace(sa, a);
    write_trace(sb, b);
    CHECK(sa.str() == sb.str());

    std::istringstream in(sa.str());
    const auto back = read_trace(in);
    CHECK(back.decisions.size() == a.decisions.size());
    CHECK(back.executed_commands == a.executed_commands);
    CHECK(back.base_steps_elapsed == a.base_steps_elapsed);
    CHECK(back.final_state == a.final_state);
    for (std::size_t i = 0; i < a.decisions.size(); ++i) {
        CHECK(back.decisions[i].entropy == a.decisions[i].entropy);
        CHECK(back.decisions[i].actions == a.decisions[i].actions);
        CHECK(back.decisions[i].state == a.decisions[i].state);
    }
    std::istringstream bad("{\"decision\": 0}\n");
    CHECK_THROWS(read_trace(bad));
    std::istringstream empty("");
    CHECK_THROWS(read_trace(empty));
}

TEST_CASE("non-finite commands abort with the trace kept") {
    const int M = 1, L = 2;
    ConstantModel model(MatD::Constant(M * L, 3, std::nan("")), M, L);
    RolloutConfig cfg;
    cfg.action_horizon = 2;
    cfg.samples = 1;
    cfg.fixed_frequency = 0;
    Rng rng(0);
    const auto tr = rollout(model, find_task("approach_insert"), 0, FrequencyLadder::single(), cfg, rng);
    CHECK(tr.aborted);
    CHECK_FALSE(tr.success);
    CHECK(tr.decisions.size() == 1);
}

}
