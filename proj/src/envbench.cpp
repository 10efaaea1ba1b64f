#include "hichunk/envbench.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

namespace hichunk {

double Vec2::norm() const { return std::hypot(x, y); }

namespace {

constexpr double kGripRate = 0.34;
constexpr double kGraspRadius = 0.06;
constexpr double kLookaheadSteps = 4.0;
constexpr double kFade = 0.1;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Vec2 clamp_workspace(Vec2 p) { return {clamp01(p.x), clamp01(p.y)}; }

// Peg carried into a slot. The peg sways after lateral moves; entering the slot mouth
// before the sway has damped wedges it.
class ApproachInsert final : public Task {
public:
    static constexpr double kDepth = 0.1;
    static constexpr double kStageHeight = 0.02;
    static constexpr double kSwayDecay = 0.72;
    static constexpr double kSwayLimit = 0.05;
    static constexpr double kSwayDeadband = 0.75;

    ApproachInsert() {
        spec_.task_id = "approach_insert";
        spec_.tolerance = 0.01;
        spec_.max_steps = 160;
        spec_.stages = {"transit", "pause", "insert"};
        spec_.precise = true;
        spec_.visual_dim = 2;
    }

    const TaskSpec& spec() const override { return spec_; }

    EnvState reset(std::uint64_t seed) const override {
        Rng rng(mix_seed(seed, 0x51));
        EnvState s;
        s.targets = {{rng.uniform(0.2, 0.8), rng.uniform(0.25, 0.35)}};
        s.effector = {rng.uniform(0.05, 0.95), rng.uniform(0.65, 0.95)};
        s.gripper = 1.0;
        s.objects = {s.effector};
        s.attached = 0;
        return s;
    }

    void constrain(EnvState& s, const EnvState& b) const override {
        if (b.jammed) {
            s.effector = b.effector;
            s.jammed = true;
            return;
        }
        const Vec2 slot = s.targets[0];
        const double top = slot.y;
        const double bottom = top - kDepth;
        const double tol = spec_.tolerance;
        Vec2 p = s.effector;
        const bool was_inside = b.effector.y < top && std::abs(b.effector.x - slot.x) <= tol;
        if (was_inside) {
            p.x = std::clamp(p.x, slot.x - tol, slot.x + tol);
            p.y = std::max(p.y, bottom);
        } else if (p.y < top) {
            const bool aligned = std::abs(p.x - slot.x) <= tol;
            if (!aligned) {
                p.y = top;
            } else if (s.attached == 0 && b.swing >= kSwayLimit) {
                p.y = top;
                s.jammed = true;
            } else {
                p.y = std::max(p.y, bottom);
            }
        }
        s.effector = p;
        const double sway = std::min(1.0, 2.0 * std::abs(s.effector.x - b.effector.x) / spec_.v_max);
        s.swing = std::max(b.swing * kSwayDecay, sway > kSwayDeadband ? sway : 0.0);
    }

    Vec observe_visual(const EnvState& s) const override { return {s.targets[0].x, s.targets[0].y}; }

    bool success(const EnvState& s) const override {
        const Vec2 slot = s.targets[0];
        const Vec2 peg = s.objects[0];
        return !s.jammed && std::abs(peg.x - slot.x) <= spec_.tolerance && peg.y <= slot.y - kDepth + 0.01;
    }

    std::vector<ScriptedExpert::Segment> plan(const EnvState& s, Rng& rng) const override {
        const Vec2 slot = s.targets[0];
        const int pause = static_cast<int>(rng.uniform_int(spec_.pause_min, spec_.pause_max));
        return {
            {{slot.x, slot.y + kStageHeight}, 1.0, pause, true, true},
            {{slot.x, slot.y - kDepth}, 1.0, -1, false, false},
        };
    }

    int phase_of(const EnvState& s) const override {
        if (success(s)) return 2;
        const Vec2 slot = s.targets[0];
        return std::abs(s.effector.x - slot.x) <= spec_.tolerance && s.effector.y <= slot.y + kStageHeight + 1e-9 ? 1 : 0;
    }

    bool graspable(std::size_t object) const override { return object == 0; }

private:
    TaskSpec spec_;
};

// Spring-loaded door pushed along +x. Holding it fully compressed for long enough
// engages a latch that is not part of the observation.
class LatchClose final : public Task {
public:
    static constexpr double kNear = 0.8;
    static constexpr double kClosed = 0.86;
    static constexpr double kLatchZone = 0.84;
    static constexpr int kLatchSteps = 9;
    static constexpr double kSpring = 0.01;
    static constexpr double kSpan = 0.12;

    LatchClose() {
        spec_.task_id = "latch_close";
        spec_.tolerance = kClosed - kLatchZone;
        spec_.max_steps = 200;
        spec_.stages = {"approach", "push", "pause", "compress"};
        spec_.precise = false;
        spec_.visual_dim = 2;
    }

    const TaskSpec& spec() const override { return spec_; }

    EnvState reset(std::uint64_t seed) const override {
        Rng rng(mix_seed(seed, 0x52));
        EnvState s;
        s.objects = {{rng.uniform(0.45, 0.6), rng.uniform(0.4, 0.6)}};
        s.effector = {rng.uniform(0.05, 0.3), rng.uniform(0.1, 0.9)};
        return s;
    }

    void constrain(EnvState& s, const EnvState& b) const override {
        Vec2& door = s.objects[0];
        const bool in_span = std::abs(s.effector.y - door.y) <= kSpan;
        if (s.latched) {
            door.x = kClosed;
            if (in_span && b.effector.x <= door.x + 1e-12) s.effector.x = std::min(s.effector.x, door.x);
        } else {
            if (in_span && b.effector.x <= door.x + 1e-12 && s.effector.x > door.x) {
                door.x = std::min(s.effector.x, kClosed);
                s.effector.x = door.x;
            }
            const bool contact = in_span && s.effector.x >= door.x - 1e-12;
            if (!contact && door.x > kNear) door.x = std::max(kNear, door.x - kSpring);
        }
        s.press_count = door.x >= kLatchZone ? b.press_count + 1 : 0;
        if (s.press_count >= kLatchSteps) s.latched = true;
    }

    Vec observe_visual(const EnvState& s) const override { return {s.objects[0].x, s.objects[0].y}; }

    bool success(const EnvState& s) const override { return s.latched; }

    std::vector<ScriptedExpert::Segment> plan(const EnvState& s, Rng& rng) const override {
        const Vec2 door = s.objects[0];
        const int pause = static_cast<int>(rng.uniform_int(spec_.pause_min, spec_.pause_max));
        const int press = static_cast<int>(rng.uniform_int(kLatchSteps + 1, kLatchSteps + 7));
        return {
            {{door.x - 0.04, door.y}, 0.0, 0, true, false},
            {{kNear, door.y}, 0.0, pause, false, true},
            {{kClosed, door.y}, 0.0, press, false, false},
            {{kNear - 0.2, door.y}, 0.0, -1, false, false},
        };
    }

    int phase_of(const EnvState& s) const override {
        if (s.latched) return 3;
        const Vec2 door = s.objects[0];
        if (door.x >= kLatchZone) return 2;
        return door.x >= kNear - 1e-9 ? 1 : 0;
    }

    bool graspable(std::size_t) const override { return false; }

private:
    TaskSpec spec_;
};

// Two blocks, each carried to its own zone.
class TwoStagePickPlace final : public Task {
public:
    TwoStagePickPlace() {
        spec_.task_id = "two_stage_pick_place";
        spec_.tolerance = 0.1;
        spec_.max_steps = 360;
        spec_.stages = {"reach_a", "carry_a", "reach_b", "carry_b"};
        spec_.precise = false;
        spec_.visual_dim = 8;
    }

    const TaskSpec& spec() const override { return spec_; }

    EnvState reset(std::uint64_t seed) const override {
        Rng rng(mix_seed(seed, 0x53));
        EnvState s;
        auto draw_pair = [&](double ylo, double yhi) {
            Vec2 a{rng.uniform(0.1, 0.9), rng.uniform(ylo, yhi)};
            Vec2 b;
            do {
                b = {rng.uniform(0.1, 0.9), rng.uniform(ylo, yhi)};
            } while ((a - b).norm() < 0.2);
            return std::pair{a, b};
        };
        auto [a, b] = draw_pair(0.1, 0.35);
        auto [z1, z2] = draw_pair(0.65, 0.9);
        s.objects = {a, b};
        s.targets = {z1, z2};
        s.effector = {rng.uniform(0.1, 0.9), rng.uniform(0.4, 0.6)};
        return s;
    }

    void constrain(EnvState&, const EnvState&) const override {}

    Vec observe_visual(const EnvState& s) const override {
        return {s.objects[0].x, s.objects[0].y, s.objects[1].x, s.objects[1].y,
                s.targets[0].x, s.targets[0].y, s.targets[1].x, s.targets[1].y};
    }

    bool placed(const EnvState& s, std::size_t i) const {
        return s.attached != static_cast<int>(i) && (s.objects[i] - s.targets[i]).norm() <= spec_.tolerance;
    }

    bool success(const EnvState& s) const override { return placed(s, 0) && placed(s, 1); }

    std::vector<ScriptedExpert::Segment> plan(const EnvState& s, Rng& rng) const override {
        std::vector<ScriptedExpert::Segment> out;
        for (std::size_t i = 0; i < 2; ++i) {
            const int pause = static_cast<int>(rng.uniform_int(spec_.pause_min, spec_.pause_max));
            const Vec2 obj = s.objects[i];
            const Vec2 zone = s.targets[i];
            out.push_back({obj, 0.0, pause, true, true});
            out.push_back({obj, 1.0, 3, false, false});
            out.push_back({zone, 1.0, 4, true, false});
            out.push_back({zone, 0.0, 3, false, false});
        }
        out.back().hold = -1;
        return out;
    }

    int phase_of(const EnvState& s) const override {
        if (success(s)) return 4;
        if (placed(s, 0)) return s.attached == 1 ? 3 : 2;
        return s.attached == 0 ? 1 : 0;
    }

    bool graspable(std::size_t object) const override { return object < 2; }

private:
    TaskSpec spec_;
};

const std::map<std::string, std::unique_ptr<Task>>& registry() {
    static const auto tasks = [] {
        std::map<std::string, std::unique_ptr<Task>> m;
        auto add = [&](std::unique_ptr<Task> t) {
            const std::string id = t->spec().task_id;
            m.emplace(id, std::move(t));
        };
        add(std::make_unique<ApproachInsert>());
        add(std::make_unique<LatchClose>());
        add(std::make_unique<TwoStagePickPlace>());
        return m;
    }();
    return tasks;
}

}  // namespace

const Task& find_task(const std::string& task_id) {
    const auto& r = registry();
    auto it = r.find(task_id);
    if (it == r.end()) {
        std::ostringstream msg;
        msg << "unknown task '" << task_id << "'; registered tasks:";
        for (const auto& [id, _] : r) msg << ' ' << id;
        throw UnknownTask(msg.str());
    }
    return *it->second;
}

std::vector<std::string> registered_tasks() {
    std::vector<std::string> out;
    for (const auto& [id, _] : registry()) out.push_back(id);
    return out;
}

Observation observe(const Task& task, const EnvState& state) {
    return {task.observe_visual(state), {state.effector.x, state.effector.y, state.gripper}};
}

EnvState step(const Task& task, EnvState state, const Action& action, int stride) {
    const TaskSpec& spec = task.spec();
    if (static_cast<int>(action.command.size()) != spec.action_dim) {
        throw std::invalid_argument("action has the wrong dimension");
    }
    for (double v : action.command) {
        if (!std::isfinite(v)) throw std::invalid_argument("action is not finite");
    }
    if (stride < 1) throw std::invalid_argument("stride must be positive");
    const Vec2 setpoint = clamp_workspace({action.command[0], action.command[1]});
    const double grip_cmd = clamp01(action.command[2]);

    for (int i = 0; i < stride; ++i) {
        const EnvState before = state;
        const Vec2 delta = setpoint - state.effector;
        const double dist = delta.norm();
        state.effector = dist <= spec.v_max ? setpoint : state.effector + delta * (spec.v_max / dist);
        state.gripper += std::clamp(grip_cmd - state.gripper, -kGripRate, kGripRate);

        if (state.attached >= 0 && state.gripper < 0.5) state.attached = -1;
        if (state.attached < 0 && state.gripper >= 0.5 && before.gripper < 0.5) {
            double best = kGraspRadius;
            for (std::size_t k = 0; k < state.objects.size(); ++k) {
                if (!task.graspable(k)) continue;
                const double d = (state.objects[k] - state.effector).norm();
                if (d <= best) {
                    best = d;
                    state.attached = static_cast<int>(k);
                    state.grasp_offset = state.objects[k] - state.effector;
                }
            }
        }
        task.constrain(state, before);
        if (state.attached >= 0) {
            state.objects[static_cast<std::size_t>(state.attached)] = state.effector + state.grasp_offset;
        }
        state.step += 1;
        state.phase = std::max(state.phase, task.phase_of(state));
    }
    return state;
}

ScriptedExpert::ScriptedExpert(std::vector<Segment> plan, const TaskSpec& spec, Rng& rng)
    : plan_(std::move(plan)), v_max_(spec.v_max), lookahead_(kLookaheadSteps * spec.v_max) {
    if (plan_.empty()) throw std::invalid_argument("expert plan is empty");
    amplitude_ = rng.uniform(0.01, 0.03);
    period_ = rng.uniform(10.0, 18.0);
    phase_ = rng.uniform(0.0, 2.0 * std::numbers::pi);
}

bool ScriptedExpert::pausing() const {
    const Segment& seg = plan_[index_];
    return holding_ && seg.pause && held_ < seg.hold;
}

Action ScriptedExpert::act(const EnvState& state) {
    for (;;) {
        const Segment& seg = plan_[index_];
        const Vec2 delta = seg.target - state.effector;
        const double dist = delta.norm();
        if (!holding_ && dist <= 1e-9) {
            holding_ = true;
            held_ = 0;
        }
        if (holding_) {
            if (seg.hold < 0 || held_ < seg.hold || index_ + 1 >= plan_.size()) {
                ++held_;
                return {{seg.target.x, seg.target.y, seg.grip}};
            }
            ++index_;
            holding_ = false;
            continue;
        }
        ++clock_;
        const Vec2 dir = delta * (1.0 / dist);
        Vec2 carrot = state.effector + dir * std::min(dist, lookahead_);
        if (seg.oscillate && dist > kFade) {
            const double w = std::min(1.0, (dist - kFade) / kFade);
            const Vec2 perp{-dir.y, dir.x};
            carrot = carrot + perp * (amplitude_ * w * std::sin(2.0 * std::numbers::pi * clock_ / period_ + phase_));
        }
        carrot = clamp_workspace(carrot);
        return {{carrot.x, carrot.y, seg.grip}};
    }
}

ScriptedExpert make_expert(const Task& task, const EnvState& initial, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xe7));
    auto plan = task.plan(initial, rng);
    return ScriptedExpert(std::move(plan), task.spec(), rng);
}

RolloutTrace run_expert(const Task& task, std::uint64_t seed) {
    RolloutTrace trace;
    trace.task_id = task.spec().task_id;
    trace.seed = seed;
    EnvState s = task.reset(seed);
    ScriptedExpert expert = make_expert(task, s, seed);
    int decision = 0;
    while (s.step < task.spec().max_steps && !task.success(s)) {
        DecisionRecord rec;
        rec.decision = decision++;
        rec.base_step = s.step;
        rec.state = s;
        const Action a = expert.act(s);
        rec.actions.push_back(a.command);
        s = step(task, s, a, 1);
        ++trace.executed_commands;
        trace.decisions.push_back(std::move(rec));
    }
    trace.success = task.success(s);
    trace.base_steps_elapsed = s.step;
    trace.max_phase = s.phase;
    trace.final_state = s;
    return trace;
}

EpisodeRecord record_expert(const Task& task, std::uint64_t seed, int tail) {
    EpisodeRecord ep;
    ep.task_id = task.spec().task_id;
    ep.seed = seed;
    EnvState s = task.reset(seed);
    ScriptedExpert expert = make_expert(task, s, seed);
    const int limit = task.spec().max_steps + tail + 64;
    int after = 0;
    bool done = false;
    while (s.step < limit) {
        if (done && expert.finished()) {
            if (after >= tail) break;
            ++after;
        }
        ep.observations.push_back(observe(task, s));
        const Action a = expert.act(s);
        ep.actions.push_back(a);
        s = step(task, s, a, 1);
        done = done || (task.success(s) && s.step <= task.spec().max_steps);
    }
    ep.success = done && task.success(s);
    return ep;
}

EvalReport evaluate(const PolicyRunner& runner, const Task& task, int episodes, std::uint64_t seed0) {
    if (episodes < 1) throw std::invalid_argument("evaluate needs at least one episode");
    EvalReport report;
    report.task_id = task.spec().task_id;
    report.episodes = episodes;
    int wins = 0;
    double commands = 0.0;
    double steps = 0.0;
    for (int e = 0; e < episodes; ++e) {
        RolloutTrace trace = runner(task, seed0 + static_cast<std::uint64_t>(e));
        if (trace.aborted) {
            ++report.aborted;
            trace.success = false;
        }
        wins += trace.success ? 1 : 0;
        commands += trace.executed_commands;
        steps += trace.base_steps_elapsed;
        report.traces.push_back(std::move(trace));
    }
    report.success_rate = static_cast<double>(wins) / episodes;
    report.mean_executed_commands = commands / episodes;
    report.mean_base_steps = steps / episodes;
    return report;
}

}  // namespace hichunk
