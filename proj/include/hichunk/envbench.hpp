#pragma once

#include "hichunk/temporal.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hichunk {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double norm() const;
    bool operator==(const Vec2&) const = default;
};

// Full simulator state. Fields after `step` are not observed by the policy.
struct EnvState {
    Vec2 effector;
    double gripper = 0.0;          // 0 open, 1 closed
    std::vector<Vec2> objects;     // movable objects (peg, door, blocks)
    std::vector<Vec2> targets;     // static scene features (slot, zones)
    int attached = -1;             // index into objects, -1 if nothing held
    Vec2 grasp_offset;             // object minus effector at attach time
    int phase = 0;                 // monotone stage label
    int step = 0;                  // base steps simulated

    double swing = 0.0;     // residual sway of a held peg
    int press_count = 0;    // consecutive base steps with the door compressed
    bool latched = false;
    bool jammed = false;

    bool operator==(const EnvState&) const = default;
};

struct TaskSpec {
    std::string task_id;
    double tolerance = 0.0;  // success tolerance, workspace units
    int max_steps = 0;       // base-step budget
    std::vector<std::string> stages;
    bool precise = false;
    int visual_dim = 0;
    int proprio_dim = 3;
    int action_dim = 3;
    double v_max = 0.02;      // per base step
    int pause_min = 10;
    int pause_max = 20;
};

class Task;

// Stage-following controller that emits absolute setpoints. The plan (pause lengths, sway
// parameters) is drawn once from the seed.
class ScriptedExpert {
public:
    struct Segment {
        Vec2 target;
        double grip = 0.0;
        int hold = 0;           // zero-delta steps after arrival; -1 holds forever
        bool oscillate = false;
        bool pause = false;     // marks the pre-precision pause
    };

    ScriptedExpert(std::vector<Segment> plan, const TaskSpec& spec, Rng& rng);

    Action act(const EnvState& state);
    // True while the current output is a deliberate pre-precision pause.
    bool pausing() const;
    bool finished() const { return index_ + 1 >= plan_.size() && holding_; }
    const std::vector<Segment>& plan() const { return plan_; }

private:
    std::vector<Segment> plan_;
    double v_max_;
    double lookahead_;
    double amplitude_;
    double period_;
    double phase_;
    std::size_t index_ = 0;
    bool holding_ = false;
    int held_ = 0;
    int clock_ = 0;
};

class Task {
public:
    virtual ~Task() = default;
    virtual const TaskSpec& spec() const = 0;
    // Randomised initial scene for this seed.
    virtual EnvState reset(std::uint64_t seed) const = 0;
    // Scene-specific contact rules applied after the kinematic update of one base step.
    virtual void constrain(EnvState& state, const EnvState& before) const = 0;
    virtual Vec observe_visual(const EnvState& state) const = 0;
    // Success checker; reads simulator state only.
    virtual bool success(const EnvState& state) const = 0;
    virtual std::vector<ScriptedExpert::Segment> plan(const EnvState& initial, Rng& rng) const = 0;
    virtual int phase_of(const EnvState& state) const = 0;
    virtual bool graspable(std::size_t object) const = 0;
};

class UnknownTask : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

const Task& find_task(const std::string& task_id);
std::vector<std::string> registered_tasks();

Observation observe(const Task& task, const EnvState& state);

// One command held for `stride` base steps: each base step moves the effector toward the
// setpoint by at most v_max, the gripper toward its command, and attached objects along.
EnvState step(const Task& task, EnvState state, const Action& action, int stride = 1);

ScriptedExpert make_expert(const Task& task, const EnvState& initial, std::uint64_t seed);

// Per-decision log entry.
struct DecisionRecord {
    int decision = 0;
    int base_step = 0;            // base step at which the observation was taken
    double entropy = 0.0;
    int frequency_index = 0;      // 0 = highest frequency
    std::vector<Vec> actions;     // commands actually sent
    EnvState state;               // state at observation time
};

struct RolloutTrace {
    std::string task_id;
    std::uint64_t seed = 0;
    std::vector<DecisionRecord> decisions;
    bool success = false;
    bool aborted = false;
    std::string abort_reason;
    int executed_commands = 0;
    int base_steps_elapsed = 0;
    int max_phase = 0;
    EnvState final_state;
};

// Rollout of the scripted expert at the base rate, one command per base step.
RolloutTrace run_expert(const Task& task, std::uint64_t seed);
// Same episode as a stored demonstration (observations o_0..o_{T-1}, actions a_0..a_{T-1}).
// `tail` zero-delta steps are recorded after success.
EpisodeRecord record_expert(const Task& task, std::uint64_t seed, int tail = 8);

using PolicyRunner = std::function<RolloutTrace(const Task&, std::uint64_t seed)>;

struct EvalReport {
    std::string task_id;
    int episodes = 0;
    double success_rate = 0.0;
    double mean_executed_commands = 0.0;
    double mean_base_steps = 0.0;
    int aborted = 0;
    std::vector<RolloutTrace> traces;
};

// Runs `episodes` rollouts on seeds seed0, seed0 + 1, ...
EvalReport evaluate(const PolicyRunner& runner, const Task& task, int episodes, std::uint64_t seed0);

}  // namespace hichunk
