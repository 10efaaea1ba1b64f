#include <doctest.h>

#include "hichunk/envbench.hpp"

#include <cmath>

using namespace hichunk;

namespace {

Action hold(const EnvState& s) { return Action{{s.effector.x, s.effector.y, s.gripper}}; }

}  // namespace

TEST_SUITE("envbench") {

TEST_CASE("registry") {
    const auto ids = registered_tasks();
    CHECK(ids == std::vector<std::string>{"approach_insert", "latch_close", "two_stage_pick_place"});
    for (const auto& id : ids) {
        const auto& spec = find_task(id).spec();
        CHECK(spec.task_id == id);
        CHECK(spec.tolerance > 0.0);
        CHECK(spec.max_steps > 0);
        CHECK_FALSE(spec.stages.empty());
    }
    CHECK(find_task("approach_insert").spec().precise);
    CHECK(find_task("approach_insert").spec().tolerance == doctest::Approx(0.01));
    try {
        find_task("microwave");
        FAIL("expected UnknownTask");
    } catch (const UnknownTask& e) {
        const std::string msg = e.what();
        for (const auto& id : ids) CHECK(msg.find(id) != std::string::npos);
    }
}

TEST_CASE("reset is deterministic and within bounds") {
    for (const auto& id : registered_tasks()) {
        const Task& task = find_task(id);
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const EnvState a = task.reset(seed);
            CHECK(a == task.reset(seed));
            CHECK(a.step == 0);
            for (const auto& p : a.objects) {
                CHECK(p.x >= 0.0);
                CHECK(p.x <= 1.0);
                CHECK(p.y >= 0.0);
                CHECK(p.y <= 1.0);
            }
        }
        CHECK_FALSE(task.reset(1) == task.reset(2));
    }
}

TEST_CASE("zero-delta command only advances the clock") {
    for (const auto& id : registered_tasks()) {
        const Task& task = find_task(id);
        const EnvState s = task.reset(4);
        EnvState t = step(task, s, hold(s), 1);
        CHECK(t.step == 1);
        t.step = 0;
        CHECK(t == s);
        EnvState u = step(task, s, hold(s), 4);
        CHECK(u.step == 4);
        u.step = 0;
        CHECK(u == s);
    }
}

TEST_CASE("velocity cap") {
    const Task& task = find_task("two_stage_pick_place");
    const double v = task.spec().v_max;
    const EnvState s = task.reset(0);
    for (int stride : {1, 2, 4}) {
        const Vec2 far{s.effector.x < 0.5 ? 0.95 : 0.05, s.effector.y < 0.5 ? 0.95 : 0.05};
        const EnvState t = step(task, s, Action{{far.x, far.y, 0.0}}, stride);
        CHECK((t.effector - s.effector).norm() == doctest::Approx(v * stride).epsilon(1e-9));
        // Direction preserved.
        const Vec2 d1 = t.effector - s.effector;
        const Vec2 d2 = far - s.effector;
        CHECK(std::abs(d1.x * d2.y - d1.y * d2.x) < 1e-12);
    }
    // Out-of-workspace setpoints are clamped, not rejected.
    const EnvState c = step(task, s, Action{{5.0, -5.0, 2.0}}, 200);
    CHECK(c.effector.x == doctest::Approx(1.0));
    CHECK(c.effector.y == doctest::Approx(0.0));
    CHECK(c.gripper == doctest::Approx(1.0));
    CHECK_THROWS_AS(step(task, s, Action{{0.1, 0.2}}, 1), std::invalid_argument);
    CHECK_THROWS_AS(step(task, s, Action{{0.1, std::nan(""), 0.0}}, 1), std::invalid_argument);
}

TEST_CASE("grasp then move carries the object") {
    const Task& task = find_task("two_stage_pick_place");
    EnvState s = task.reset(6);
    const Vec2 obj = s.objects[0];
    while ((s.effector - obj).norm() > 1e-12) s = step(task, s, Action{{obj.x, obj.y, 0.0}}, 1);
    for (int i = 0; i < 4; ++i) s = step(task, s, Action{{obj.x, obj.y, 1.0}}, 1);
    REQUIRE(s.attached == 0);
    const Vec2 to{obj.x, obj.y + 0.2};
    s = step(task, s, Action{{to.x, to.y, 1.0}}, 4);
    CHECK((s.objects[0] - s.effector).norm() < 1e-12);
    CHECK(s.objects[0].y > obj.y + 0.07);
    // Not grasped when closing away from the object.
    EnvState f = task.reset(6);
    for (int i = 0; i < 4; ++i) f = step(task, f, Action{{f.effector.x, f.effector.y, 1.0}}, 1);
    if ((f.effector - f.objects[0]).norm() > 0.05 && (f.effector - f.objects[1]).norm() > 0.05) CHECK(f.attached == -1);
}

TEST_CASE("scripted expert pauses, holds and succeeds") {
    for (const auto& id : registered_tasks()) {
        const Task& task = find_task(id);
        EnvState s = task.reset(0);
        ScriptedExpert ex = make_expert(task, s, 0);
        int paused = 0;
        bool finished_before_success = false;
        while (s.step < task.spec().max_steps && !(task.success(s) && ex.finished())) {
            const Action a = ex.act(s);
            if (ex.pausing()) {
                ++paused;
                CHECK(a.command[0] == doctest::Approx(s.effector.x).epsilon(1e-12));
                CHECK(a.command[1] == doctest::Approx(s.effector.y).epsilon(1e-12));
            }
            if (ex.finished() && !task.success(s)) finished_before_success = true;
            s = step(task, s, a, 1);
        }
        INFO(id);
        CHECK(task.success(s));
        CHECK(paused >= task.spec().pause_min);
        CHECK(s.step <= task.spec().max_steps);
        // Terminal hold.
        for (int i = 0; i < 5; ++i) {
            const Action a = ex.act(s);
            CHECK(a.command[0] == doctest::Approx(s.effector.x));
            CHECK(a.command[1] == doctest::Approx(s.effector.y));
            s = step(task, s, a, 1);
            CHECK(task.success(s));
        }
        (void)finished_before_success;
    }
}

TEST_CASE("expert competence and checker agreement over 100 seeds") {
    for (const auto& id : registered_tasks()) {
        const Task& task = find_task(id);
        PolicyRunner runner = [](const Task& t, std::uint64_t seed) { return run_expert(t, seed); };
        const auto report = evaluate(runner, task, 100, 0);
        INFO(id);
        CHECK(report.episodes == 100);
        CHECK(report.success_rate >= 0.99);
        CHECK(report.traces.size() == 100);
        const auto again = evaluate(runner, task, 100, 0);
        CHECK(again.success_rate == report.success_rate);
        CHECK(again.mean_base_steps == report.mean_base_steps);
        CHECK(again.mean_executed_commands == report.mean_executed_commands);
        for (const auto& tr : report.traces) {
            CHECK(tr.success == task.success(tr.final_state));
            CHECK(tr.executed_commands == tr.base_steps_elapsed);
        }
    }
    PolicyRunner runner = [](const Task& t, std::uint64_t seed) { return run_expert(t, seed); };
    CHECK_THROWS(evaluate(runner, find_task("latch_close"), 0, 0));
}

TEST_CASE("phase is monotone along expert episodes") {
    for (const auto& id : registered_tasks()) {
        const Task& task = find_task(id);
        EnvState s = task.reset(9);
        ScriptedExpert ex = make_expert(task, s, 9);
        int phase = s.phase;
        while (s.step < task.spec().max_steps && !task.success(s)) {
            s = step(task, s, ex.act(s), 1);
            CHECK(s.phase >= phase);
            phase = s.phase;
        }
        CHECK(phase > 0);
    }
}

TEST_CASE("recorded demonstrations match their episodes") {
    const Task& task = find_task("latch_close");
    const auto ep = record_expert(task, 3);
    CHECK(ep.success);
    CHECK(ep.length() == ep.actions.size());
    // Replaying the recorded actions reproduces the observations.
    EnvState s = task.reset(3);
    for (std::size_t t = 0; t < ep.length(); ++t) {
        const Observation o = observe(task, s);
        CHECK(o.visual == ep.observations[t].visual);
        CHECK(o.proprio == ep.observations[t].proprio);
        s = step(task, s, ep.actions[t], 1);
    }
    CHECK(task.success(s));
}

TEST_CASE("hidden timers: early insertion jams, short presses do not latch") {
    const Task& ins = find_task("approach_insert");
    int jams = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        EnvState s = ins.reset(seed);
        ScriptedExpert ex = make_expert(ins, s, seed);
        while (!ex.pausing() && s.step < 200) s = step(ins, s, ex.act(s), 1);
        // Skip the pause: go straight down into the slot.
        const Vec2 slot = s.targets[0];
        for (int i = 0; i < 30; ++i) s = step(ins, s, Action{{slot.x, slot.y - 0.1, 1.0}}, 1);
        jams += s.jammed ? 1 : 0;
        if (s.jammed) CHECK_FALSE(ins.success(s));
    }
    CHECK(jams >= 10);

    const Task& door = find_task("latch_close");
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        EnvState s = door.reset(seed);
        ScriptedExpert ex = make_expert(door, s, seed);
        int pressed = 0;
        while (pressed < 4 && s.step < 200) {
            s = step(door, s, ex.act(s), 1);
            if (s.objects[0].x >= 0.84) ++pressed;
        }
        const double y = s.effector.y;
        for (int i = 0; i < 40; ++i) s = step(door, s, Action{{0.6, y, 0.0}}, 1);
        CHECK_FALSE(door.success(s));
        CHECK(s.objects[0].x == doctest::Approx(0.8).epsilon(1e-6));
    }
}

}
