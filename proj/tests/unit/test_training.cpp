#include <doctest.h>

#include "hichunk/checkpoint.hpp"
#include "hichunk/dataset.hpp"
#include "hichunk/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace hichunk;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
    RunConfig c;
    c.task = "approach_insert";
    c.hidden = 8;
    c.unet_channels = {8, 16};
    c.step_embed_dim = 16;
    c.attention_heads = 2;
    c.kernel_size = 3;
    c.norm_groups = 4;
    c.diffusion_steps = 8;
    c.batch = 16;
    c.steps_per_epoch = 5;
    c.epochs = 2;
    c.lr = 1e-3;
    return c;
}

const std::vector<EpisodeRecord>& tiny_demos() {
    static const auto eps = generate_demos("approach_insert", 3, 0);
    return eps;
}

bool same_weights(Denoiser<float>& a, Denoiser<float>& b) {
    auto pa = a.parameters();
    auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->value != pb[i]->value) return false;
    }
    return true;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("hichunk_" + name); }

}  // namespace

TEST_SUITE("training") {

TEST_CASE("AdamW update against a hand computation") {
    nn::Parameter<float> p{"w", MatF::Constant(1, 2, 1.0f), MatF(1, 2)};
    p.grad << 0.5f, -2.0f;
    AdamW opt;
    opt.weight_decay = 0.1;
    opt.step({&p}, 0.01);
    // t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
    const double d = 1.0 - 0.01 * 0.1;
    CHECK(p.value(0, 0) == doctest::Approx(d - 0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-6));
    CHECK(p.value(0, 1) == doctest::Approx(d + 0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-6));
    CHECK(opt.t == 1);
}

TEST_CASE("learning rate schedules") {
    RunConfig c;
    c.lr = 1e-3;
    CHECK(learning_rate(c, 0, 100) == 1e-3);
    CHECK(learning_rate(c, 99, 100) == 1e-3);
    c.warmup_steps = 10;
    CHECK(learning_rate(c, 0, 100) == doctest::Approx(1e-4));
    CHECK(learning_rate(c, 9, 100) == doctest::Approx(1e-3));
    c.lr_schedule = "cosine";
    CHECK(learning_rate(c, 10, 110) == doctest::Approx(1e-3));
    CHECK(learning_rate(c, 60, 110) == doctest::Approx(0.5e-3));
    CHECK(learning_rate(c, 110, 110) == doctest::Approx(0.0));
}

TEST_CASE("steps per epoch covers the base-rate frames") {
    RunConfig c;
    c.batch = 10;
    std::vector<EpisodeRecord> eps(2);
    eps[0].observations.resize(15);
    eps[1].observations.resize(6);
    CHECK(steps_per_epoch(c, eps) == 3);
    c.steps_per_epoch = 7;
    CHECK(steps_per_epoch(c, eps) == 7);
}

TEST_CASE("smoothed training loss decreases") {
    auto c = tiny_config();
    c.epochs = 12;
    auto s = init_training(c, tiny_demos());
    train(s, tiny_demos());
    REQUIRE(s.epoch_losses.size() == 12);
    const auto& l = s.epoch_losses;
    const double head = (l[0] + l[1] + l[2]) / 3;
    const double tail = (l[9] + l[10] + l[11]) / 3;
    CHECK(tail < head);
    CHECK(l.back() < l.front());
}

TEST_CASE("non-finite loss aborts") {
    auto c = tiny_config();
    c.epochs = 1;
    auto s = init_training(c, tiny_demos());
    auto p = s.net->parameters();
    p.front()->value(0, 0) = std::nanf("");
    CHECK_THROWS_AS(train(s, tiny_demos()), TrainingDiverged);
}

TEST_CASE("checkpoint round trip is exact and resuming matches an uninterrupted run") {
    auto c = tiny_config();
    auto full = init_training(c, tiny_demos());
    train(full, tiny_demos());

    auto c1 = c;
    c1.epochs = 1;
    auto half = init_training(c1, tiny_demos());
    train(half, tiny_demos());
    const auto path = temp_file("resume.ckpt");
    save_checkpoint(path, half);
    auto resumed = load_checkpoint(path);
    CHECK(resumed.epoch == 1);
    CHECK(resumed.step == half.step);
    CHECK(same_weights(*resumed.net, *half.net));
    CHECK(resumed.stats == half.stats);
    CHECK(resumed.ladder == half.ladder);
    CHECK(resumed.net_config == half.net_config);
    CHECK(resumed.config == half.config);
    CHECK(resumed.optimizer.t == half.optimizer.t);
    REQUIRE(resumed.optimizer.m.size() == half.optimizer.m.size());
    for (std::size_t i = 0; i < resumed.optimizer.m.size(); ++i) {
        CHECK(resumed.optimizer.m[i] == half.optimizer.m[i]);
        CHECK(resumed.optimizer.v[i] == half.optimizer.v[i]);
    }
    resumed.config.epochs = 2;
    train(resumed, tiny_demos());
    CHECK(resumed.epoch == 2);
    CHECK(resumed.epoch_losses.size() == 2);
    CHECK(resumed.epoch_losses == full.epoch_losses);
    CHECK(same_weights(*resumed.net, *full.net));
    fs::remove(path);
}

TEST_CASE("checkpoint errors") {
    const auto path = temp_file("bad.ckpt");
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    std::ofstream(path) << "HCCKgarbage";
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    std::ofstream(path) << "nothing like a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

    auto s = init_training(tiny_config(), tiny_demos());
    save_checkpoint(path, s, false);
    const auto size = fs::file_size(path);
    fs::resize_file(path, size - 4);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    fs::remove(path);
}

TEST_CASE("denoiser config json") {
    DenoiserConfig d;
    d.visual_dim = 8;
    d.condition = ConditionMode::LowOnly;
    d.unet_channels = {16, 32};
    CHECK(denoiser_config_from_json(denoiser_config_to_json(d)) == d);
}

}
