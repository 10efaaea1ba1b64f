#include <doctest.h>

#include "hichunk/config.hpp"

#include <filesystem>
#include <fstream>

using namespace hichunk;

TEST_SUITE("config") {

TEST_CASE("defaults") {
    const RunConfig c;
    CHECK(c.batch == 128);
    CHECK(c.history_len == 3);
    CHECK(c.action_horizon == 8);
    CHECK(c.chunk_len == 8);
    CHECK(c.beta1 == 0.9);
    CHECK(c.beta2 == 0.999);
    CHECK(c.lr == 1e-4);
    CHECK(c.weight_decay == 1e-6);
    CHECK(c.step_embed_dim == 128);
    CHECK(c.diffusion_steps == 100);
    CHECK(c.num_frequencies == 3);
    CHECK(c.samples == 100);
    CHECK(c.demos == 100);
    CHECK(c.eval_episodes == 100);
    CHECK(c.strides == std::vector<int>{1, 2, 4});
    CHECK(c.thresholds == std::vector<double>{-6.0, -5.5});
    CHECK(c.percentile_low == 10.0);
    CHECK(c.percentile_high == 70.0);
    CHECK(c.base_rate_hz == 15.0);
    CHECK_NOTHROW(c.validate());
    CHECK(c.ladder() == FrequencyLadder::standard());
}

TEST_CASE("json round trip") {
    RunConfig c;
    c.task = "latch_close";
    c.seed = 42;
    c.lr = 3e-4;
    c.num_frequencies = 2;
    c.strides = {1, 3};
    c.thresholds = {-4.25};
    c.global_fusion = false;
    c.condition = "low_only";
    const RunConfig back = config_from_json(config_to_json(c));
    CHECK(back == c);
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(config_from_json("{}") == RunConfig{});
}

TEST_CASE("rejections") {
    CHECK_THROWS_AS(config_from_json("{\"learning_rate\": 0.1}"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{\"batch\": \"big\"}"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{\"batch\": 1.5}"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{\"batch\": 0}"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{\"seed\": -1}"), ConfigError);
    CHECK_THROWS_AS(config_from_json("[1, 2]"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{\"num_frequencies\": 2}"), ConfigError);  // strides no longer match
    CHECK_THROWS_AS(config_from_json("{\"thresholds\": [-5.5, -6.0]}"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{\"action_horizon\": 9}"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{\"condition\": \"sideways\"}"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{\"lr_schedule\": \"step\"}"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{\"percentile_low\": 80}"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{\"unet_channels\": [30]}"), ConfigError);
}

TEST_CASE("overrides") {
    RunConfig c;
    apply_override(c, "lr", "0.001");
    apply_override(c, "task", "latch_close");
    apply_override(c, "strides", "[1, 2, 8]");
    apply_override(c, "global_fusion", "false");
    CHECK(c.lr == 0.001);
    CHECK(c.task == "latch_close");
    CHECK(c.strides == std::vector<int>{1, 2, 8});
    CHECK_FALSE(c.global_fusion);
    CHECK_THROWS_AS(apply_override(c, "nope", "1"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "epochs", "many"), ConfigError);
    const auto keys = config_keys();
    CHECK(std::find(keys.begin(), keys.end(), "diffusion_steps") != keys.end());
}

TEST_CASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "hichunk_config_test.json";
    RunConfig c;
    c.epochs = 7;
    save_config(path, c);
    CHECK(load_config(path) == c);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_config(path), ConfigError);
}

}
