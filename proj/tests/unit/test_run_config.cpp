// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>

#include "effortvae/error.hpp"
#include "effortvae/run_config.hpp"
#include "helpers.hpp"

using namespace effortvae;
using effortvae::testing::scratch_dir;

TEST_CASE("run config: JSON round trip") {
    RunConfig c = RunConfig::desk();
    c.seed = 42;
    c.train.alpha = 2.5;
    c.split.labeled = {0.5, 0.25, 0.25};
    c.atlas.kind = AtlasKind::Kde;
    c.resolve();
    RunConfig d;
    merge_json(d, nlohmann::json(c));
    CHECK(nlohmann::json(d) == nlohmann::json(c));
}

TEST_CASE("run config: partial files keep defaults") {
    RunConfig c = RunConfig::desk();
    merge_json(c, nlohmann::json::parse(R"({"train": {"epochs": 3}, "window": 12})"));
    CHECK(c.train.epochs == 3);
    CHECK(c.window == 12);
    CHECK(c.train.batch_size == RunConfig::desk().train.batch_size);
    c.resolve();
    CHECK(c.model.window == 12);
    CHECK(c.synth.window == 12);
}

TEST_CASE("run config: resolve derives model shape from synthetic data") {
    RunConfig c = RunConfig::desk();
    c.synthetic = true;
    c.synth.joints = 7;
    c.classes = 4;
    c.seed = 9;
    c.resolve();
    CHECK(c.model.joints == 7);
    CHECK(c.model.classes == 4);
    CHECK(c.synth.seed == 9);
}

TEST_CASE("run config: invalid values are ConfigError") {
    RunConfig c = RunConfig::desk();
    c.window = 1;
    CHECK_THROWS_AS(c.resolve(), ConfigError);
    c = RunConfig::desk();
    c.split.unlabeled = {0.9, 0.2, 0.0};
    CHECK_THROWS_AS(c.resolve(), ConfigError);
    c = RunConfig::desk();
    c.generate_format = "bvh";
    CHECK_THROWS_AS(c.resolve(), ConfigError);
    c = RunConfig::desk();
    CHECK_THROWS_AS(merge_json(c, nlohmann::json::parse(R"({"window": "wide"})")), ConfigError);
    CHECK_THROWS_AS(merge_json(c, nlohmann::json::array()), ConfigError);
    CHECK_THROWS_AS(merge_json(c, nlohmann::json::parse(R"({"train": {"criterion": "listen"}})")), ConfigError);
}

TEST_CASE("run config: file IO") {
    const auto dir = scratch_dir("run_config");
    RunConfig c = RunConfig::desk();
    c.port = 9001;
    const auto p = write_run_config(c, dir);
    CHECK(p == dir / "run_config.json");
    const RunConfig back = load_run_config(p);
    CHECK(back.port == 9001);
    CHECK(back.window == 20);

    std::ofstream(dir / "bad.json") << "{ not json";
    CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
    CHECK_THROWS_AS(load_run_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("run config: derived paths") {
    RunConfig c;
    c.out = "o";
    CHECK(c.labels_file() == std::filesystem::path("o/labels.csv"));
    CHECK(c.checkpoint_stem() == std::filesystem::path("o/checkpoints/best"));
    c.labels_path = "l.csv";
    CHECK(c.labels_file() == std::filesystem::path("l.csv"));
}
