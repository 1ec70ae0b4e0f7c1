// SPDX-License-Identifier: Apache-2.0
//
// Fully resolved configuration of one CLI run. Built from defaults, then a
// JSON config file, then command-line flags; written next to every output.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "effortvae/generator.hpp"
#include "effortvae/metrics.hpp"
#include "effortvae/model.hpp"
#include "effortvae/motion_data.hpp"
#include "effortvae/split.hpp"
#include "effortvae/synth.hpp"
#include "effortvae/trainer.hpp"

namespace effortvae {

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out = "run";

    // data
    std::filesystem::path data_path;
    std::string data_format = "auto";  // csv | json | raw-binary | auto
    double fps = 35.0;
    bool synthetic = false;
    SynthOptions synth;
    double manual_fraction = 0.01;  // synthetic annotation density
    BarycenterMode barycenter = BarycenterMode::FixedXY;

    std::size_t window = 40;
    std::size_t stride = 1;
    int classes = 3;

    /// Manual label CSV; defaults to <out>/labels.csv.
    std::filesystem::path labels_path;
    std::size_t augment_radius = 6;

    SplitOptions split;
    ModelConfig model = ModelConfig::full_scale();
    TrainConfig train;
    AtlasOptions atlas;
    CalibrationOptions danceability;

    // generate
    std::string generate_label = "high";
    std::size_t generate_count = 5;
    std::string generate_format = "csv";
    /// Checkpoint stem; defaults to <out>/checkpoints/best.
    std::filesystem::path checkpoint;

    // serve
    std::string host = "127.0.0.1";
    int port = 8080;

    /// Root seed for every seeded stage (synthesis, split, init, training).
    void set_seed(std::uint64_t s) {
        seed = s;
        split.seed = s;
        train.seed = s;
    }

    /// Desk-scale defaults: T = 20, J = 5 synthetic data and the small model.
    static RunConfig desk();

    std::filesystem::path labels_file() const { return labels_path.empty() ? out / "labels.csv" : labels_path; }
    std::filesystem::path checkpoint_stem() const {
        return checkpoint.empty() ? out / "checkpoints" / "best" : checkpoint;
    }

    /// Fills derived fields (model window/classes, seeds) and checks ranges.
    /// Throws ConfigError.
    void resolve();
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Keys absent from `j` keep their current value, so files may be partial.
void merge_json(RunConfig& c, const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
/// Writes `<dir>/run_config.json`; returns its path.
std::filesystem::path write_run_config(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace effortvae
