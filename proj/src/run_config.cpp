// SPDX-License-Identifier: Apache-2.0
#include "effortvae/run_config.hpp"

#include <fstream>

#include "effortvae/error.hpp"

namespace effortvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json synth_json(const SynthOptions& s) {
    return {{"clips", s.clips},
            {"frames_per_clip", s.frames_per_clip},
            {"joints", s.joints},
            {"min_segment", s.min_segment},
            {"max_segment", s.max_segment},
            {"min_frequency", s.min_frequency},
            {"max_frequency", s.max_frequency},
            {"jitter", s.jitter}};
}

void synth_from(const json& j, SynthOptions& s) {
    s.clips = j.value("clips", s.clips);
    s.frames_per_clip = j.value("frames_per_clip", s.frames_per_clip);
    s.joints = j.value("joints", s.joints);
    s.min_segment = j.value("min_segment", s.min_segment);
    s.max_segment = j.value("max_segment", s.max_segment);
    s.min_frequency = j.value("min_frequency", s.min_frequency);
    s.max_frequency = j.value("max_frequency", s.max_frequency);
    s.jitter = j.value("jitter", s.jitter);
}

void from_json_full(const json& j, RunConfig& c) {
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out.string());
    if (j.contains("data")) {
        const json& d = j.at("data");
        c.data_path = d.value("path", c.data_path.string());
        c.data_format = d.value("format", c.data_format);
        c.fps = d.value("fps", c.fps);
        c.synthetic = d.value("synthetic", c.synthetic);
        c.barycenter = barycenter_mode_from_string(d.value("barycenter", std::string(to_string(c.barycenter))));
    }
    if (j.contains("synthetic")) {
        synth_from(j.at("synthetic"), c.synth);
        c.manual_fraction = j.at("synthetic").value("manual_fraction", c.manual_fraction);
    }
    c.window = j.value("window", c.window);
    c.stride = j.value("stride", c.stride);
    c.classes = j.value("classes", c.classes);
    c.labels_path = j.value("labels", c.labels_path.string());
    if (j.contains("augment")) c.augment_radius = j.at("augment").value("radius", c.augment_radius);
    if (j.contains("split")) from_json(j.at("split"), c.split);
    if (j.contains("model")) from_json(j.at("model"), c.model);
    if (j.contains("train")) from_json(j.at("train"), c.train);
    if (j.contains("atlas")) {
        const json& a = j.at("atlas");
        c.atlas.kind = atlas_kind_from_string(a.value("kind", std::string(to_string(c.atlas.kind))));
        c.atlas.lambda = a.value("lambda", c.atlas.lambda);
        c.atlas.bandwidth = a.value("bandwidth", c.atlas.bandwidth);
    }
    if (j.contains("danceability")) {
        const json& d = j.at("danceability");
        c.danceability.quantile = d.value("quantile", c.danceability.quantile);
        c.danceability.slack = d.value("slack", c.danceability.slack);
        c.danceability.bone_floor = d.value("bone_floor", c.danceability.bone_floor);
        c.danceability.step_floor = d.value("step_floor", c.danceability.step_floor);
        c.danceability.margin = d.value("margin", c.danceability.margin);
    }
    if (j.contains("generate")) {
        const json& g = j.at("generate");
        c.generate_label = g.value("label", c.generate_label);
        c.generate_count = g.value("count", c.generate_count);
        c.generate_format = g.value("format", c.generate_format);
        c.checkpoint = g.value("checkpoint", c.checkpoint.string());
    }
    if (j.contains("serve")) {
        c.host = j.at("serve").value("host", c.host);
        c.port = j.at("serve").value("port", c.port);
    }
}

}  // namespace

RunConfig RunConfig::desk() {
    RunConfig c;
    c.window = 20;
    c.model = ModelConfig::desk();
    // Tuned on the synthetic set: a small decoder variance keeps reconstruction
    // ahead of KL, and small batches give enough steps in 30 epochs.
    c.model.decoder_variance = 3e-4;
    c.synth = SynthOptions{};
    c.train.epochs = 30;
    c.train.batch_size = 20;
    c.train.learning_rate = 3e-3;
    c.train.alpha = 16.0;
    return c;
}

void RunConfig::resolve() {
    if (window < 2) throw ConfigError("window must be >= 2");
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (!(manual_fraction >= 0.0 && manual_fraction <= 1.0)) throw ConfigError("manual_fraction must be in [0, 1]");
    if (generate_format != "csv" && generate_format != "json") throw ConfigError("generate.format must be csv or json");
    model.window = static_cast<int>(window);
    model.classes = classes;
    synth.window = window;
    synth.stride = stride;
    synth.classes = classes;
    synth.fps = fps;
    synth.seed = seed;
    if (synthetic) model.joints = static_cast<int>(synth.joints);
    split.labeled.validate();
    split.unlabeled.validate();
    train.validate();
}

void to_json(json& j, const RunConfig& c) {
    json synth = synth_json(c.synth);
    synth["manual_fraction"] = c.manual_fraction;
    j = {{"seed", c.seed},
         {"out", c.out.string()},
         {"data",
          {{"path", c.data_path.string()},
           {"format", c.data_format},
           {"fps", c.fps},
           {"synthetic", c.synthetic},
           {"barycenter", to_string(c.barycenter)}}},
         {"synthetic", std::move(synth)},
         {"window", c.window},
         {"stride", c.stride},
         {"classes", c.classes},
         {"labels", c.labels_path.string()},
         {"augment", {{"radius", c.augment_radius}}},
         {"split", c.split},
         {"model", c.model},
         {"train", c.train},
         {"atlas", {{"kind", to_string(c.atlas.kind)}, {"lambda", c.atlas.lambda}, {"bandwidth", c.atlas.bandwidth}}},
         {"danceability",
          {{"quantile", c.danceability.quantile},
           {"slack", c.danceability.slack},
           {"bone_floor", c.danceability.bone_floor},
           {"step_floor", c.danceability.step_floor},
           {"margin", c.danceability.margin}}},
         {"generate",
          {{"label", c.generate_label},
           {"count", c.generate_count},
           {"format", c.generate_format},
           {"checkpoint", c.checkpoint.string()}}},
         {"serve", {{"host", c.host}, {"port", c.port}}}};
}

void merge_json(RunConfig& c, const json& patch) {
    if (!patch.is_object()) throw ConfigError("config must be a JSON object");
    try {
        json merged = c;
        merged.merge_patch(patch);
        RunConfig out = c;
        from_json_full(merged, out);
        c = std::move(out);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
}

RunConfig load_run_config(const fs::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    merge_json(base, j);
    return base;
}

fs::path write_run_config(const RunConfig& c, const fs::path& dir) {
    fs::create_directories(dir);
    const fs::path p = dir / "run_config.json";
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << json(c).dump(2) << '\n';
    return p;
}

}  // namespace effortvae
