// SPDX-License-Identifier: Apache-2.0
//
// effortvae <command> [options]
//
//   ingest    load (or synthesize) clips, normalize, write dataset + summary
//   augment   between-fill and dilation over the manual labels
//   train     split, train, pick the best epoch, fit the latent atlas
//   eval      classifier accuracy / confusion and held-out AJD
//   generate  class-conditional sequences from the atlas
//   serve     HTTP API for the studio
//
// All commands share --config, --seed and --out; the resolved configuration is
// written to <out>/run_config.json. Exit codes: 0 ok, 2 usage, 3 data, 4 numeric.
#include <csignal>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "effortvae/checkpoint.hpp"
#include "effortvae/error.hpp"
#include "effortvae/generator.hpp"
#include "effortvae/label_store.hpp"
#include "effortvae/metrics.hpp"
#include "effortvae/run_config.hpp"
#include "effortvae/service.hpp"
#include "effortvae/split.hpp"
#include "effortvae/synth.hpp"
#include "effortvae/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace effortvae;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

class UsageError : public Error {
    using Error::Error;
};

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p);
    if (!out) throw ConfigError("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw UsageError("missing " + p.string() + " (run the earlier pipeline step first)");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(p.string() + ": " + e.what(), static_cast<long>(e.byte));
    }
}

fs::path dataset_path(const RunConfig& c) { return c.out / "dataset.json"; }

std::vector<MotionClip> load_dataset(const RunConfig& c) {
    if (!fs::exists(dataset_path(c))) throw UsageError("no dataset in " + c.out.string() + "; run `ingest` first");
    return load_clips(dataset_path(c), ClipFormat::Json, c.fps);
}

LabelTable load_labels(const RunConfig& c, bool prefer_augmented) {
    const fs::path aug = c.out / "labels_augmented.csv";
    const fs::path p = prefer_augmented && fs::exists(aug) ? aug : c.labels_file();
    if (!fs::exists(p)) throw UsageError("no label file " + p.string());
    return read_labels_csv(p, c.classes, c.window);
}

struct Prepared {
    std::vector<MotionClip> clips;
    std::vector<Sequence> windows;
    WindowIndex index;
};

Prepared prepare(const RunConfig& c) {
    Prepared p;
    p.clips = load_dataset(c);
    p.windows = extract_windows(p.clips, c.window, c.stride);
    p.index = WindowIndex(p.clips, c.window, c.stride);
    return p;
}

// ---- commands -----------------------------------------------------------------

int cmd_ingest(RunConfig& c) {
    std::vector<MotionClip> raw;
    LabelTable truth(c.classes, c.window);
    if (c.synthetic) {
        SynthDataset d = synth_dataset(c.synth);
        raw = std::move(d.clips);
        truth = std::move(d.truth);
    } else {
        if (c.data_path.empty()) throw UsageError("ingest needs --data PATH or --synthetic");
        if (!fs::exists(c.data_path)) throw UsageError("no such path: " + c.data_path.string());
        const ClipFormat fmt = c.data_format == "auto"
                                   ? (fs::is_directory(c.data_path) ? ClipFormat::Csv : clip_format_from_path(c.data_path))
                                   : clip_format_from_string(c.data_format);
        raw = load_clips(c.data_path, fmt, c.fps);
    }
    auto [clips, spec] = normalize(std::span<const MotionClip>(raw), c.barycenter);
    fs::create_directories(c.out);
    save_clips_json(dataset_path(c), clips);
    json norm = {{"scale", spec.scale}, {"offset", spec.offset}, {"barycenter", to_string(spec.mode)}};
    write_json(c.out / "normalization.json", norm);

    const LabelTable* labels = nullptr;
    LabelTable manual(c.classes, c.window);
    if (c.synthetic) {
        write_labels_csv(c.out / "labels_truth.csv", truth);
        const WindowIndex index(clips, c.window, c.stride);
        RngStream rng = RngStream(c.seed).fork(0x1abe1);
        manual = sample_manual_labels(truth, index, c.manual_fraction, rng, iso8601_now());
        write_labels_csv(c.labels_file(), manual);
        labels = &manual;
    }
    json summary = dataset_summary(clips, c.window, c.stride, labels);
    write_json(c.out / "summary.json", summary);
    std::cout << summary.dump(2) << '\n';
    return 0;
}

int cmd_augment(RunConfig& c) {
    const Prepared p = prepare(c);
    const LabelTable manual = load_labels(c, false);
    const std::string now = iso8601_now();
    const LabelTable between = augment_between(manual, p.index, now);
    const LabelTable dilated = augment_dilate(between, p.index, c.augment_radius, now);
    write_labels_csv(c.out / "labels_augmented.csv", dilated);

    const std::size_t n_manual = manual.count(LabelSource::Manual);
    const std::size_t total = p.index.total();
    auto pct = [&](std::size_t n) { return total ? 100.0 * static_cast<double>(n) / static_cast<double>(total) : 0.0; };
    const ClassHistogram h = class_histogram(dilated);
    json report = {{"windows", total},
                   {"manual", n_manual},
                   {"between_fill", dilated.count(LabelSource::BetweenFill)},
                   {"dilation", dilated.count(LabelSource::Dilation)},
                   {"augmented_total", dilated.size()},
                   {"class_counts", h.counts},
                   {"class_fractions", h.fractions ? json(*h.fractions) : json(nullptr)}};
    write_json(c.out / "augment.json", report);
    std::printf("%zu manual (%.2f%%) -> %zu augmented (%.1f%% of dataset)\n", n_manual, pct(n_manual), dilated.size(),
                pct(dilated.size()));
    const LabelNames names(c.classes);
    for (int y = 0; y < c.classes; ++y)
        std::printf("  %-8s %6zu (%.0f%%)\n", names.name(y).c_str(), h.counts[static_cast<std::size_t>(y)],
                    h.fractions ? 100.0 * (*h.fractions)[static_cast<std::size_t>(y)] : 0.0);
    return 0;
}

int cmd_train(RunConfig& c) {
    const Prepared p = prepare(c);
    const LabelTable labels = load_labels(c, true);
    const SplitAssignment split = effortvae::split(p.index, labels, c.split);
    fs::create_directories(c.out);
    split.save(c.out / "split.json");
    const TrainData data = assemble_train_data(p.windows, labels, split);

    c.model.joints = static_cast<int>(p.clips.front().joint_count());
    c.model.validate();
    write_run_config(c, c.out);
    Model model(c.model, c.seed);
    TrainConfig tc = c.train;
    tc.out_dir = c.out;
    const TrainResult result = train(model, data, tc);

    for (const auto& r : result.history) std::cout << json(r).dump() << '\n';

    Model selected = model;
    selected.params() = result.selected;
    json summary = {{"epochs", result.history.size()},
                    {"selected_epoch", result.selected_epoch},
                    {"alpha", result.alpha},
                    {"aborted", result.aborted},
                    {"abort_reason", result.abort_reason},
                    {"n_labeled_train", data.labeled_train.size()},
                    {"n_unlabeled_train", data.unlabeled_train.size()}};
    if (result.history.empty()) {
        save_training_checkpoint(c.checkpoint_stem(), selected, &result.state.optimizer, {{"epoch", 0}, {"epochs_done", 0}});
    }
    summary["checkpoint_sha256"] = sha256_file(checkpoint_tensor_path(c.checkpoint_stem()));

    // Atlas over labeled training windows, and danceability thresholds from them.
    try {
        const LatentAtlas atlas = build_atlas(selected, data.labeled_train.x, data.labeled_train.y, c.atlas);
        write_json(c.out / "atlas.json", atlas.to_json());
        summary["atlas_hash"] = atlas.hash();
    } catch (const InsufficientDataError& e) {
        summary["atlas_error"] = e.what();
    }
    std::vector<Sequence> reference;
    for (const Sequence* x : data.labeled_train.x) reference.push_back(*x);
    for (const Sequence* x : data.unlabeled_train) reference.push_back(*x);
    const DanceabilityThresholds t = calibrate_danceability(reference, p.clips.front().skeleton, c.danceability);
    write_json(c.out / "danceability.json", t);
    summary["danceability"] = t;
    write_json(c.out / "train_summary.json", summary);
    if (result.aborted) {
        std::cerr << "training aborted: " << result.abort_reason << '\n';
        return kExitNumeric;
    }
    return 0;
}

int cmd_eval(RunConfig& c) {
    const Prepared p = prepare(c);
    const LabelTable labels = load_labels(c, true);
    const fs::path split_path = c.out / "split.json";
    const SplitAssignment split = fs::exists(split_path) ? SplitAssignment::load(split_path)
                                                          : effortvae::split(p.index, labels, c.split);
    const TrainData data = assemble_train_data(p.windows, labels, split);
    const LoadedModel loaded = load_training_checkpoint(c.checkpoint_stem());
    const Model& model = loaded.model;

    LabeledSet test;
    for (const auto& k : split.members(Partition::LabeledTest)) {
        for (const auto& w : p.windows)
            if (w.clip_id == k.clip_id && w.start_frame == k.start_frame) {
                test.x.push_back(&w);
                test.y.push_back(labels.find(k)->label);
                break;
            }
    }
    json report = {{"checkpoint", c.checkpoint_stem().string()},
                   {"checkpoint_sha256", sha256_file(checkpoint_tensor_path(c.checkpoint_stem()))}};
    auto evaluate = [&](const char* name, const LabeledSet& set) {
        if (set.empty()) return;
        const ClassifierEvaluation e = evaluate_classifier(model, set);
        std::vector<Sequence> orig, rec;
        for (std::size_t i = 0; i < set.size(); ++i) {
            orig.push_back(*set.x[i]);
            rec.push_back(model.decode(model.encode(*set.x[i], set.y[i]).mean, set.y[i]));
        }
        report[name] = {{"n", set.size()}, {"accuracy", e.accuracy}, {"confusion", e.confusion.to_json()},
                        {"ajd", ajd(orig, rec)}};
        std::ofstream(c.out / (std::string("confusion_") + name + ".csv")) << e.confusion.to_csv();
    };
    evaluate("val", data.labeled_val);
    evaluate("test", test);
    write_json(c.out / "eval.json", report);
    std::cout << report.dump(2) << '\n';
    return 0;
}

int cmd_generate(RunConfig& c) {
    const LoadedModel loaded = load_training_checkpoint(c.checkpoint_stem());
    const LatentAtlas atlas = LatentAtlas::from_json(read_json(c.out / "atlas.json"));
    const LabelNames names(loaded.model.config().classes);
    int label = 0;
    try {
        label = names.parse(c.generate_label);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    RngStream rng(c.seed);
    const auto seqs = sample_conditional(atlas, loaded.model, label, c.generate_count, rng);

    std::vector<Edge> skeleton;
    double fps = c.fps;
    if (fs::exists(dataset_path(c))) {
        const auto clips = load_dataset(c);
        if (!clips.empty()) {
            skeleton = clips.front().skeleton;
            fps = clips.front().fps;
        }
    }
    GenerationManifest m{label, names.name(label), c.seed, seqs.size(), atlas.hash(),
                         sha256_file(checkpoint_tensor_path(c.checkpoint_stem()))};
    const fs::path dir = c.out / "generated" / names.name(label);
    export_generated(dir, seqs, m, c.generate_format, fps, skeleton);
    json report = {{"manifest", m}, {"dir", dir.string()}};
    if (fs::exists(c.out / "danceability.json")) {
        const auto t = read_json(c.out / "danceability.json").get<DanceabilityThresholds>();
        const DanceabilityReport d = danceability(seqs, skeleton, t);
        report["danceability"] = {{"pass_rate", d.pass_rate}, {"passed", d.passed}, {"thresholds", t}};
        write_json(dir / "danceability.json", d);
    }
    std::cout << report.dump(2) << '\n';
    return 0;
}

Service* g_service = nullptr;

int cmd_serve(RunConfig& c) {
    ServiceConfig sc;
    sc.host = c.host;
    sc.port = c.port;
    sc.window = c.window;
    sc.stride = c.stride;
    sc.classes = c.classes;
    sc.apply_env();
    Service service(sc);
    if (fs::exists(dataset_path(c))) service.load_dataset(load_dataset(c));
    service.open_labels(c.labels_file());
    if (fs::exists(checkpoint_manifest_path(c.checkpoint_stem())) && fs::exists(c.out / "atlas.json")) {
        LoadedModel loaded = load_training_checkpoint(c.checkpoint_stem());
        service.load_model(std::move(loaded.model), LatentAtlas::from_json(read_json(c.out / "atlas.json")),
                           sha256_file(checkpoint_tensor_path(c.checkpoint_stem())));
    }
    g_service = &service;
    std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_service) g_service->stop();
    });
    std::cerr << "serving on http://" << sc.host << ':' << sc.port << '\n';
    const bool ok = service.listen();
    g_service = nullptr;
    if (!ok) throw UsageError("cannot bind " + sc.host + ":" + std::to_string(sc.port));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised conditional motion VAE"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Root seed");
    app.add_option("--out", out_dir, "Run directory");
    bool desk = false;
    app.add_flag("--desk", desk, "Desk-scale defaults (T=20, small model)");

    // Flag values are collected here and applied on top of the config file.
    json flags = json::object();
    std::vector<std::function<void()>> collect;
    auto opt = [&](CLI::App* sub, const std::string& name, json::json_pointer ptr, const std::string& help, auto tag) {
        using T = decltype(tag);
        auto holder = std::make_shared<T>();
        CLI::Option* o = sub->add_option(name, *holder, help);
        collect.push_back([&flags, o, ptr, holder] {
            if (o->count() > 0) flags[ptr] = *holder;
        });
    };

    auto* ingest = app.add_subcommand("ingest", "Load or synthesize clips, normalize and summarize");
    opt(ingest, "--data", "/data/path"_json_pointer, "Clip file or directory", std::string{});
    opt(ingest, "--format", "/data/format"_json_pointer, "csv | json | raw-binary | auto", std::string{});
    opt(ingest, "--fps", "/data/fps"_json_pointer, "Frame rate for formats without one", double{});
    opt(ingest, "--barycenter", "/data/barycenter"_json_pointer, "fixed-xy | none", std::string{});
    bool synthetic = false;
    ingest->add_flag("--synthetic", synthetic, "Generate the synthetic desk dataset");
    opt(ingest, "--clips", "/synthetic/clips"_json_pointer, "Synthetic clip count", std::size_t{});
    opt(ingest, "--frames", "/synthetic/frames_per_clip"_json_pointer, "Synthetic frames per clip", std::size_t{});
    opt(ingest, "--joints", "/synthetic/joints"_json_pointer, "Synthetic joint count", std::size_t{});
    opt(ingest, "--manual-fraction", "/synthetic/manual_fraction"_json_pointer, "Synthetic annotation density", double{});

    auto* augment = app.add_subcommand("augment", "Expand manual labels by between-fill and dilation");
    opt(augment, "--radius", "/augment/radius"_json_pointer, "Dilation radius in frames", std::size_t{});

    auto* trn = app.add_subcommand("train", "Train and select a model variant");
    opt(trn, "--epochs", "/train/epochs"_json_pointer, "Epochs", int{});
    opt(trn, "--batch", "/train/batch_size"_json_pointer, "Batch size", std::size_t{});
    opt(trn, "--lr", "/train/learning_rate"_json_pointer, "Adam learning rate", double{});
    opt(trn, "--alpha", "/train/alpha"_json_pointer, "Classification weight (default 0.1 n_u / n_l)", double{});
    opt(trn, "--criterion", "/train/criterion"_json_pointer, "dance | watch", std::string{});
    opt(trn, "--checkpoint-every", "/train/checkpoint_every"_json_pointer, "Checkpoint cadence in epochs", int{});
    opt(trn, "--decoder-variance", "/model/decoder_variance"_json_pointer, "Decoder output variance", double{});

    auto* eval = app.add_subcommand("eval", "Classifier accuracy and reconstruction AJD");
    auto* gen = app.add_subcommand("generate", "Class-conditional generation");
    opt(gen, "--label", "/generate/label"_json_pointer, "Class name or index", std::string{});
    opt(gen, "--count", "/generate/count"_json_pointer, "Number of sequences", std::size_t{});
    opt(gen, "--format", "/generate/format"_json_pointer, "csv | json", std::string{});
    auto* serve = app.add_subcommand("serve", "HTTP API for the studio");
    opt(serve, "--host", "/serve/host"_json_pointer, "Bind address", std::string{});
    opt(serve, "--port", "/serve/port"_json_pointer, "Port", int{});

    for (auto* sub : {ingest, augment, trn, eval, gen, serve}) {
        opt(sub, "--window", "/window"_json_pointer, "Window length T", std::size_t{});
        opt(sub, "--stride", "/stride"_json_pointer, "Window stride", std::size_t{});
        opt(sub, "--classes", "/classes"_json_pointer, "Number of classes k", int{});
        opt(sub, "--labels", "/labels"_json_pointer, "Manual label CSV", std::string{});
        if (sub == eval || sub == gen || sub == serve)
            opt(sub, "--checkpoint", "/generate/checkpoint"_json_pointer, "Checkpoint stem", std::string{});
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        for (const auto& f : collect) f();
        RunConfig c = desk ? RunConfig::desk() : RunConfig{};
        if (!config_path.empty()) c = load_run_config(config_path, c);
        if (synthetic) flags["data"]["synthetic"] = true;
        if (!out_dir.empty()) flags["out"] = out_dir;
        if (seed) c.set_seed(*seed);
        merge_json(c, flags);
        c.resolve();

        const std::string cmd = app.get_subcommands().front()->get_name();
        fs::create_directories(c.out);
        write_run_config(c, c.out);
        if (cmd == "ingest") return cmd_ingest(c);
        if (cmd == "augment") return cmd_augment(c);
        if (cmd == "train") return cmd_train(c);
        if (cmd == "eval") return cmd_eval(c);
        if (cmd == "generate") return cmd_generate(c);
        if (cmd == "serve") return cmd_serve(c);
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
}
