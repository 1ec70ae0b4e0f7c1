// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks: one PASS/FAIL line per criterion, exit status 0 only when
// all pass. `--only NAME` runs a single check; `--work DIR` holds scratch files.
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "augment_oracle.hpp"
#include "effortvae/error.hpp"
#include "effortvae/generator.hpp"
#include "effortvae/label_store.hpp"
#include "effortvae/metrics.hpp"
#include "effortvae/objective.hpp"
#include "effortvae/run_config.hpp"
#include "effortvae/service.hpp"
#include "effortvae/split.hpp"
#include "effortvae/synth.hpp"
#include "effortvae/trainer.hpp"

// after Eigen: <resolv.h> defines a _res macro
#include <httplib.h>

namespace fs = std::filesystem;
using namespace effortvae;
using nlohmann::json;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::vector<const Sequence*> pointers(const std::vector<Sequence>& xs) {
    std::vector<const Sequence*> out;
    for (const auto& x : xs) out.push_back(&x);
    return out;
}

Sequence random_sequence(std::size_t T, std::size_t J, RngStream& rng) {
    Sequence s;
    s.poses.resize(T);
    for (auto& p : s.poses) {
        p.joints.resize(J);
        for (auto& j : p.joints)
            for (auto& v : j) v = rng.uniform();
    }
    return s;
}

MotionClip random_clip(const std::string& id, std::size_t frames, std::size_t joints, RngStream& rng, double lo,
                       double hi) {
    MotionClip c;
    c.id = id;
    c.frames.resize(frames);
    for (auto& p : c.frames) {
        p.joints.resize(joints);
        for (auto& j : p.joints)
            for (auto& v : j) v = rng.uniform(lo, hi);
    }
    return c;
}

// ---- gradients ----------------------------------------------------------------

Outcome check_gradients() {
    const auto t0 = Clock::now();
    SynthOptions so;
    so.clips = 1;
    so.frames_per_clip = 200;
    so.seed = 1;
    const SynthDataset d = synth_dataset(so);
    const auto normalized = normalize(std::span<const MotionClip>(d.clips)).first;
    const std::vector<Sequence> wins = extract_windows(normalized, 20, 20);

    struct Variant {
        std::string name;
        ModelConfig config;
    };
    std::vector<Variant> variants{{"desk", RunConfig::desk().model}};
    variants.push_back({"unit-variance", variants[0].config});
    variants.back().config.decoder_variance = 1.0;
    variants.push_back({"per-frame-label", variants[0].config});
    variants.back().config.per_frame_label = true;
    variants.back().config.decoder_step_bias = false;

    double worst = 0.0;
    std::vector<std::string> failing;
    std::size_t checked = 0;
    for (const auto& v : variants) {
        Model m(v.config, 3);
        RngStream rng(5);
        // non-trivial standardization so its affine maps are on the path
        Standardization st = Standardization::identity(v.config.input_dim());
        for (Eigen::Index i = 0; i < st.mean.size(); ++i) {
            st.mean[i] = rng.uniform(0.3, 0.7);
            st.scale[i] = rng.uniform(0.1, 0.3);
        }
        m.set_standardization(st);
        const std::vector<LabeledExample> lab{{&wins[0], 0}, {&wins[1], 2}};
        const std::vector<const Sequence*> unl{&wins[2], &wins[3]};
        const LossNoise noise = LossNoise::draw(m.config(), 2, 2, rng);
        const LossNoise lab_noise = LossNoise::draw(m.config(), 2, 0, rng);
        const LossNoise unl_noise = LossNoise::draw(m.config(), 0, 2, rng);

        struct Batch {
            std::string name;
            std::span<const LabeledExample> lab;
            std::span<const Sequence* const> unl;
            const LossNoise* noise;
        };
        const std::vector<Batch> batches{{"labeled", lab, {}, &lab_noise},
                                         {"unlabeled", {}, unl, &unl_noise},
                                         {"mixed", lab, unl, &noise}};
        for (const auto& b : batches) {
            diff::Objective f = [&](diff::Tape& t) {
                Model::Binder bind(t, m.params());
                return build_total_loss(bind, m, b.lab, b.unl, 0.5, *b.noise).total;
            };
            diff::GradCheckOptions o;
            o.max_entries = 24;
            o.seed = 7;
            const diff::GradCheckReport r = diff::grad_check(f, m.params(), o);
            worst = std::max(worst, r.max_rel_error);
            if (std::getenv("ACCEPTANCE_VERBOSE"))
                for (const auto& t : r.tensors)
                    std::printf("  %s/%s %-18s %.2e (%.3e vs %.3e)\n", v.name.c_str(), b.name.c_str(), t.name.c_str(),
                                t.max_rel_error, t.worst_analytic, t.worst_numeric);
            for (const auto& t : r.tensors) checked += t.entries_checked;
            for (const auto& n : r.failing()) failing.push_back(v.name + "/" + b.name + ":" + n);
        }
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.passed = failing.empty() && worst < 1e-4 && secs < 120.0;
    o.detail = "max rel error " + fmt("%.2e", worst) + " over " + std::to_string(checked) + " entries, " +
               std::to_string(variants.size() * 3) + " objectives, " + fmt("%.1f s", secs) + " (< 1e-4, < 120 s)";
    if (!failing.empty()) o.detail += "; failing " + failing.front();
    return o;
}

// ---- objective identities -----------------------------------------------------

Outcome check_objective() {
    std::vector<std::string> problems;
    if (kl_gaussian({Eigen::VectorXd::Zero(8), Eigen::VectorXd::Zero(8)}) != 0.0) problems.push_back("KL(0,1) != 0");

    RngStream rng(11);
    double worst_mc = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        GaussianPosterior p{Eigen::VectorXd(4), Eigen::VectorXd(4)};
        for (int i = 0; i < 4; ++i) {
            p.mean[i] = rng.uniform(-1.5, 1.5);
            p.log_variance[i] = rng.uniform(-1.5, 1.0);
        }
        const int n = 400000;
        double acc = 0.0;
        for (int s = 0; s < n; ++s)
            for (int i = 0; i < 4; ++i) {
                const double e = rng.normal();
                const double z = p.mean[i] + std::exp(0.5 * p.log_variance[i]) * e;
                acc += -0.5 * (p.log_variance[i] + e * e) + 0.5 * z * z;  // log q - log p
            }
        const double exact = kl_gaussian(p);
        worst_mc = std::max(worst_mc, std::abs(acc / n - exact) / exact);
    }
    if (worst_mc >= 0.01) problems.push_back("Monte-Carlo KL off by " + fmt("%.3f", worst_mc));

    const ModelConfig cfg = RunConfig::desk().model;
    double worst_u = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Model m(cfg, 100 + static_cast<std::uint64_t>(trial));
        const int ystar = trial % cfg.classes;
        m.params().at("cls.out.W").value.setZero();
        m.params().at("cls.out.b").value.setZero();
        m.params().at("cls.out.b").value(ystar, 0) = 900.0;
        const Sequence x = random_sequence(static_cast<std::size_t>(cfg.window), static_cast<std::size_t>(cfg.joints), rng);
        std::vector<Eigen::VectorXd> noise;
        for (int y = 0; y < cfg.classes; ++y) {
            Eigen::VectorXd e(cfg.latent_dim);
            for (auto& v : e) v = rng.normal();
            noise.push_back(e);
        }
        const double u = unlabeled_loss(m, x, noise);
        const double l = labeled_elbo_loss(m, x, ystar, noise[static_cast<std::size_t>(ystar)]);
        worst_u = std::max(worst_u, std::abs(u - l));
    }
    if (worst_u > 1e-9) problems.push_back("U - L(y*) = " + fmt("%.2e", worst_u));

    // entropy on 10k inputs, with output scales from flat to near one-hot
    double h_min = 1e9, h_max = -1e9;
    const double ln_k = std::log(static_cast<double>(cfg.classes));
    std::size_t n_inputs = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Model m(cfg, 500 + static_cast<std::uint64_t>(trial));
        m.params().at("cls.out.W").value *= std::pow(10.0, rng.uniform(-3.0, 3.0));
        std::vector<Sequence> xs;
        for (int i = 0; i < 500; ++i)
            xs.push_back(random_sequence(static_cast<std::size_t>(cfg.window), static_cast<std::size_t>(cfg.joints), rng));
        for (const auto& q : m.classify_batch(pointers(xs))) {
            h_min = std::min(h_min, q.entropy());
            h_max = std::max(h_max, q.entropy());
            ++n_inputs;
        }
    }
    if (h_min < 0.0 || h_max > ln_k + 1e-12) problems.push_back("entropy outside [0, ln k]");

    Outcome o;
    o.passed = problems.empty();
    o.detail = "MC KL rel err " + fmt("%.4f", worst_mc) + " (< 0.01), |U - L(y*)| " + fmt("%.1e", worst_u) +
               " (<= 1e-9), entropy in [" + fmt("%.3g", h_min) + ", " + fmt("%.4f", h_max) + "] on " +
               std::to_string(n_inputs) + " inputs (ln k = " + fmt("%.4f", ln_k) + ")";
    for (const auto& p : problems) o.detail += "; " + p;
    return o;
}

// ---- augmentation ---------------------------------------------------------------

Outcome check_augmentation() {
    RngStream rng(17);
    int mismatches = 0, not_idempotent = 0;
    std::size_t labels_total = 0;
    const int trials = 1000;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<MotionClip> clips;
        const int n_clips = 1 + static_cast<int>(rng.below(3));
        for (int c = 0; c < n_clips; ++c) {
            MotionClip clip;
            clip.id = "c" + std::to_string(c);
            clip.frames.assign(30 + rng.below(120), Pose{std::vector<Vec3>(1, Vec3{0.0, 0.0, 0.0})});
            clips.push_back(std::move(clip));
        }
        const std::size_t T = 4 + rng.below(25);
        const WindowIndex w(clips, T, 1 + rng.below(3));
        LabelTable t(3, T);
        const int n = static_cast<int>(rng.below(16));
        for (int i = 0; i < n; ++i) {
            const std::string clip = "c" + std::to_string(rng.below(static_cast<std::uint64_t>(n_clips)));
            const auto starts = w.starts(clip);
            if (starts.empty()) continue;
            t.merge({clip, starts[rng.below(starts.size())], T, static_cast<int>(rng.below(3)), LabelSource::Manual, ""});
        }
        const std::size_t radius = rng.below(10);
        const LabelTable bt = augment_between(t, w);
        const LabelTable dt = augment_dilate(bt, w, radius);
        if (oracle::closure_of(bt) != oracle::between(t, w)) ++mismatches;
        if (oracle::closure_of(dt) != oracle::dilate(bt, w, radius)) ++mismatches;
        if (!(augment_between(bt, w) == bt) || !(augment_dilate(dt, w, radius) == dt)) ++not_idempotent;
        labels_total += dt.size();
    }
    Outcome o;
    o.passed = mismatches == 0 && not_idempotent == 0;
    o.detail = std::to_string(trials) + " random tables (" + std::to_string(labels_total) + " augmented labels): " +
               std::to_string(mismatches) + " oracle mismatches, " + std::to_string(not_idempotent) +
               " non-idempotent";
    return o;
}

// ---- windowing and normalization -------------------------------------------------

Outcome check_windowing() {
    RngStream rng(23);
    int bad_counts = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t T = 2 + rng.below(49), stride = 1 + rng.below(7), n = rng.below(300);
        const std::size_t expect = n < T ? 0 : (n - T) / stride + 1;
        std::vector<MotionClip> clip{random_clip("w", n, 1, rng, 0.0, 1.0)};
        if (window_count(n, T, stride) != expect || extract_windows(clip, T, stride).size() != expect ||
            WindowIndex(clip, T, stride).total() != expect)
            ++bad_counts;
    }

    double round_trip = 0.0, drift = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<MotionClip> clips;
        for (int c = 0; c < 3; ++c) {
            MotionClip clip = random_clip("n" + std::to_string(c), 20 + rng.below(80), 2 + rng.below(10), rng, -3.0, 3.0);
            // wandering root
            const double vx = rng.uniform(-0.1, 0.1), vy = rng.uniform(-0.1, 0.1);
            for (std::size_t t = 0; t < clip.frames.size(); ++t)
                for (auto& j : clip.frames[t].joints) {
                    j[0] += vx * static_cast<double>(t);
                    j[1] += vy * static_cast<double>(t);
                }
            clips.push_back(std::move(clip));
        }
        // joint counts must agree within a dataset
        for (auto& c : clips)
            for (auto& p : c.frames) p.joints.resize(clips[0].joint_count());
        const auto [out, spec] = normalize(std::span<const MotionClip>(clips));
        for (std::size_t c = 0; c < clips.size(); ++c) {
            const MotionClip back = denormalize(out[c], spec);
            double b0x = 0.0, b0y = 0.0;
            for (std::size_t t = 0; t < out[c].frames.size(); ++t) {
                double bx = 0.0, by = 0.0;
                const auto& joints = out[c].frames[t].joints;
                for (const auto& j : joints) bx += j[0], by += j[1];
                bx /= static_cast<double>(joints.size());
                by /= static_cast<double>(joints.size());
                if (t == 0) b0x = bx, b0y = by;
                drift = std::max({drift, std::abs(bx - b0x), std::abs(by - b0y)});
                for (std::size_t j = 0; j < joints.size(); ++j)
                    for (int a = 0; a < 3; ++a)
                        round_trip = std::max(round_trip, std::abs(back.frames[t].joints[j][a] -
                                                                   clips[c].frames[t].joints[j][a]));
            }
        }
    }
    Outcome o;
    o.passed = bad_counts == 0 && round_trip <= 1e-9 && drift <= 1e-9;
    o.detail = "window counts " + std::to_string(500 - bad_counts) + "/500 match floor((n-T)/stride)+1; " +
               "denormalize(normalize) err " + fmt("%.1e", round_trip) + ", barycenter drift " + fmt("%.1e", drift) +
               " (<= 1e-9)";
    return o;
}

// ---- end-to-end synthetic run ------------------------------------------------------

struct PipelineResult {
    TrainResult train;
    double seconds = 0.0;
    double heldout_ajd = 0.0;
    std::size_t heldout_n = 0;
    double val_accuracy = 0.0;
    std::vector<double> dance_rate;     // per class
    std::vector<double> recovery_rate;  // per class
    double recovery = 0.0;
    std::vector<std::vector<Sequence>> generated;
};

// The desk pipeline: synthesize, normalize, sample 1% manual labels, augment with
// both rules, split, train, encode the atlas and generate per class.
PipelineResult run_pipeline(const RunConfig& base, const fs::path& out, std::size_t per_class) {
    RunConfig c = base;
    c.synthetic = true;
    c.out = out;
    c.train.out_dir = out;
    c.resolve();
    const auto t0 = Clock::now();

    SynthDataset d = synth_dataset(c.synth);
    const auto clips = normalize(std::span<const MotionClip>(d.clips), c.barycenter).first;
    const WindowIndex index(clips, c.window, c.stride);
    RngStream label_rng = RngStream(c.seed).fork(0x1abe1);
    const LabelTable manual = sample_manual_labels(d.truth, index, c.manual_fraction, label_rng);
    const LabelTable labels = augment_dilate(augment_between(manual, index), index, c.augment_radius);
    const SplitAssignment sp = split(index, labels, c.split);
    const std::vector<Sequence> windows = extract_windows(clips, c.window, c.stride);
    const TrainData data = assemble_train_data(windows, labels, sp);

    Model model(c.model, c.seed);
    PipelineResult r;
    r.train = train(model, data, c.train);
    model.params() = r.train.selected;

    // held-out reconstruction through the posterior mean; unlabeled test windows
    // are decoded with the classifier's label
    std::map<LabelKey, const Sequence*> by_key;
    for (const auto& w : windows) by_key[{w.clip_id, w.start_frame}] = &w;
    std::vector<Sequence> originals, recon;
    for (Partition p : {Partition::LabeledTest, Partition::UnlabeledTest})
        for (const auto& k : sp.members(p)) {
            const Sequence& x = *by_key.at(k);
            const int y = p == Partition::LabeledTest ? labels.find(k)->label : model.classify(x).argmax();
            originals.push_back(x);
            recon.push_back(model.decode(model.encode(x, y).mean, y));
        }
    r.heldout_ajd = ajd(originals, recon);
    r.heldout_n = originals.size();
    r.val_accuracy = evaluate_classifier(model, data.labeled_val).accuracy;

    const LatentAtlas atlas = build_atlas(model, data.labeled_train.x, data.labeled_train.y, c.atlas);
    std::vector<Sequence> reference;
    for (const Sequence* x : data.labeled_train.x) reference.push_back(*x);
    for (std::size_t i = 0; i < data.unlabeled_train.size(); i += 10) reference.push_back(*data.unlabeled_train[i]);
    const auto& skeleton = clips.front().skeleton;
    const DanceabilityThresholds thresholds = calibrate_danceability(reference, skeleton, c.danceability);

    RngStream gen_rng = RngStream(c.seed).fork(0x9e4);
    for (int y = 0; y < c.classes; ++y) {
        r.generated.push_back(sample_conditional(atlas, model, y, per_class, gen_rng));
        r.dance_rate.push_back(danceability(r.generated.back(), skeleton, thresholds).pass_rate);
    }
    const ConfusionMatrix rec = effort_recovery(
        r.generated, [&](const Sequence& s) { return classify_by_frequency(s, d.class_frequencies); });
    r.recovery = rec.accuracy();
    for (int y = 0; y < c.classes; ++y) r.recovery_rate.push_back(rec.normalized()(y, y));
    r.seconds = seconds_since(t0);
    return r;
}

std::string list(const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : "/") + fmt("%.2f", x);
    return s;
}

Outcome check_end_to_end(const fs::path& work) {
    RunConfig c = RunConfig::desk();
    c.set_seed(7);
    const PipelineResult r = run_pipeline(c, work / "e2e", 50);
    const auto& h = r.train.history;
    const double first = h.empty() ? 0.0 : h.front().total, last = h.empty() ? 0.0 : h.back().total;
    const double drop = first > 0.0 ? 1.0 - last / first : 0.0;
    const double min_dance = r.dance_rate.empty() ? 0.0 : *std::min_element(r.dance_rate.begin(), r.dance_rate.end());

    const bool a = !r.train.aborted && static_cast<int>(h.size()) == c.train.epochs && drop >= 0.5;
    const bool b = r.val_accuracy >= 0.80;
    const bool cc = r.heldout_ajd <= 0.05;
    const bool dd = min_dance >= 0.80 && r.recovery >= 0.70;
    const bool t = r.seconds < 900.0;
    Outcome o;
    o.passed = a && b && cc && dd && t;
    o.detail = std::string("(a) loss ") + fmt("%.1f", first) + " -> " + fmt("%.1f", last) + " drop " +
               fmt("%.0f%%", 100 * drop) + (a ? "" : " [FAIL]") + "; (b) val acc " + fmt("%.3f", r.val_accuracy) +
               (b ? "" : " [FAIL]") + "; (c) held-out AJD " + fmt("%.4f", r.heldout_ajd) + " on " +
               std::to_string(r.heldout_n) + (cc ? "" : " [FAIL]") + "; (d) danceable " + list(r.dance_rate) +
               ", recovered " + fmt("%.2f", r.recovery) + " (" + list(r.recovery_rate) + ")" + (dd ? "" : " [FAIL]") +
               "; " + fmt("%.0f s", r.seconds) + (t ? "" : " [FAIL]");
    return o;
}

// ---- determinism -------------------------------------------------------------------

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome check_determinism(const fs::path& work) {
    RunConfig c = RunConfig::desk();
    c.set_seed(21);
    c.synth.clips = 3;
    c.synth.frames_per_clip = 600;
    c.manual_fraction = 0.1;  // every class needs labeled training windows for the atlas
    c.train.epochs = 3;
    c.train.checkpoint_every = 1;
    std::vector<std::string> logs, gens, ckpts;
    for (const char* run : {"det_a", "det_b"}) {
        const fs::path dir = work / run;
        fs::remove_all(dir);
        const PipelineResult r = run_pipeline(c, dir, 4);
        logs.push_back(read_file(dir / "train_log.jsonl"));
        std::vector<Sequence> all;
        for (const auto& g : r.generated) all.insert(all.end(), g.begin(), g.end());
        const GenerationManifest m{0, "all", c.seed, all.size(), "", ""};
        const auto files = export_generated(dir / "generated", all, m, "json", 35.0, {});
        gens.push_back(read_file(files.front()));
        ckpts.push_back(read_file(dir / "checkpoints" / "last.bin"));
    }
    Outcome o;
    o.passed = !logs[0].empty() && logs[0] == logs[1] && gens[0] == gens[1] && ckpts[0] == ckpts[1];
    o.detail = std::string("training log ") + (logs[0] == logs[1] ? "identical" : "DIFFERS") + " (" +
               std::to_string(logs[0].size()) + " bytes), generations " + (gens[0] == gens[1] ? "identical" : "DIFFER") +
               ", checkpoints " + (ckpts[0] == ckpts[1] ? "identical" : "DIFFER");
    return o;
}

// ---- AJD ---------------------------------------------------------------------------

Outcome check_ajd() {
    RngStream rng(29);
    int violations = 0;
    double worst_sym = 0.0, worst_tri = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t T = 1 + rng.below(40), J = 1 + rng.below(20);
        const Sequence x = random_sequence(T, J, rng), y = random_sequence(T, J, rng), z = random_sequence(T, J, rng);
        const double xy = ajd(x, y), yx = ajd(y, x), xz = ajd(x, z), yz = ajd(y, z);
        if (xy < 0.0 || ajd(x, x) > 1e-12) ++violations;
        worst_sym = std::max(worst_sym, std::abs(xy - yx));
        worst_tri = std::max(worst_tri, xz - (xy + yz));
    }
    Outcome o;
    o.passed = violations == 0 && worst_sym <= 1e-12 && worst_tri <= 1e-12;
    o.detail = "1000 triples: " + std::to_string(violations) + " nonnegativity/identity violations, max asymmetry " +
               fmt("%.1e", worst_sym) + ", max triangle excess " + fmt("%.1e", worst_tri) + " (<= 1e-12)";
    return o;
}

// ---- service -------------------------------------------------------------------------

Outcome check_service(const fs::path& work) {
    const fs::path dir = work / "service";
    fs::remove_all(dir);
    fs::create_directories(dir);
    ServiceConfig cfg;
    cfg.window = 10;
    Service s(cfg);
    RngStream rng(31);
    std::vector<MotionClip> clips{random_clip("a", 40, 5, rng, 0.0, 1.0), random_clip("b", 35, 5, rng, 0.0, 1.0)};
    s.load_dataset(clips);
    s.open_labels(dir / "labels.csv");
    const int port = s.bind_any_port();
    if (port <= 0) return {false, "could not bind a port"};
    std::thread server([&] { s.serve(); });

    // 31 + 26 windows; 50 writers take distinct ones
    const int writers = 50;
    std::vector<std::pair<std::string, int>> targets;
    for (int i = 0; i < 31 && static_cast<int>(targets.size()) < writers; ++i) targets.push_back({"a", i});
    for (int i = 0; static_cast<int>(targets.size()) < writers; ++i) targets.push_back({"b", i});
    std::vector<int> status(writers, 0);
    std::atomic<int> ready{0};
    std::vector<std::thread> threads;
    for (int i = 0; i < writers; ++i)
        threads.emplace_back([&, i] {
            httplib::Client cli("127.0.0.1", port);
            const json body = {{"clip", targets[i].first}, {"start", targets[i].second}, {"label", i % 3}};
            ++ready;
            while (ready.load() < writers) std::this_thread::yield();
            if (auto r = cli.Post("/api/label", body.dump(), "application/json")) status[i] = r->status;
        });
    for (auto& t : threads) t.join();

    httplib::Client cli("127.0.0.1", port);
    const auto info = cli.Get("/api/dataset/info");
    s.stop();
    server.join();

    int acked = 0;
    for (int st : status) acked += st == 201;
    std::vector<std::string> problems;
    LabelTable table(3, cfg.window);
    try {
        table = read_labels_csv(dir / "labels.csv", 3, cfg.window);
    } catch (const Error& e) {
        problems.push_back(std::string("CSV does not parse: ") + e.what());
    }
    int present = 0;
    for (int i = 0; i < writers; ++i) {
        if (status[i] != 201) continue;
        const LabelRecord* r = table.find({targets[i].first, static_cast<std::size_t>(targets[i].second)});
        present += r && r->label == i % 3;
    }
    std::size_t stats_total = 0;
    if (!info || info->status != 200) {
        problems.push_back("GET /api/dataset/info failed");
    } else {
        const json j = json::parse(info->body);
        stats_total = j.at("label_stats").at("total").get<std::size_t>();
        const auto counts = j.at("label_stats").at("counts").get<std::vector<std::size_t>>();
        const ClassHistogram h = class_histogram(table);
        if (counts != h.counts) problems.push_back("stats counts differ from CSV");
    }
    if (stats_total != table.size()) problems.push_back("stats total differs from CSV");

    Outcome o;
    o.passed = problems.empty() && acked == writers && present == acked;
    o.detail = std::to_string(acked) + "/" + std::to_string(writers) + " writes acknowledged, " +
               std::to_string(present) + " present in CSV, stats total " + std::to_string(stats_total);
    for (const auto& p : problems) o.detail += "; " + p;
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::string work = "acceptance_work", only;
    app.add_option("--work", work, "Scratch directory");
    app.add_option("--only", only, "Run a single check by name");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
        {"gradients", check_gradients},
        {"objective-identities", check_objective},
        {"augmentation-oracle", check_augmentation},
        {"windowing-normalization", check_windowing},
        {"end-to-end-synthetic", [&] { return check_end_to_end(work); }},
        {"determinism", [&] { return check_determinism(work); }},
        {"ajd-pseudometric", check_ajd},
        {"service-concurrency", [&] { return check_service(work); }},
    };
    int failed = 0, ran = 0;
    for (const auto& [name, fn] : checks) {
        if (!only.empty() && name != only) continue;
        ++ran;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.passed;
        std::cout << (o.passed ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    if (ran == 0) {
        std::cerr << "no check named '" << only << "'\n";
        return 2;
    }
    std::cout << (failed ? "FAILED " : "PASSED ") << ran - failed << "/" << ran << std::endl;
    return failed ? 1 : 0;
}
