// SPDX-License-Identifier: Apache-2.0
#include "effortvae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "effortvae/error.hpp"

namespace effortvae {

namespace {

struct Limb {
    int parent = -1;
    Eigen::Vector3d offset;
    Eigen::Vector3d axis;
    double amplitude = 0.0;
    double phase = 0.0;
};

Eigen::Vector3d random_unit(RngStream& rng) {
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    return n > 1e-12 ? Eigen::Vector3d(v / n) : Eigen::Vector3d::UnitX();
}

std::vector<Limb> make_skeleton(std::size_t joints, RngStream& rng) {
    std::vector<Limb> limbs(joints);
    for (std::size_t j = 1; j < joints; ++j) {
        Limb& l = limbs[j];
        l.parent = static_cast<int>((j - 1) / 2);
        Eigen::Vector3d dir = random_unit(rng);
        dir.z() = -std::abs(dir.z());  // limbs hang below their parent
        l.offset = rng.uniform(0.3, 0.5) * dir.normalized();
        // Swing about an axis orthogonal to the bone so the motion is visible.
        l.axis = l.offset.cross(random_unit(rng)).normalized();
        l.amplitude = rng.uniform(0.4, 0.8);
        l.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    return limbs;
}

Pose pose_at(const std::vector<Limb>& limbs, double phi, double root_bob) {
    std::vector<Eigen::Vector3d> p(limbs.size());
    p[0] = Eigen::Vector3d(0.0, 0.0, 1.0 + root_bob * std::sin(phi));
    for (std::size_t j = 1; j < limbs.size(); ++j) {
        const Limb& l = limbs[j];
        const double theta = l.amplitude * std::sin(phi + l.phase);
        p[j] = p[static_cast<std::size_t>(l.parent)] + Eigen::AngleAxisd(theta, l.axis) * l.offset;
    }
    Pose pose;
    pose.joints.reserve(p.size());
    for (const auto& v : p) pose.joints.push_back({v.x(), v.y(), v.z()});
    return pose;
}

}  // namespace

std::vector<double> class_frequencies(int classes, double min_frequency, double max_frequency) {
    if (classes < 2) throw PreconditionError("class_frequencies: need at least 2 classes");
    if (!(min_frequency > 0.0) || !(max_frequency > min_frequency))
        throw PreconditionError("class_frequencies: need 0 < min < max");
    std::vector<double> f(static_cast<std::size_t>(classes));
    const double ratio = max_frequency / min_frequency;
    for (int c = 0; c < classes; ++c)
        f[static_cast<std::size_t>(c)] = min_frequency * std::pow(ratio, static_cast<double>(c) / (classes - 1));
    return f;
}

SynthDataset synth_dataset(const SynthOptions& o) {
    if (o.classes < 2) throw PreconditionError("synth_dataset: need at least 2 classes");
    if (o.joints < 1) throw PreconditionError("synth_dataset: need at least 1 joint");
    if (o.min_segment < 1 || o.max_segment < o.min_segment)
        throw PreconditionError("synth_dataset: invalid segment length range");

    SynthDataset out{.clips = {},
                     .truth = LabelTable(o.classes, o.window),
                     .frame_classes = {},
                     .class_frequencies = class_frequencies(o.classes, o.min_frequency, o.max_frequency)};
    const RngStream root(o.seed);
    // One dancer: every clip shares the body; clips differ in choreography.
    RngStream body_rng = root.fork(0xb0d1);
    const std::vector<Limb> limbs = make_skeleton(o.joints, body_rng);

    for (std::size_t c = 0; c < o.clips; ++c) {
        RngStream rng = root.fork(c);

        MotionClip clip;
        clip.id = "synth" + std::to_string(c);
        clip.fps = o.fps;
        for (std::size_t j = 1; j < o.joints; ++j) clip.skeleton.emplace_back(limbs[j].parent, static_cast<int>(j));

        std::vector<int> classes;
        classes.reserve(o.frames_per_clip);
        int current = static_cast<int>(rng.below(static_cast<std::uint64_t>(o.classes)));
        while (classes.size() < o.frames_per_clip) {
            const std::size_t len = o.min_segment + rng.below(o.max_segment - o.min_segment + 1);
            for (std::size_t i = 0; i < len && classes.size() < o.frames_per_clip; ++i) classes.push_back(current);
            // Next segment always switches class.
            current = (current + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(o.classes - 1)))) % o.classes;
        }

        double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        clip.frames.reserve(o.frames_per_clip);
        for (std::size_t t = 0; t < o.frames_per_clip; ++t) {
            Pose pose = pose_at(limbs, phi, 0.05);
            for (auto& joint : pose.joints)
                for (double& v : joint) v += o.jitter * rng.normal();
            clip.frames.push_back(std::move(pose));
            phi += 2.0 * std::numbers::pi * out.class_frequencies[static_cast<std::size_t>(classes[t])];
        }

        const std::size_t n_windows = window_count(o.frames_per_clip, o.window, o.stride);
        for (std::size_t w = 0; w < n_windows; ++w) {
            const std::size_t start = w * o.stride;
            out.truth.merge(LabelRecord{.clip_id = clip.id,
                                        .start_frame = start,
                                        .seq_len = o.window,
                                        .label = classes[start + o.window / 2],
                                        .source = LabelSource::Manual,
                                        .created_at = {}});
        }
        out.clips.push_back(std::move(clip));
        out.frame_classes.push_back(std::move(classes));
    }
    return out;
}

LabelTable sample_manual_labels(const LabelTable& truth, const WindowIndex& windows, double fraction,
                                RngStream& rng, const std::string& created_at) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw PreconditionError("sample_manual_labels: fraction not in [0, 1]");
    LabelTable out(truth.classes(), truth.seq_len());
    const std::size_t total = windows.total();
    const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
    if (target == 0 || total == 0) return out;

    std::vector<std::pair<std::string, std::size_t>> all;
    all.reserve(total);
    for (const auto& [clip, n] : windows.clips())
        for (std::size_t s : windows.starts(clip)) all.emplace_back(clip, s);

    const std::size_t T = windows.window();
    const std::size_t stride = windows.stride();
    auto free_around = [&](const std::string& clip, std::size_t a, std::size_t b) {
        const std::size_t lo = a > T ? a - T : 0;
        for (auto it = out.records().lower_bound({clip, lo}); it != out.records().end(); ++it) {
            if (it->first.clip_id != clip || it->first.start_frame > b + T) break;
            return false;
        }
        return true;
    };

    const std::size_t max_attempts = 100 * target + 1000;
    for (std::size_t attempt = 0; attempt < max_attempts && out.size() < target; ++attempt) {
        const auto& [clip, a] = all[rng.below(all.size())];
        std::size_t gap = (T + 1) / 2 + rng.below(T - (T + 1) / 2 + 1);
        gap = std::max<std::size_t>(stride, gap / stride * stride);
        const std::size_t b = a + gap;
        if (!windows.contains(clip, b)) continue;
        const LabelRecord* ra = truth.find({clip, a});
        const LabelRecord* rb = truth.find({clip, b});
        if (!ra || !rb || ra->label != rb->label) continue;
        if (!free_around(clip, a, b)) continue;
        for (const LabelRecord* r : {ra, rb}) {
            LabelRecord copy = *r;
            copy.source = LabelSource::Manual;
            copy.created_at = created_at;
            out.merge(copy);
        }
    }
    return out;
}

double dominant_frequency(const Sequence& seq, double lo, double hi, int steps) {
    const std::size_t n = seq.length();
    if (n < 4) throw PreconditionError("dominant_frequency: need at least 4 frames");
    if (!(lo > 0.0) || !(hi > lo) || steps < 2) throw PreconditionError("dominant_frequency: invalid frequency grid");
    const std::size_t J = seq.joint_count();

    // Series per coordinate, centred.
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(3 * J));
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < J; ++j)
            for (int a = 0; a < 3; ++a) x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(3 * j + a)) =
                seq.poses[t].joints[j][static_cast<std::size_t>(a)];
    x.rowwise() -= x.colwise().mean();

    double best_f = lo;
    double best = -1.0;
    Eigen::MatrixXd basis(static_cast<Eigen::Index>(n), 3);
    for (int i = 0; i < steps; ++i) {
        const double f = lo * std::pow(hi / lo, static_cast<double>(i) / (steps - 1));
        for (std::size_t t = 0; t < n; ++t) {
            const double w = 2.0 * std::numbers::pi * f * static_cast<double>(t);
            basis(static_cast<Eigen::Index>(t), 0) = 1.0;
            basis(static_cast<Eigen::Index>(t), 1) = std::sin(w);
            basis(static_cast<Eigen::Index>(t), 2) = std::cos(w);
        }
        // Explained sum of squares of the projection onto span(basis); the
        // constant column carries nothing after centring.
        const Eigen::Matrix3d gram = basis.transpose() * basis;
        const Eigen::MatrixXd b = basis.transpose() * x;
        const Eigen::LDLT<Eigen::Matrix3d> ldlt(gram);
        if (ldlt.info() != Eigen::Success) continue;
        const double explained = (b.array() * ldlt.solve(b).array()).sum();
        if (explained > best) {
            best = explained;
            best_f = f;
        }
    }
    return best_f;
}

int classify_by_frequency(const Sequence& seq, std::span<const double> freqs) {
    if (freqs.empty()) throw PreconditionError("classify_by_frequency: no class frequencies");
    const double f = std::log(dominant_frequency(seq));
    int best = 0;
    for (std::size_t c = 1; c < freqs.size(); ++c)
        if (std::abs(std::log(freqs[c]) - f) < std::abs(std::log(freqs[static_cast<std::size_t>(best)]) - f))
            best = static_cast<int>(c);
    return best;
}

}  // namespace effortvae
