// SPDX-License-Identifier: Apache-2.0
#include "effortvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "effortvae/error.hpp"

namespace effortvae {

namespace {

void check_same_shape(const Sequence& a, const Sequence& b) {
    if (a.length() != b.length() || a.joint_count() != b.joint_count())
        throw PreconditionError("ajd: sequence shapes differ");
}

double distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void check_edges(std::span<const Edge> skeleton, std::size_t joints) {
    for (const auto& [a, b] : skeleton)
        if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= joints || static_cast<std::size_t>(b) >= joints)
            throw PreconditionError("skeleton edge references a missing joint");
}

}  // namespace

double ajd(const Sequence& a, const Sequence& b) {
    check_same_shape(a, b);
    if (a.length() == 0 || a.joint_count() == 0) return 0.0;
    double s = 0.0;
    for (std::size_t t = 0; t < a.length(); ++t)
        for (std::size_t j = 0; j < a.joint_count(); ++j) s += distance(a.poses[t].joints[j], b.poses[t].joints[j]);
    return s / static_cast<double>(a.length() * a.joint_count());
}

double ajd(std::span<const Sequence> a, std::span<const Sequence> b) {
    if (a.size() != b.size()) throw PreconditionError("ajd: list lengths differ");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        check_same_shape(a[i], b[i]);
        for (std::size_t t = 0; t < a[i].length(); ++t)
            for (std::size_t j = 0; j < a[i].joint_count(); ++j) {
                s += distance(a[i].poses[t].joints[j], b[i].poses[t].joints[j]);
                ++n;
            }
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

void to_json(nlohmann::json& j, const DanceabilityThresholds& t) {
    j = {{"bone_rel_std", t.bone_rel_std}, {"max_step", t.max_step}, {"margin", t.margin}};
}

void from_json(const nlohmann::json& j, DanceabilityThresholds& t) {
    t.bone_rel_std = j.value("bone_rel_std", t.bone_rel_std);
    t.max_step = j.value("max_step", t.max_step);
    t.margin = j.value("margin", t.margin);
}

MotionStats motion_stats(const Sequence& seq, std::span<const Edge> skeleton) {
    check_edges(skeleton, seq.joint_count());
    MotionStats s;
    s.min_coordinate = std::numeric_limits<double>::infinity();
    s.max_coordinate = -std::numeric_limits<double>::infinity();
    for (const auto& pose : seq.poses)
        for (const auto& joint : pose.joints)
            for (double v : joint) {
                s.min_coordinate = std::min(s.min_coordinate, v);
                s.max_coordinate = std::max(s.max_coordinate, v);
            }
    for (std::size_t t = 1; t < seq.length(); ++t)
        for (std::size_t j = 0; j < seq.joint_count(); ++j)
            s.max_step = std::max(s.max_step, distance(seq.poses[t].joints[j], seq.poses[t - 1].joints[j]));

    const auto n = static_cast<double>(seq.length());
    for (const auto& [a, b] : skeleton) {
        if (seq.length() == 0) break;
        double sum = 0.0, sq = 0.0;
        for (const auto& pose : seq.poses) {
            const double len = distance(pose.joints[static_cast<std::size_t>(a)], pose.joints[static_cast<std::size_t>(b)]);
            sum += len;
            sq += len * len;
        }
        const double mean = sum / n;
        const double var = std::max(0.0, sq / n - mean * mean);
        // A bone that collapses to a point is as unstable as it gets.
        const double rel = mean > 1e-12 ? std::sqrt(var) / mean : (var > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        s.bone_rel_std = std::max(s.bone_rel_std, rel);
    }
    return s;
}

void to_json(nlohmann::json& j, const DanceabilityReport& r) {
    nlohmann::json seqs = nlohmann::json::array();
    for (const auto& f : r.sequences)
        seqs.push_back({{"bone_length_stable", f.bone_length_stable},
                        {"velocity_continuous", f.velocity_continuous},
                        {"within_box", f.within_box},
                        {"bone_rel_std", f.stats.bone_rel_std},
                        {"max_step", f.stats.max_step}});
    j = {{"pass_rate", r.pass_rate}, {"passed", r.passed}, {"count", r.sequences.size()},
         {"thresholds", r.thresholds}, {"sequences", std::move(seqs)}};
}

DanceabilityReport danceability(std::span<const Sequence> sequences, std::span<const Edge> skeleton,
                                const DanceabilityThresholds& thresholds) {
    DanceabilityReport r;
    r.thresholds = thresholds;
    for (const auto& seq : sequences) {
        SequenceFlags f;
        f.stats = motion_stats(seq, skeleton);
        f.bone_length_stable = f.stats.bone_rel_std < thresholds.bone_rel_std;
        f.velocity_continuous = f.stats.max_step < thresholds.max_step;
        f.within_box = seq.length() == 0 ||
                       (f.stats.min_coordinate >= -thresholds.margin && f.stats.max_coordinate <= 1.0 + thresholds.margin);
        r.passed += f.passed() ? 1 : 0;
        r.sequences.push_back(f);
    }
    r.pass_rate = sequences.empty() ? 0.0 : static_cast<double>(r.passed) / static_cast<double>(sequences.size());
    return r;
}

DanceabilityThresholds calibrate_danceability(std::span<const Sequence> reference, std::span<const Edge> skeleton,
                                              const CalibrationOptions& o) {
    if (reference.empty()) throw PreconditionError("calibrate_danceability: no reference windows");
    std::vector<double> bones, steps;
    for (const auto& seq : reference) {
        const MotionStats s = motion_stats(seq, skeleton);
        bones.push_back(s.bone_rel_std);
        steps.push_back(s.max_step);
    }
    DanceabilityThresholds t;
    t.bone_rel_std = std::max(o.slack * quantile(bones, o.quantile), o.bone_floor);
    t.max_step = std::max(o.slack * quantile(steps, o.quantile), o.step_floor);
    t.margin = o.margin;
    // Thresholds are strict upper bounds; keep them positive.
    t.bone_rel_std = std::max(t.bone_rel_std, std::numeric_limits<double>::min());
    t.max_step = std::max(t.max_step, std::numeric_limits<double>::min());
    return t;
}

double ConfusionMatrix::accuracy() const {
    const double n = total();
    return n > 0.0 ? counts.trace() / n : 0.0;
}

Eigen::MatrixXd ConfusionMatrix::normalized() const {
    Eigen::MatrixXd m = counts;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double s = m.row(i).sum();
        if (s > 0.0) m.row(i) /= s;
    }
    return m;
}

nlohmann::json ConfusionMatrix::to_json() const {
    auto rows = [](const Eigen::MatrixXd& m) {
        nlohmann::json out = nlohmann::json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
            out.push_back(std::move(row));
        }
        return out;
    };
    return {{"counts", rows(counts)}, {"normalized", rows(normalized())}, {"accuracy", accuracy()}};
}

std::string ConfusionMatrix::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "true";
    for (Eigen::Index j = 0; j < counts.cols(); ++j) out << ",pred" << j;
    out << '\n';
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
        out << i;
        for (Eigen::Index j = 0; j < counts.cols(); ++j) out << ',' << counts(i, j);
        out << '\n';
    }
    return out.str();
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int classes) {
    if (truth.size() != predicted.size()) throw PreconditionError("confusion_matrix: length mismatch");
    if (classes < 1) throw PreconditionError("confusion_matrix: need at least one class");
    ConfusionMatrix m{Eigen::MatrixXd::Zero(classes, classes)};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= classes || predicted[i] < 0 || predicted[i] >= classes)
            throw PreconditionError("confusion_matrix: label out of range");
        m.counts(truth[i], predicted[i]) += 1.0;
    }
    return m;
}

ConfusionMatrix effort_recovery(const std::vector<std::vector<Sequence>>& generated,
                                const std::function<int(const Sequence&)>& oracle) {
    std::vector<int> truth, recovered;
    for (std::size_t c = 0; c < generated.size(); ++c)
        for (const auto& seq : generated[c]) {
            truth.push_back(static_cast<int>(c));
            recovered.push_back(oracle(seq));
        }
    return confusion_matrix(truth, recovered, static_cast<int>(generated.size()));
}

}  // namespace effortvae
