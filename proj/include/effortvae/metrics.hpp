// SPDX-License-Identifier: Apache-2.0
//
// Reconstruction error (AJD), mechanical danceability proxies, and confusion
// matrices for classifier and generation-recovery reports.
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "effortvae/motion_data.hpp"

namespace effortvae {

/// Average joint distance: mean over sequences, frames and joints of the 3D
/// Euclidean distance between matching joints. Throws PreconditionError on
/// shape mismatch.
double ajd(std::span<const Sequence> originals, std::span<const Sequence> reconstructions);
double ajd(const Sequence& original, const Sequence& reconstruction);

struct DanceabilityThresholds {
    /// Max relative standard deviation of any bone length across frames.
    double bone_rel_std = 0.05;
    /// Max per-frame displacement of any joint.
    double max_step = 0.1;
    /// Coordinates must lie in [-margin, 1 + margin].
    double margin = 0.25;
};

void to_json(nlohmann::json& j, const DanceabilityThresholds& t);
void from_json(const nlohmann::json& j, DanceabilityThresholds& t);

/// Raw statistics behind the three proxies.
struct MotionStats {
    double bone_rel_std = 0.0;  // worst edge
    double max_step = 0.0;
    double min_coordinate = 0.0;
    double max_coordinate = 0.0;
};

MotionStats motion_stats(const Sequence& sequence, std::span<const Edge> skeleton);

struct SequenceFlags {
    bool bone_length_stable = true;
    bool velocity_continuous = true;
    bool within_box = true;
    MotionStats stats;

    bool passed() const noexcept { return bone_length_stable && velocity_continuous && within_box; }
};

struct DanceabilityReport {
    std::vector<SequenceFlags> sequences;
    std::size_t passed = 0;
    double pass_rate = 0.0;  // 0 for an empty input
    DanceabilityThresholds thresholds;
};

void to_json(nlohmann::json& j, const DanceabilityReport& r);

/// Throws PreconditionError if an edge references a missing joint.
DanceabilityReport danceability(std::span<const Sequence> sequences, std::span<const Edge> skeleton,
                                const DanceabilityThresholds& thresholds = {});

struct CalibrationOptions {
    /// Each threshold is slack * quantile of the reference statistic ...
    double quantile = 0.995;
    double slack = 1.5;
    /// ... but never below these floors.
    double bone_floor = 0.05;
    double step_floor = 0.0;
    double margin = 0.25;
};

/// Thresholds from reference (training) windows.
DanceabilityThresholds calibrate_danceability(std::span<const Sequence> reference, std::span<const Edge> skeleton,
                                              const CalibrationOptions& options = {});

/// k x k counts; rows are true / intended labels, columns predicted / recovered.
struct ConfusionMatrix {
    Eigen::MatrixXd counts;

    int classes() const noexcept { return static_cast<int>(counts.rows()); }
    double total() const { return counts.sum(); }
    /// trace / total (0 when empty).
    double accuracy() const;
    /// Rows scaled to sum to 1; empty rows stay zero.
    Eigen::MatrixXd normalized() const;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int classes);

/// Rows = intended class (index into `generated`), columns = the oracle's answer.
ConfusionMatrix effort_recovery(const std::vector<std::vector<Sequence>>& generated,
                                const std::function<int(const Sequence&)>& oracle);

}  // namespace effortvae
