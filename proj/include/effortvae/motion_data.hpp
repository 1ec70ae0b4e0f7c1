// SPDX-License-Identifier: Apache-2.0
//
// Keypoint motion data: clips of 3D joint clouds, normalization into the unit
// box, sliding-window extraction and file IO.
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace effortvae {

using Vec3 = std::array<double, 3>;
using Edge = std::pair<int, int>;

struct Pose {
    std::vector<Vec3> joints;

    std::size_t joint_count() const noexcept { return joints.size(); }
};

struct MotionClip {
    std::string id;
    double fps = 35.0;
    std::vector<Pose> frames;
    std::vector<Edge> skeleton;

    std::size_t frame_count() const noexcept { return frames.size(); }
    std::size_t joint_count() const noexcept { return frames.empty() ? 0 : frames.front().joint_count(); }

    /// Throws SchemaError if frames disagree on J, fps <= 0, coordinates are
    /// non-finite, or an edge references a missing joint.
    void validate() const;
};

/// T consecutive poses from one clip.
struct Sequence {
    std::string clip_id;
    std::size_t start_frame = 0;
    std::vector<Pose> poses;

    std::size_t length() const noexcept { return poses.size(); }
    std::size_t joint_count() const noexcept { return poses.empty() ? 0 : poses.front().joint_count(); }
    std::string window_id() const { return clip_id + ":" + std::to_string(start_frame); }

    /// Row-major (frame, joint, xyz) copy of the coordinates.
    std::vector<double> flatten() const;
    static Sequence from_flat(std::span<const double> values, std::size_t frames, std::size_t joints,
                              std::string clip_id = {}, std::size_t start_frame = 0);
};

enum class BarycenterMode { FixedXY, None };

const char* to_string(BarycenterMode mode) noexcept;
BarycenterMode barycenter_mode_from_string(const std::string& name);

/// Affine map into the unit box: out = scale * (p - b_t) + offset, where b_t is the
/// per-frame (x, y) joint barycenter under FixedXY and zero under None.
struct NormalizationSpec {
    double scale = 1.0;
    Vec3 offset{0.0, 0.0, 0.0};
    BarycenterMode mode = BarycenterMode::None;
    /// Per-clip, per-frame xy barycenters removed under FixedXY; needed to invert.
    std::map<std::string, std::vector<std::array<double, 2>>> removed_barycenters;
};

/// Target xy point for the barycenter under FixedXY.
inline constexpr double kBarycenterTarget = 0.5;

/// One scale/offset for the whole dataset so relative clip sizes are preserved.
std::pair<std::vector<MotionClip>, NormalizationSpec> normalize(std::span<const MotionClip> clips,
                                                                BarycenterMode mode = BarycenterMode::FixedXY);
std::pair<MotionClip, NormalizationSpec> normalize(const MotionClip& clip,
                                                   BarycenterMode mode = BarycenterMode::FixedXY);

/// Inverse of normalize. Clips whose barycenter track is unknown (e.g. generated
/// motion) are only un-scaled and un-shifted.
MotionClip denormalize(const MotionClip& clip, const NormalizationSpec& spec);

/// Number of windows of length `window` at `stride` in `frames` frames.
std::size_t window_count(std::size_t frames, std::size_t window, std::size_t stride);

/// Sliding windows, per clip, never spanning a clip boundary.
std::vector<Sequence> extract_windows(std::span<const MotionClip> clips, std::size_t window, std::size_t stride);

/// Valid window starts per clip for a fixed (window, stride).
class WindowIndex {
public:
    WindowIndex() = default;
    WindowIndex(std::span<const MotionClip> clips, std::size_t window, std::size_t stride);

    std::size_t window() const noexcept { return window_; }
    std::size_t stride() const noexcept { return stride_; }
    std::size_t total() const noexcept;

    /// Number of windows in the clip (0 for unknown clips).
    std::size_t count(const std::string& clip_id) const;
    bool contains(const std::string& clip_id, std::size_t start) const;
    std::vector<std::size_t> starts(const std::string& clip_id) const;
    const std::map<std::string, std::size_t>& clips() const noexcept { return counts_; }

    void add_clip(const std::string& clip_id, std::size_t frames);

private:
    std::size_t window_ = 0;
    std::size_t stride_ = 1;
    std::map<std::string, std::size_t> counts_;
};

// ---- file IO ------------------------------------------------------------------

enum class ClipFormat { Csv, Json, RawBinary };

ClipFormat clip_format_from_string(const std::string& name);
/// Guess from the extension (.csv, .json, .bin/.kpt); throws ConfigError otherwise.
ClipFormat clip_format_from_path(const std::filesystem::path& path);

/// Load clips from a file, or from every matching file in a directory (sorted by
/// name). `fps` is used where the format carries no rate (CSV).
std::vector<MotionClip> load_clips(const std::filesystem::path& path, ClipFormat format, double fps = 35.0);

void save_clips_json(const std::filesystem::path& path, std::span<const MotionClip> clips);
void save_clip_csv(const std::filesystem::path& path, const MotionClip& clip);
void save_clip_binary(const std::filesystem::path& path, const MotionClip& clip);

/// Magic bytes opening a raw binary clip file.
inline constexpr std::array<char, 4> kBinaryMagic{'K', 'P', 'T', '1'};

}  // namespace effortvae
