// SPDX-License-Identifier: Apache-2.0
// Small fixtures shared by the unit tests.
#pragma once

#include <filesystem>
#include <string>

#include "effortvae/motion_data.hpp"
#include "effortvae/rng.hpp"

namespace effortvae::testing {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("effortvae_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Clip with coordinates uniform in [lo, hi].
inline MotionClip random_clip(const std::string& id, std::size_t frames, std::size_t joints, RngStream& rng,
                              double lo = 0.0, double hi = 1.0) {
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

inline Sequence random_sequence(std::size_t T, std::size_t J, RngStream& rng, double lo = 0.0, double hi = 1.0) {
    Sequence s;
    s.clip_id = "rand";
    s.poses.resize(T);
    for (auto& p : s.poses) {
        p.joints.resize(J);
        for (auto& j : p.joints)
            for (auto& v : j) v = rng.uniform(lo, hi);
    }
    return s;
}

/// Clip of `frames` frames and `joints` joints, all at the origin. Only useful
/// where coordinates do not matter (window bookkeeping).
inline MotionClip empty_clip(const std::string& id, std::size_t frames, std::size_t joints = 1) {
    MotionClip c;
    c.id = id;
    c.frames.assign(frames, Pose{std::vector<Vec3>(joints, Vec3{0.0, 0.0, 0.0})});
    return c;
}

}  // namespace effortvae::testing
