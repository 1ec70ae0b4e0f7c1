// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale synthetic motion with a known class per frame. Each class drives a
// small articulated skeleton at its own oscillation frequency, so the label of
// a window can be read back from the spectrum of its motion.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "effortvae/label_store.hpp"
#include "effortvae/motion_data.hpp"
#include "effortvae/rng.hpp"

namespace effortvae {

struct SynthOptions {
    std::size_t clips = 6;
    std::size_t frames_per_clip = 2000;
    std::size_t joints = 5;
    int classes = 3;
    std::uint64_t seed = 0;
    double fps = 35.0;
    /// Window length used for the ground-truth label table.
    std::size_t window = 20;
    std::size_t stride = 1;
    /// Class-segment lengths, uniform in [min, max] frames.
    std::size_t min_segment = 400;
    std::size_t max_segment = 900;
    /// Oscillation frequency of the slowest and fastest class, cycles per frame.
    double min_frequency = 0.06;
    double max_frequency = 0.24;
    /// Gaussian jitter added to every coordinate.
    double jitter = 0.002;
};

struct SynthDataset {
    std::vector<MotionClip> clips;
    /// Class of every window (the class at its centre frame), source manual.
    LabelTable truth;
    /// Per clip, the class of every frame.
    std::vector<std::vector<int>> frame_classes;
    std::vector<double> class_frequencies;
};

/// Geometrically spaced class frequencies from min to max (strictly increasing).
std::vector<double> class_frequencies(int classes, double min_frequency, double max_frequency);

/// Throws PreconditionError when classes < 2, joints < 1 or the frequency range is invalid.
SynthDataset synth_dataset(const SynthOptions& options);

/// Sparse manual annotation drawn from a ground-truth table: pairs of same-class
/// windows `gap` frames apart (gap in [window/2, window]), until about
/// `fraction` of all windows are labeled. Mimics an annotator labeling a few
/// neighbouring windows at a time.
LabelTable sample_manual_labels(const LabelTable& truth, const WindowIndex& windows, double fraction,
                                RngStream& rng, const std::string& created_at = {});

// ---- spectral oracle ----------------------------------------------------------

/// Frequency (cycles per frame) whose sinusoid, fitted per coordinate by least
/// squares with a constant term, explains the most variance summed over all
/// joints and axes. Candidates cover [lo, hi] in `steps` log-spaced points.
double dominant_frequency(const Sequence& sequence, double lo = 0.02, double hi = 0.45, int steps = 400);

/// Class whose frequency is nearest to the dominant one on a log scale.
int classify_by_frequency(const Sequence& sequence, std::span<const double> class_frequencies);

}  // namespace effortvae
