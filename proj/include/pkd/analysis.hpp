#pragma once

// Diagnostics for feature pathologies: which channels win the per-pixel
// argmax, how magnitudes differ across stages, and 0-255 activation maps.

#include "pkd/feature.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pkd {

struct DominantChannelReport {
    std::string level_name;
    // counts[c] = number of (batch, y, x) sites whose argmax channel is c.
    std::vector<std::uint64_t> counts;
    // Channel indices by descending count, ties by ascending index.
    std::vector<std::size_t> ranked;
};

// Argmax ties resolve to the lowest channel index.
DominantChannelReport dominant_channels(const FeatureMap& map, const std::string& level_name = {});

struct ActivationPattern {
    struct Level {
        std::string name;
        std::size_t height = 0;
        std::size_t width = 0;
        std::vector<std::uint8_t> pixels; // row-major
    };
    std::vector<Level> levels;
    // Joint bounds of the per-pixel channel maxima over all levels.
    double min = 0.0;
    double max = 0.0;
};

// Channel-wise maxima of one batch element, jointly scaled to 0-255 with
// round-half-away-from-zero. A degenerate range renders as all zeros.
ActivationPattern activation_patterns(const FeaturePyramid& pyr, std::size_t batch_index);

struct MagnitudeProfile {
    double mean_abs = 0.0;
    double p50 = 0.0;
    double p99 = 0.0;
    double max = 0.0;
};

// Nearest-rank quantile of |value|: sorted[ceil(q * n) - 1].
double nearest_rank_quantile(std::vector<double> values, double q);

std::vector<MagnitudeProfile> stage_magnitude_profile(const FeaturePyramid& pyr);

} // namespace pkd
