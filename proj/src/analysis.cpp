#include "pkd/analysis.hpp"

#include "pkd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pkd {

DominantChannelReport dominant_channels(const FeatureMap& map, const std::string& level_name) {
    const Shape4& s = map.shape();
    DominantChannelReport report;
    report.level_name = level_name;
    report.counts.assign(s.channels, 0);
    for (std::size_t n = 0; n < s.batch; ++n)
        for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x) {
                std::size_t best = 0;
                double best_v = map.at(n, 0, y, x);
                for (std::size_t c = 1; c < s.channels; ++c) {
                    const double v = map.at(n, c, y, x);
                    if (v > best_v) {
                        best_v = v;
                        best = c;
                    }
                }
                ++report.counts[best];
            }
    report.ranked.resize(s.channels);
    std::iota(report.ranked.begin(), report.ranked.end(), std::size_t{0});
    std::stable_sort(report.ranked.begin(), report.ranked.end(), [&](std::size_t a, std::size_t b) {
        return report.counts[a] > report.counts[b];
    });
    return report;
}

ActivationPattern activation_patterns(const FeaturePyramid& pyr, std::size_t batch_index) {
    if (pyr.empty()) throw ArgumentError("activation_patterns: empty pyramid");
    if (batch_index >= pyr.level(0).batch())
        throw IndexError("batch index " + std::to_string(batch_index) + " out of range for batch " +
                         std::to_string(pyr.level(0).batch()));

    std::vector<std::vector<double>> maxima(pyr.size());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < pyr.size(); ++l) {
        const FeatureMap& map = pyr.level(l);
        auto& mx = maxima[l];
        mx.resize(map.shape().plane());
        for (std::size_t y = 0; y < map.height(); ++y)
            for (std::size_t x = 0; x < map.width(); ++x) {
                double v = map.at(batch_index, 0, y, x);
                for (std::size_t c = 1; c < map.channels(); ++c) v = std::max(v, map.at(batch_index, c, y, x));
                mx[y * map.width() + x] = v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    }

    ActivationPattern out;
    out.min = lo;
    out.max = hi;
    const double range = hi - lo;
    for (std::size_t l = 0; l < pyr.size(); ++l) {
        ActivationPattern::Level level;
        level.name = pyr.name(l);
        level.height = pyr.level(l).height();
        level.width = pyr.level(l).width();
        level.pixels.resize(maxima[l].size(), 0);
        if (range > 0.0) {
            for (std::size_t i = 0; i < maxima[l].size(); ++i) {
                const double scaled = std::round((maxima[l][i] - lo) / range * 255.0);
                level.pixels[i] = static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
            }
        }
        out.levels.push_back(std::move(level));
    }
    return out;
}

double nearest_rank_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw ArgumentError("quantile of an empty sample");
    if (!(q > 0.0 && q <= 1.0)) throw ArgumentError("quantile must lie in (0, 1]");
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
    return values[rank - 1];
}

std::vector<MagnitudeProfile> stage_magnitude_profile(const FeaturePyramid& pyr) {
    if (pyr.empty()) throw ArgumentError("stage_magnitude_profile: empty pyramid");
    std::vector<MagnitudeProfile> out;
    for (const auto& level : pyr.levels()) {
        std::vector<double> mags(level.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < mags.size(); ++i) {
            mags[i] = std::abs(level.values()[i]);
            sum += mags[i];
        }
        MagnitudeProfile p;
        p.mean_abs = sum / static_cast<double>(mags.size());
        p.max = *std::max_element(mags.begin(), mags.end());
        p.p50 = nearest_rank_quantile(mags, 0.50);
        p.p99 = nearest_rank_quantile(std::move(mags), 0.99);
        out.push_back(p);
    }
    return out;
}

} // namespace pkd
