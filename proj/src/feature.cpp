#include "pkd/feature.hpp"

#include "pkd/errors.hpp"

#include <algorithm>
#include <cmath>

namespace pkd {

std::string to_string(const Shape4& s) {
    return std::to_string(s.batch) + "x" + std::to_string(s.channels) + "x" +
           std::to_string(s.height) + "x" + std::to_string(s.width);
}

FeatureMap::FeatureMap(Shape4 shape) : FeatureMap(shape, std::vector<double>(shape.count(), 0.0)) {}

FeatureMap::FeatureMap(Shape4 shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
    if (shape_.batch == 0 || shape_.channels == 0 || shape_.height == 0 || shape_.width == 0)
        throw ArgumentError("feature map dimensions must be >= 1, got " + to_string(shape_));
    if (values_.size() != shape_.count())
        throw ArgumentError("feature map " + to_string(shape_) + " expects " +
                            std::to_string(shape_.count()) + " values, got " +
                            std::to_string(values_.size()));
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i]))
            throw ArgumentError("non-finite feature value at flat index " + std::to_string(i));
    }
}

FeaturePyramid::FeaturePyramid(std::vector<FeatureMap> levels, std::vector<std::string> names)
    : levels_(std::move(levels)), names_(std::move(names)) {
    if (names_.empty()) {
        for (std::size_t i = 0; i < levels_.size(); ++i) names_.push_back("P" + std::to_string(i));
    }
    if (names_.size() != levels_.size())
        throw ArgumentError("pyramid has " + std::to_string(levels_.size()) + " levels but " +
                            std::to_string(names_.size()) + " names");
    for (std::size_t i = 1; i < levels_.size(); ++i) {
        const auto& prev = levels_[i - 1].shape();
        const auto& cur = levels_[i].shape();
        if (cur.batch != prev.batch)
            throw ArgumentError("pyramid level " + std::to_string(i) + " has batch " +
                                std::to_string(cur.batch) + ", expected " + std::to_string(prev.batch));
        if (cur.height > prev.height || cur.width > prev.width)
            throw ArgumentError("pyramid level " + std::to_string(i) + " (" + to_string(cur) +
                                ") is larger than level " + std::to_string(i - 1));
    }
}

FeaturePyramid FeaturePyramid::zeros_like() const {
    std::vector<FeatureMap> z;
    z.reserve(levels_.size());
    for (const auto& l : levels_) z.emplace_back(l.shape());
    return FeaturePyramid(std::move(z), names_);
}

ChannelSample make_sample(std::vector<double> values) {
    const std::size_t m = values.size();
    if (m < 2)
        throw ArgumentError("channel sample needs m >= 2 values, got " + std::to_string(m));
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(m);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    ChannelSample s;
    s.values = std::move(values);
    s.mean = mean;
    s.std = std::sqrt(ss / static_cast<double>(m - 1));
    return s;
}

ChannelSample channel_sample(const FeatureMap& map, std::size_t channel) {
    if (channel >= map.channels())
        throw IndexError("channel " + std::to_string(channel) + " out of range for " +
                         std::to_string(map.channels()) + " channels");
    const std::size_t plane = map.shape().plane();
    std::vector<double> values;
    values.reserve(map.shape().per_channel());
    const auto data = map.values();
    for (std::size_t n = 0; n < map.batch(); ++n) {
        const auto first = data.begin() + static_cast<std::ptrdiff_t>(map.index(n, channel, 0, 0));
        values.insert(values.end(), first, first + static_cast<std::ptrdiff_t>(plane));
    }
    return make_sample(std::move(values));
}

void scatter_channel(FeatureMap& map, std::size_t channel, std::span<const double> values) {
    if (channel >= map.channels())
        throw IndexError("channel " + std::to_string(channel) + " out of range");
    const std::size_t plane = map.shape().plane();
    if (values.size() != map.shape().per_channel())
        throw ArgumentError("scatter_channel: expected " + std::to_string(map.shape().per_channel()) +
                            " values, got " + std::to_string(values.size()));
    auto data = map.values();
    for (std::size_t n = 0; n < map.batch(); ++n)
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(n * plane), plane,
                    data.begin() + static_cast<std::ptrdiff_t>(map.index(n, channel, 0, 0)));
}

ChannelSample normalize(const ChannelSample& sample, double epsilon) {
    if (sample.size() < 2) throw ArgumentError("normalize needs m >= 2");
    if (!(epsilon > 0.0)) throw ArgumentError("normalize epsilon must be > 0");
    const double denom = sample.std + epsilon;
    std::vector<double> out(sample.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (sample.values[i] - sample.mean) / denom;
    return make_sample(std::move(out));
}

std::vector<LevelSummary> pyramid_summary(const FeaturePyramid& pyr) {
    if (pyr.empty()) throw ArgumentError("pyramid_summary: empty pyramid");
    std::vector<LevelSummary> out;
    out.reserve(pyr.size());
    for (const auto& level : pyr.levels()) {
        const auto v = level.values();
        const double n = static_cast<double>(v.size());
        LevelSummary s;
        s.min = *std::min_element(v.begin(), v.end());
        s.max = *std::max_element(v.begin(), v.end());
        double sum = 0.0, abs_sum = 0.0;
        for (double x : v) {
            sum += x;
            abs_sum += std::abs(x);
        }
        s.mean = sum / n;
        s.abs_mean = abs_sum / n;
        if (v.size() > 1) {
            double ss = 0.0;
            for (double x : v) ss += (x - s.mean) * (x - s.mean);
            s.std = std::sqrt(ss / (n - 1.0));
        }
        out.push_back(s);
    }
    return out;
}

} // namespace pkd
