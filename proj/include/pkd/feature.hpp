#pragma once

// Feature maps, pyramids and per-channel statistics over the effective
// mini-batch (all b*h*w values of one channel).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pkd {

inline constexpr double kDefaultEpsilon = 1e-8;

struct Shape4 {
    std::size_t batch = 1;
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;

    std::size_t count() const { return batch * channels * height * width; }
    std::size_t plane() const { return height * width; }
    // Effective mini-batch size of one channel.
    std::size_t per_channel() const { return batch * height * width; }

    bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

// Dense b x C x h x w map, row-major with batch outermost and width innermost.
// Values are finite at construction; mutable access is provided for
// gradient buffers and is the caller's responsibility to keep finite.
class FeatureMap {
public:
    FeatureMap() = default;
    // Zero-filled map.
    explicit FeatureMap(Shape4 shape);
    FeatureMap(Shape4 shape, std::vector<double> values);

    const Shape4& shape() const { return shape_; }
    std::size_t batch() const { return shape_.batch; }
    std::size_t channels() const { return shape_.channels; }
    std::size_t height() const { return shape_.height; }
    std::size_t width() const { return shape_.width; }
    std::size_t size() const { return values_.size(); }

    std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return ((n * shape_.channels + c) * shape_.height + y) * shape_.width + x;
    }
    double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return values_[index(n, c, y, x)];
    }
    double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return values_[index(n, c, y, x)];
    }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    bool operator==(const FeatureMap&) const = default;

private:
    Shape4 shape_{};
    std::vector<double> values_;
};

// Ordered feature levels, finest first. All levels share the batch size and
// spatial size is non-increasing with level index.
class FeaturePyramid {
public:
    FeaturePyramid() = default;
    // Names default to "P0", "P1", ...
    explicit FeaturePyramid(std::vector<FeatureMap> levels, std::vector<std::string> names = {});

    std::size_t size() const { return levels_.size(); }
    bool empty() const { return levels_.empty(); }
    const FeatureMap& level(std::size_t i) const { return levels_.at(i); }
    FeatureMap& level(std::size_t i) { return levels_.at(i); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    const std::vector<FeatureMap>& levels() const { return levels_; }
    const std::vector<std::string>& names() const { return names_; }

    // Same level count and shapes, zero values.
    FeaturePyramid zeros_like() const;

    bool operator==(const FeaturePyramid&) const = default;

private:
    std::vector<FeatureMap> levels_;
    std::vector<std::string> names_;
};

struct ChannelSample {
    std::vector<double> values;
    double mean = 0.0;
    double std = 0.0; // Bessel-corrected

    std::size_t size() const { return values.size(); }
};

// Mean and Bessel-corrected std of values (m >= 2), two-pass.
ChannelSample make_sample(std::vector<double> values);

ChannelSample channel_sample(const FeatureMap& map, std::size_t channel);

// Writes sample values back into one channel of map (inverse of channel_sample).
void scatter_channel(FeatureMap& map, std::size_t channel, std::span<const double> values);

// (x - mean) / (std + epsilon); constant samples map to zeros.
ChannelSample normalize(const ChannelSample& sample, double epsilon = kDefaultEpsilon);

struct LevelSummary {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    double std = 0.0; // Bessel-corrected, 0 for a single value
    double abs_mean = 0.0;
};

std::vector<LevelSummary> pyramid_summary(const FeaturePyramid& pyr);

} // namespace pkd
