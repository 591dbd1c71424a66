#pragma once

// Desk-scale multi-scale convolutional network with hand-written backward.
//
// input -> [conv3x3 s2 p1 + ReLU] x S -> the last K stage outputs each go
// through a 1x1 lateral projection to a common width, giving K pyramid
// levels (finest first). A single 1x1 head, shared by all levels, maps each
// level to one output channel for the dense regression loss.

#include "pkd/feature.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pkd {

struct ArchSpec {
    std::size_t input_channels = 3;
    std::vector<std::size_t> stage_channels{8, 16, 16};
    std::size_t levels = 0; // 0 means one level per stage
    std::size_t lateral_channels = 8;

    std::size_t level_count() const { return levels == 0 ? stage_channels.size() : levels; }
    void validate() const;
};

struct Parameter {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t fan_in = 1;
    std::vector<double> value;
    std::vector<double> velocity;
};

using Gradients = std::vector<std::vector<double>>;

class ToyNet {
public:
    // He-normal weights (std sqrt(2 / fan_in)), zero biases. Same seed and
    // arch give bitwise-identical parameters.
    static ToyNet init(std::uint64_t seed, const ArchSpec& arch);

    const ArchSpec& arch() const { return arch_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    // Mutable parameter values; invalidates outstanding forward caches.
    std::vector<double>& mutable_values(std::size_t param);
    std::uint64_t version() const { return version_; }
    std::uint64_t id() const { return id_; }

    std::size_t stage_weight(std::size_t s) const { return 2 * s; }
    std::size_t stage_bias(std::size_t s) const { return 2 * s + 1; }
    std::size_t lateral_weight(std::size_t k) const { return 2 * arch_.stage_channels.size() + 2 * k; }
    std::size_t lateral_bias(std::size_t k) const { return lateral_weight(k) + 1; }
    std::size_t head_weight() const { return 2 * (arch_.stage_channels.size() + arch_.level_count()); }
    std::size_t head_bias() const { return head_weight() + 1; }

    // Spatial size of each stage output for an input of the given size.
    static std::size_t stage_extent(std::size_t input);

    Gradients zero_gradients() const;
    std::size_t parameter_count() const;

private:
    friend void sgd_step(ToyNet&, const Gradients&, double, double, double);

    ArchSpec arch_;
    std::vector<Parameter> params_;
    std::uint64_t version_ = 0;
    std::uint64_t id_ = 0;
};

struct ForwardCache {
    std::uint64_t net_id = 0;
    std::uint64_t net_version = 0;
    FeatureMap input;
    std::vector<FeatureMap> stage_pre;  // before ReLU
    std::vector<FeatureMap> stage_post; // after ReLU
    std::vector<FeatureMap> levels;
};

struct ForwardResult {
    FeaturePyramid pyramid;
    FeaturePyramid head; // one channel per level
    ForwardCache cache;
};

ForwardResult forward(const ToyNet& net, const FeatureMap& input);

// Gradients of a loss whose gradient w.r.t. the pyramid and head outputs is
// given. Either may be null (no contribution). Throws StateError when the
// cache does not come from the current parameters of net.
Gradients backward(const ToyNet& net, const ForwardCache& cache, const FeaturePyramid* pyramid_grad,
                   const FeaturePyramid* head_grad);

// v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
void sgd_update(std::span<double> value, std::span<const double> grad, std::span<double> velocity,
                double lr, double momentum, double weight_decay);

void sgd_step(ToyNet& net, const Gradients& grads, double lr, double momentum = 0.9,
              double weight_decay = 1e-4);

struct SyntheticBatch {
    FeatureMap inputs;
    FeaturePyramid targets; // one channel per level, matching the head outputs
};

// Gaussian noise plus a sum of random low-frequency 2-D cosines per channel,
// deterministic in (seed, index).
FeatureMap synthetic_inputs(std::uint64_t seed, std::uint64_t index, const Shape4& shape);

// Per-level mean squared error against the targets, averaged over levels.
// Writes d loss / d head into grad when non-null.
double dense_regression_loss(const FeaturePyramid& head, const FeaturePyramid& targets,
                             FeaturePyramid* grad);

} // namespace pkd
