#pragma once

// Pairing of student/teacher pyramids whose levels differ in resolution or
// channel width: bilinear upsampling of the smaller member and an optional
// 1x1 channel adapter on the student side.

#include "pkd/feature.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace pkd {

// 1x1 convolution: out[n,o,y,x] = bias[o] + sum_i weight[o*in + i] * in[n,i,y,x].
FeatureMap pointwise_conv(std::span<const double> weight, std::span<const double> bias,
                          std::size_t out_channels, const FeatureMap& input);

// Backward of pointwise_conv. Adds parameter gradients into weight_grad and
// bias_grad, returns the gradient w.r.t. input.
FeatureMap pointwise_conv_backward(std::span<const double> weight, std::size_t out_channels,
                                   const FeatureMap& input, const FeatureMap& upstream,
                                   std::span<double> weight_grad, std::span<double> bias_grad);

struct ChannelAdapter {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::vector<double> weight; // out_channels x in_channels, row-major
    std::vector<double> bias;   // out_channels
    std::vector<double> weight_velocity;
    std::vector<double> bias_velocity;

    ChannelAdapter() = default;
    // Zero weights and bias.
    ChannelAdapter(std::size_t in, std::size_t out);

    static ChannelAdapter identity(std::size_t channels);
    // He-normal weights (std sqrt(2 / in)), zero bias.
    static ChannelAdapter random(std::size_t in, std::size_t out, std::uint64_t seed);
};

struct AdapterGradients {
    FeatureMap input_grad;
    std::vector<double> weight_grad;
    std::vector<double> bias_grad;
};

FeatureMap adapter_apply(const ChannelAdapter& adapter, const FeatureMap& map);
AdapterGradients adapter_grad(const ChannelAdapter& adapter, const FeatureMap& map,
                              const FeatureMap& upstream);

// Half-pixel-centre bilinear resize to a size at least as large as the source.
FeatureMap upsample_bilinear(const FeatureMap& map, std::size_t target_h, std::size_t target_w);
// Transpose of upsample_bilinear: maps a gradient at the target size back to source.
FeatureMap upsample_bilinear_backward(const Shape4& source, const FeatureMap& upstream);

enum class ChannelRule { require_equal, adapter };

struct AlignmentPolicy {
    // (student level, teacher level); unique per student level.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    ChannelRule channel_rule = ChannelRule::require_equal;

    static AlignmentPolicy identity(std::size_t levels);
};

// Per aligned level: what happened to the student map on the way in.
struct AlignmentStep {
    std::size_t student_level = 0;
    std::size_t teacher_level = 0;
    bool adapted = false;
    Shape4 pre_upsample{}; // student shape after adapter, before upsampling
};

struct AlignedPyramids {
    FeaturePyramid student;
    FeaturePyramid teacher;
    std::vector<AlignmentStep> steps;
};

// Throws AlignmentError naming the aligned level on an unsatisfiable pairing.
// adapters is indexed by aligned level and only read under ChannelRule::adapter.
AlignedPyramids align(const FeaturePyramid& student, const FeaturePyramid& teacher,
                      const AlignmentPolicy& policy, std::span<const ChannelAdapter> adapters = {});

struct AlignBackward {
    FeaturePyramid student_grad; // shaped like the original student pyramid
    std::vector<AdapterGradients> adapter_grads; // one per aligned level when adapted
};

// Routes a gradient on the aligned student pyramid back to the original
// student pyramid through upsampling and adapters.
AlignBackward align_backward(const AlignedPyramids& aligned, const FeaturePyramid& student,
                             const FeaturePyramid& aligned_grad,
                             std::span<const ChannelAdapter> adapters = {});

} // namespace pkd
