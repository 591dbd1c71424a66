#pragma once

// Feature-imitation losses on aligned pyramids:
//   pkd        1 - r per channel, r the Pearson correlation over the
//              effective mini-batch; magnitude invariant.
//   masked_mse weighted squared error against the teacher, optionally
//              through a 1x1 channel adapter on the student.
//   norm_kl    T^2 * KL(softmax(t_hat / T) || softmax(s_hat / T)) on
//              standardized channels.
// Channel losses are averaged per level, level losses averaged into total.
// Every gradient is w.r.t. the student features only.

#include "pkd/align.hpp"
#include "pkd/feature.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pkd {

enum class LossKind { pkd, masked_mse, norm_kl };

std::string to_string(LossKind kind);
// Accepts "pkd", "mse"/"masked_mse", "norm-kl"/"norm_kl".
LossKind parse_loss_kind(const std::string& name);

inline constexpr double kAlphaTwoStageTeacher = 6.0;
inline constexpr double kAlphaOneStageTeacher = 10.0;

struct LossConfig {
    LossKind kind = LossKind::pkd;
    double alpha = kAlphaOneStageTeacher;
    double temperature = 1.0; // norm_kl only
    double epsilon = kDefaultEpsilon;
    // Per-level non-negative weights shaped (1, C, h, w) or (1, 1, h, w).
    std::optional<std::vector<FeatureMap>> mask;
    bool use_adapter = false;

    void validate() const;
};

struct LossResult {
    double total = 0.0;
    std::vector<double> per_level;
    std::vector<std::vector<double>> per_channel;
    FeaturePyramid grad; // d total / d student, student-shaped
    // masked_mse with adapters: parameter gradients per level.
    std::vector<AdapterGradients> adapter_grads;
};

// Pearson correlation; epsilon^2 is added to the product of the centered norms, so
// a constant channel gives r = 0 and r(s, s) = 1 to within ~epsilon^2.
// Returns 0 when either sample is constant.
double pcc(const ChannelSample& s, const ChannelSample& t, double epsilon = kDefaultEpsilon);

struct ChannelLoss {
    double loss = 0.0;
    std::vector<double> grad; // w.r.t. the student sample values
};

// 1 - r and its gradient (r * s_hat - t_hat) / ((m - 1) * (std_s + eps)).
ChannelLoss pkd_channel_loss(const ChannelSample& s, const ChannelSample& t,
                             double epsilon = kDefaultEpsilon);

// T^2 KL(p || q) on standardized samples, gradient chained through the
// student standardization (mean and std are functions of s).
ChannelLoss norm_kl_channel_loss(const ChannelSample& s, const ChannelSample& t, double temperature,
                                 double epsilon = kDefaultEpsilon);

// dL/d s_hat = T (q - p) for already standardized inputs.
std::vector<double> norm_kl_grad_normalized(std::span<const double> s_hat,
                                            std::span<const double> t_hat, double temperature);

LossResult pkd_pyramid_loss(const FeaturePyramid& student, const FeaturePyramid& teacher,
                            const LossConfig& cfg);

// adapters: one per level, required when cfg.use_adapter.
LossResult masked_mse_loss(const FeaturePyramid& student, const FeaturePyramid& teacher,
                           const LossConfig& cfg, std::span<const ChannelAdapter> adapters = {});

LossResult norm_kl_loss(const FeaturePyramid& student, const FeaturePyramid& teacher,
                        const LossConfig& cfg);

// Dispatch on cfg.kind.
LossResult compute_loss(const FeaturePyramid& student, const FeaturePyramid& teacher,
                        const LossConfig& cfg, std::span<const ChannelAdapter> adapters = {});

// gt_loss + alpha * fpn.total
double total_loss(double gt_loss, const LossResult& fpn, double alpha);

} // namespace pkd
