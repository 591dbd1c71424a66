#include "pkd/losses.hpp"

#include "pkd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pkd {

std::string to_string(LossKind kind) {
    switch (kind) {
    case LossKind::pkd: return "pkd";
    case LossKind::masked_mse: return "mse";
    case LossKind::norm_kl: return "norm-kl";
    }
    return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
    if (name == "pkd") return LossKind::pkd;
    if (name == "mse" || name == "masked_mse" || name == "masked-mse") return LossKind::masked_mse;
    if (name == "norm-kl" || name == "norm_kl") return LossKind::norm_kl;
    throw ArgumentError("unknown loss kind '" + name + "' (expected pkd, mse or norm-kl)");
}

void LossConfig::validate() const {
    // alpha == 0 is accepted so that distillation can be switched off.
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ArgumentError("alpha must be >= 0");
    if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be > 0");
    if (kind == LossKind::norm_kl && !(temperature > 0.0))
        throw ArgumentError("temperature must be > 0 for norm_kl");
}

namespace {

void check_aligned(const FeaturePyramid& student, const FeaturePyramid& teacher,
                   bool channels_must_match) {
    if (student.empty()) throw ArgumentError("empty student pyramid");
    if (student.size() != teacher.size())
        throw AlignmentError(std::min(student.size(), teacher.size()),
                             "student has " + std::to_string(student.size()) +
                                 " levels, teacher has " + std::to_string(teacher.size()));
    for (std::size_t l = 0; l < student.size(); ++l) {
        const Shape4& s = student.level(l).shape();
        const Shape4& t = teacher.level(l).shape();
        if (s.batch != t.batch || s.height != t.height || s.width != t.width ||
            (channels_must_match && s.channels != t.channels))
            throw AlignmentError(l, "student " + to_string(s) + " vs teacher " + to_string(t) +
                                        "; align the pyramids first");
    }
}

LossResult make_result(const FeaturePyramid& student) {
    LossResult r;
    r.per_level.assign(student.size(), 0.0);
    r.per_channel.resize(student.size());
    r.grad = student.zeros_like();
    return r;
}

// Per-channel loss over aligned pyramids with mean/mean aggregation.
template <class ChannelFn>
LossResult per_channel_pyramid_loss(const FeaturePyramid& student, const FeaturePyramid& teacher,
                                    ChannelFn&& fn) {
    check_aligned(student, teacher, true);
    LossResult r = make_result(student);
    const double inv_levels = 1.0 / static_cast<double>(student.size());
    for (std::size_t l = 0; l < student.size(); ++l) {
        const FeatureMap& s = student.level(l);
        const FeatureMap& t = teacher.level(l);
        const std::size_t channels = s.channels();
        const double inv_channels = 1.0 / static_cast<double>(channels);
        r.per_channel[l].resize(channels);
        double level_sum = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            ChannelLoss cl = fn(channel_sample(s, c), channel_sample(t, c));
            r.per_channel[l][c] = cl.loss;
            level_sum += cl.loss;
            const double scale = inv_levels * inv_channels;
            for (double& g : cl.grad) g *= scale;
            scatter_channel(r.grad.level(l), c, cl.grad);
        }
        r.per_level[l] = level_sum * inv_channels;
    }
    double total = 0.0;
    for (double v : r.per_level) total += v;
    r.total = total * inv_levels;
    return r;
}

void check_pair(const ChannelSample& s, const ChannelSample& t) {
    if (s.size() != t.size())
        throw ArgumentError("channel samples differ in length: " + std::to_string(s.size()) +
                            " vs " + std::to_string(t.size()));
    if (s.size() < 2) throw ArgumentError("channel samples need m >= 2");
}

// Log-softmax of x / temperature with max subtraction.
std::vector<double> log_softmax(std::span<const double> x, double temperature) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x) mx = std::max(mx, v / temperature);
    double sum = 0.0;
    for (double v : x) sum += std::exp(v / temperature - mx);
    const double log_z = mx + std::log(sum);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / temperature - log_z;
    return out;
}

} // namespace

double pcc(const ChannelSample& s, const ChannelSample& t, double epsilon) {
    check_pair(s, t);
    double num = 0.0, ss = 0.0, tt = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double a = s.values[i] - s.mean;
        const double b = t.values[i] - t.mean;
        num += a * b;
        ss += a * a;
        tt += b * b;
    }
    return num / (std::sqrt(ss) * std::sqrt(tt) + epsilon * epsilon);
}

ChannelLoss pkd_channel_loss(const ChannelSample& s, const ChannelSample& t, double epsilon) {
    check_pair(s, t);
    const double r = pcc(s, t, epsilon);
    const std::size_t m = s.size();
    const double s_den = s.std + epsilon;
    const double t_den = t.std + epsilon;
    const double scale = 1.0 / (static_cast<double>(m - 1) * s_den);
    ChannelLoss out;
    out.loss = 1.0 - r;
    out.grad.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double s_hat = (s.values[i] - s.mean) / s_den;
        const double t_hat = (t.values[i] - t.mean) / t_den;
        out.grad[i] = scale * (r * s_hat - t_hat);
    }
    return out;
}

std::vector<double> norm_kl_grad_normalized(std::span<const double> s_hat,
                                            std::span<const double> t_hat, double temperature) {
    if (s_hat.size() != t_hat.size()) throw ArgumentError("norm_kl inputs differ in length");
    if (!(temperature > 0.0)) throw ArgumentError("temperature must be > 0");
    const auto log_q = log_softmax(s_hat, temperature);
    const auto log_p = log_softmax(t_hat, temperature);
    std::vector<double> g(s_hat.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = temperature * (std::exp(log_q[i]) - std::exp(log_p[i]));
    return g;
}

ChannelLoss norm_kl_channel_loss(const ChannelSample& s, const ChannelSample& t, double temperature,
                                 double epsilon) {
    check_pair(s, t);
    if (!(temperature > 0.0)) throw ArgumentError("temperature must be > 0");
    const std::size_t m = s.size();
    const ChannelSample s_hat = normalize(s, epsilon);
    const ChannelSample t_hat = normalize(t, epsilon);
    const auto log_q = log_softmax(s_hat.values, temperature);
    const auto log_p = log_softmax(t_hat.values, temperature);

    ChannelLoss out;
    double kl = 0.0;
    std::vector<double> g(m); // w.r.t. s_hat
    for (std::size_t i = 0; i < m; ++i) {
        const double p = std::exp(log_p[i]);
        const double q = std::exp(log_q[i]);
        if (p > 0.0) kl += p * (log_p[i] - log_q[i]);
        g[i] = temperature * (q - p);
    }
    out.loss = temperature * temperature * kl;

    // Chain through s_hat = (s - mean) / (std + eps).
    const double den = s.std + epsilon;
    double g_mean = 0.0, g_dot_a = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        g_mean += g[i];
        g_dot_a += g[i] * (s.values[i] - s.mean);
    }
    g_mean /= static_cast<double>(m);
    const double std_term =
        s.std > 0.0 ? g_dot_a / (static_cast<double>(m - 1) * s.std * den * den) : 0.0;
    out.grad.resize(m);
    for (std::size_t i = 0; i < m; ++i)
        out.grad[i] = (g[i] - g_mean) / den - (s.values[i] - s.mean) * std_term;
    return out;
}

LossResult pkd_pyramid_loss(const FeaturePyramid& student, const FeaturePyramid& teacher,
                            const LossConfig& cfg) {
    cfg.validate();
    return per_channel_pyramid_loss(student, teacher, [&](const ChannelSample& s, const ChannelSample& t) {
        return pkd_channel_loss(s, t, cfg.epsilon);
    });
}

LossResult norm_kl_loss(const FeaturePyramid& student, const FeaturePyramid& teacher,
                        const LossConfig& cfg) {
    cfg.validate();
    if (!(cfg.temperature > 0.0)) throw ArgumentError("temperature must be > 0 for norm_kl");
    return per_channel_pyramid_loss(student, teacher, [&](const ChannelSample& s, const ChannelSample& t) {
        return norm_kl_channel_loss(s, t, cfg.temperature, cfg.epsilon);
    });
}

LossResult masked_mse_loss(const FeaturePyramid& student, const FeaturePyramid& teacher,
                           const LossConfig& cfg, std::span<const ChannelAdapter> adapters) {
    cfg.validate();
    check_aligned(student, teacher, false);
    const std::size_t levels = student.size();
    if (cfg.use_adapter && adapters.size() != levels)
        throw ArgumentError("masked_mse with adapter needs " + std::to_string(levels) +
                            " adapters, got " + std::to_string(adapters.size()));
    if (cfg.mask && cfg.mask->size() != levels)
        throw ArgumentError("mask has " + std::to_string(cfg.mask->size()) + " levels, expected " +
                            std::to_string(levels));

    LossResult r = make_result(student);
    const double inv_levels = 1.0 / static_cast<double>(levels);
    for (std::size_t l = 0; l < levels; ++l) {
        const FeatureMap& t = teacher.level(l);
        FeatureMap adapted;
        if (cfg.use_adapter) {
            adapted = adapter_apply(adapters[l], student.level(l));
        } else if (student.level(l).channels() != t.channels()) {
            throw AlignmentError(l, "student has " + std::to_string(student.level(l).channels()) +
                                        " channels, teacher has " + std::to_string(t.channels()) +
                                        "; enable the adapter");
        }
        const FeatureMap& s = cfg.use_adapter ? adapted : student.level(l);
        if (s.channels() != t.channels())
            throw AlignmentError(l, "adapter output has " + std::to_string(s.channels()) +
                                        " channels, teacher has " + std::to_string(t.channels()));
        const Shape4& shape = t.shape();

        const FeatureMap* mask = nullptr;
        if (cfg.mask) {
            mask = &(*cfg.mask)[l];
            const Shape4& ms = mask->shape();
            if (ms.batch != 1 || (ms.channels != 1 && ms.channels != shape.channels) ||
                ms.height != shape.height || ms.width != shape.width)
                throw ArgumentError("mask level " + std::to_string(l) + " has shape " +
                                    to_string(ms) + ", expected 1x" + std::to_string(shape.channels) +
                                    "x" + std::to_string(shape.height) + "x" +
                                    std::to_string(shape.width) + " or broadcastable");
            for (double v : mask->values())
                if (v < 0.0) throw ArgumentError("mask level " + std::to_string(l) + " has negative weight");
        }
        auto weight_at = [&](std::size_t c, std::size_t y, std::size_t x) {
            if (!mask) return 1.0;
            return mask->at(0, mask->channels() == 1 ? 0 : c, y, x);
        };

        double norm = 0.0;
        for (std::size_t c = 0; c < shape.channels; ++c)
            for (std::size_t y = 0; y < shape.height; ++y)
                for (std::size_t x = 0; x < shape.width; ++x) norm += weight_at(c, y, x);
        norm *= static_cast<double>(shape.batch);
        if (!(norm > 0.0))
            throw DegenerateMaskError("mask level " + std::to_string(l) + " has zero total weight");

        FeatureMap grad_adapted(shape);
        std::vector<double> channel_sums(shape.channels, 0.0);
        for (std::size_t n = 0; n < shape.batch; ++n)
            for (std::size_t c = 0; c < shape.channels; ++c)
                for (std::size_t y = 0; y < shape.height; ++y)
                    for (std::size_t x = 0; x < shape.width; ++x) {
                        const double w = weight_at(c, y, x);
                        const double d = t.at(n, c, y, x) - s.at(n, c, y, x);
                        channel_sums[c] += w * d * d;
                        grad_adapted.at(n, c, y, x) = -2.0 * w * d * inv_levels / norm;
                    }
        double level = 0.0;
        r.per_channel[l].resize(shape.channels);
        for (std::size_t c = 0; c < shape.channels; ++c) {
            level += channel_sums[c];
            // Scaled so that the channel mean equals the level loss.
            r.per_channel[l][c] = static_cast<double>(shape.channels) * channel_sums[c] / norm;
        }
        r.per_level[l] = level / norm;

        if (cfg.use_adapter) {
            AdapterGradients ag = adapter_grad(adapters[l], student.level(l), grad_adapted);
            r.grad.level(l) = std::move(ag.input_grad);
            ag.input_grad = FeatureMap();
            r.adapter_grads.push_back(std::move(ag));
        } else {
            r.grad.level(l) = std::move(grad_adapted);
        }
    }
    double total = 0.0;
    for (double v : r.per_level) total += v;
    r.total = total * inv_levels;
    return r;
}

LossResult compute_loss(const FeaturePyramid& student, const FeaturePyramid& teacher,
                        const LossConfig& cfg, std::span<const ChannelAdapter> adapters) {
    switch (cfg.kind) {
    case LossKind::pkd: return pkd_pyramid_loss(student, teacher, cfg);
    case LossKind::masked_mse: return masked_mse_loss(student, teacher, cfg, adapters);
    case LossKind::norm_kl: return norm_kl_loss(student, teacher, cfg);
    }
    throw ArgumentError("unknown loss kind");
}

double total_loss(double gt_loss, const LossResult& fpn, double alpha) {
    if (!(alpha >= 0.0)) throw ArgumentError("alpha must be >= 0");
    return gt_loss + alpha * fpn.total;
}

} // namespace pkd
