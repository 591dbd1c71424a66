#include "pkd/align.hpp"

#include "pkd/errors.hpp"
#include "pkd/random.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pkd {

FeatureMap pointwise_conv(std::span<const double> weight, std::span<const double> bias,
                          std::size_t out_channels, const FeatureMap& input) {
    const std::size_t cin = input.channels();
    if (weight.size() != out_channels * cin || bias.size() != out_channels)
        throw ArgumentError("pointwise conv expects " + std::to_string(cin) + " input channels");
    Shape4 os = input.shape();
    os.channels = out_channels;
    FeatureMap out(os);
    const std::size_t plane = os.plane();
    const auto in = input.values();
    auto dst = out.values();
    for (std::size_t n = 0; n < os.batch; ++n) {
        for (std::size_t o = 0; o < out_channels; ++o) {
            double* orow = dst.data() + out.index(n, o, 0, 0);
            std::fill_n(orow, plane, bias[o]);
            for (std::size_t i = 0; i < cin; ++i) {
                const double w = weight[o * cin + i];
                const double* irow = in.data() + input.index(n, i, 0, 0);
                for (std::size_t p = 0; p < plane; ++p) orow[p] += w * irow[p];
            }
        }
    }
    return out;
}

FeatureMap pointwise_conv_backward(std::span<const double> weight, std::size_t out_channels,
                                   const FeatureMap& input, const FeatureMap& upstream,
                                   std::span<double> weight_grad, std::span<double> bias_grad) {
    const std::size_t cin = input.channels();
    Shape4 os = input.shape();
    os.channels = out_channels;
    if (upstream.shape() != os)
        throw ArgumentError("pointwise conv upstream gradient has shape " +
                            to_string(upstream.shape()) + ", expected " + to_string(os));
    if (weight_grad.size() != weight.size() || bias_grad.size() != out_channels)
        throw ArgumentError("pointwise conv gradient buffers have the wrong size");
    FeatureMap in_grad(input.shape());
    const std::size_t plane = os.plane();
    const auto in = input.values();
    const auto up = upstream.values();
    auto ig = in_grad.values();
    for (std::size_t n = 0; n < os.batch; ++n) {
        for (std::size_t o = 0; o < out_channels; ++o) {
            const double* urow = up.data() + upstream.index(n, o, 0, 0);
            double bsum = 0.0;
            for (std::size_t p = 0; p < plane; ++p) bsum += urow[p];
            bias_grad[o] += bsum;
            for (std::size_t i = 0; i < cin; ++i) {
                const double* irow = in.data() + input.index(n, i, 0, 0);
                double* grow = ig.data() + in_grad.index(n, i, 0, 0);
                const double w = weight[o * cin + i];
                double wsum = 0.0;
                for (std::size_t p = 0; p < plane; ++p) {
                    wsum += urow[p] * irow[p];
                    grow[p] += w * urow[p];
                }
                weight_grad[o * cin + i] += wsum;
            }
        }
    }
    return in_grad;
}

ChannelAdapter::ChannelAdapter(std::size_t in, std::size_t out)
    : in_channels(in), out_channels(out), weight(in * out, 0.0), bias(out, 0.0),
      weight_velocity(in * out, 0.0), bias_velocity(out, 0.0) {
    if (in == 0 || out == 0) throw ArgumentError("adapter channel counts must be >= 1");
}

ChannelAdapter ChannelAdapter::identity(std::size_t channels) {
    ChannelAdapter a(channels, channels);
    for (std::size_t c = 0; c < channels; ++c) a.weight[c * channels + c] = 1.0;
    return a;
}

ChannelAdapter ChannelAdapter::random(std::size_t in, std::size_t out, std::uint64_t seed) {
    ChannelAdapter a(in, out);
    Rng rng(seed);
    rng.fill_normal(a.weight, 0.0, std::sqrt(2.0 / static_cast<double>(in)));
    return a;
}

FeatureMap adapter_apply(const ChannelAdapter& adapter, const FeatureMap& map) {
    if (map.channels() != adapter.in_channels)
        throw ArgumentError("adapter expects " + std::to_string(adapter.in_channels) +
                            " channels, map has " + std::to_string(map.channels()));
    return pointwise_conv(adapter.weight, adapter.bias, adapter.out_channels, map);
}

AdapterGradients adapter_grad(const ChannelAdapter& adapter, const FeatureMap& map,
                              const FeatureMap& upstream) {
    if (map.channels() != adapter.in_channels)
        throw ArgumentError("adapter expects " + std::to_string(adapter.in_channels) +
                            " channels, map has " + std::to_string(map.channels()));
    AdapterGradients g;
    g.weight_grad.assign(adapter.weight.size(), 0.0);
    g.bias_grad.assign(adapter.bias.size(), 0.0);
    g.input_grad = pointwise_conv_backward(adapter.weight, adapter.out_channels, map, upstream,
                                           g.weight_grad, g.bias_grad);
    return g;
}

namespace {

// Source taps and weights along one axis for half-pixel-centre sampling.
struct Tap {
    std::size_t lo = 0;
    std::size_t hi = 0;
    double frac = 0.0; // weight of hi
};

std::vector<Tap> bilinear_taps(std::size_t src, std::size_t dst) {
    std::vector<Tap> taps(dst);
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    for (std::size_t d = 0; d < dst; ++d) {
        double x = (static_cast<double>(d) + 0.5) * scale - 0.5;
        x = std::clamp(x, 0.0, static_cast<double>(src - 1));
        const auto lo = static_cast<std::size_t>(std::floor(x));
        taps[d].lo = lo;
        taps[d].hi = std::min(lo + 1, src - 1);
        taps[d].frac = x - static_cast<double>(lo);
    }
    return taps;
}

} // namespace

FeatureMap upsample_bilinear(const FeatureMap& map, std::size_t target_h, std::size_t target_w) {
    const Shape4& s = map.shape();
    if (target_h < s.height || target_w < s.width)
        throw ArgumentError("upsample_bilinear cannot downsample " + to_string(s) + " to " +
                            std::to_string(target_h) + "x" + std::to_string(target_w));
    if (target_h == s.height && target_w == s.width) return map;
    const auto ty = bilinear_taps(s.height, target_h);
    const auto tx = bilinear_taps(s.width, target_w);
    FeatureMap out(Shape4{s.batch, s.channels, target_h, target_w});
    for (std::size_t n = 0; n < s.batch; ++n)
        for (std::size_t c = 0; c < s.channels; ++c)
            for (std::size_t y = 0; y < target_h; ++y) {
                const Tap& a = ty[y];
                for (std::size_t x = 0; x < target_w; ++x) {
                    const Tap& b = tx[x];
                    const double top = (1.0 - b.frac) * map.at(n, c, a.lo, b.lo) + b.frac * map.at(n, c, a.lo, b.hi);
                    const double bot = (1.0 - b.frac) * map.at(n, c, a.hi, b.lo) + b.frac * map.at(n, c, a.hi, b.hi);
                    out.at(n, c, y, x) = (1.0 - a.frac) * top + a.frac * bot;
                }
            }
    return out;
}

FeatureMap upsample_bilinear_backward(const Shape4& source, const FeatureMap& upstream) {
    const Shape4& u = upstream.shape();
    if (u.batch != source.batch || u.channels != source.channels || u.height < source.height ||
        u.width < source.width)
        throw ArgumentError("upsample gradient " + to_string(u) + " does not match source " +
                            to_string(source));
    if (u == source) return upstream;
    const auto ty = bilinear_taps(source.height, u.height);
    const auto tx = bilinear_taps(source.width, u.width);
    FeatureMap g(source);
    for (std::size_t n = 0; n < u.batch; ++n)
        for (std::size_t c = 0; c < u.channels; ++c)
            for (std::size_t y = 0; y < u.height; ++y) {
                const Tap& a = ty[y];
                for (std::size_t x = 0; x < u.width; ++x) {
                    const Tap& b = tx[x];
                    const double v = upstream.at(n, c, y, x);
                    g.at(n, c, a.lo, b.lo) += (1.0 - a.frac) * (1.0 - b.frac) * v;
                    g.at(n, c, a.lo, b.hi) += (1.0 - a.frac) * b.frac * v;
                    g.at(n, c, a.hi, b.lo) += a.frac * (1.0 - b.frac) * v;
                    g.at(n, c, a.hi, b.hi) += a.frac * b.frac * v;
                }
            }
    return g;
}

AlignmentPolicy AlignmentPolicy::identity(std::size_t levels) {
    AlignmentPolicy p;
    for (std::size_t i = 0; i < levels; ++i) p.pairs.emplace_back(i, i);
    return p;
}

AlignedPyramids align(const FeaturePyramid& student, const FeaturePyramid& teacher,
                      const AlignmentPolicy& policy, std::span<const ChannelAdapter> adapters) {
    if (policy.pairs.empty()) throw ArgumentError("alignment policy has no level pairs");
    if (!student.empty() && !teacher.empty() &&
        student.level(0).batch() != teacher.level(0).batch())
        throw AlignmentError(0, "student batch " + std::to_string(student.level(0).batch()) +
                                    " differs from teacher batch " +
                                    std::to_string(teacher.level(0).batch()));
    const bool use_adapter = policy.channel_rule == ChannelRule::adapter;
    if (use_adapter && adapters.size() != policy.pairs.size())
        throw ArgumentError("adapter rule needs one adapter per pair (" +
                            std::to_string(policy.pairs.size()) + "), got " +
                            std::to_string(adapters.size()));

    std::vector<bool> seen(student.size(), false);
    std::vector<FeatureMap> s_out, t_out;
    std::vector<std::string> s_names, t_names;
    AlignedPyramids result;
    for (std::size_t k = 0; k < policy.pairs.size(); ++k) {
        const auto [si, ti] = policy.pairs[k];
        if (si >= student.size() || ti >= teacher.size())
            throw AlignmentError(k, "pair " + std::to_string(si) + ":" + std::to_string(ti) +
                                        " is out of range");
        if (seen[si])
            throw AlignmentError(k, "student level " + std::to_string(si) + " is paired twice");
        seen[si] = true;

        FeatureMap s = student.level(si);
        const FeatureMap& t_src = teacher.level(ti);
        AlignmentStep step{si, ti, false, {}};
        if (use_adapter) {
            if (adapters[k].in_channels != s.channels() || adapters[k].out_channels != t_src.channels())
                throw AlignmentError(k, "adapter maps " + std::to_string(adapters[k].in_channels) +
                                            "->" + std::to_string(adapters[k].out_channels) +
                                            " channels but pair needs " +
                                            std::to_string(s.channels()) + "->" +
                                            std::to_string(t_src.channels()));
            s = adapter_apply(adapters[k], s);
            step.adapted = true;
        } else if (s.channels() != t_src.channels()) {
            throw AlignmentError(k, "student has " + std::to_string(s.channels()) +
                                        " channels, teacher has " +
                                        std::to_string(t_src.channels()));
        }
        step.pre_upsample = s.shape();
        const std::size_t h = std::max(s.height(), t_src.height());
        const std::size_t w = std::max(s.width(), t_src.width());
        s_out.push_back(upsample_bilinear(s, h, w));
        t_out.push_back(upsample_bilinear(t_src, h, w));
        s_names.push_back(student.name(si));
        t_names.push_back(teacher.name(ti));
        if (k > 0) {
            const auto& prev = s_out[k - 1].shape();
            if (h > prev.height || w > prev.width)
                throw AlignmentError(k, "aligned level is larger than the previous aligned level");
        }
        result.steps.push_back(step);
    }
    result.student = FeaturePyramid(std::move(s_out), std::move(s_names));
    result.teacher = FeaturePyramid(std::move(t_out), std::move(t_names));
    return result;
}

AlignBackward align_backward(const AlignedPyramids& aligned, const FeaturePyramid& student,
                             const FeaturePyramid& aligned_grad,
                             std::span<const ChannelAdapter> adapters) {
    if (aligned_grad.size() != aligned.steps.size())
        throw ArgumentError("aligned gradient has " + std::to_string(aligned_grad.size()) +
                            " levels, expected " + std::to_string(aligned.steps.size()));
    AlignBackward out;
    out.student_grad = student.zeros_like();
    for (std::size_t k = 0; k < aligned.steps.size(); ++k) {
        const AlignmentStep& step = aligned.steps[k];
        FeatureMap g = upsample_bilinear_backward(step.pre_upsample, aligned_grad.level(k));
        if (step.adapted) {
            if (k >= adapters.size())
                throw ArgumentError("align_backward: missing adapter for aligned level " + std::to_string(k));
            AdapterGradients ag = adapter_grad(adapters[k], student.level(step.student_level), g);
            g = std::move(ag.input_grad);
            ag.input_grad = FeatureMap();
            out.adapter_grads.push_back(std::move(ag));
        }
        auto dst = out.student_grad.level(step.student_level).values();
        const auto src = g.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    return out;
}

} // namespace pkd
