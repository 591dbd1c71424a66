#include "pkd/toynet.hpp"

#include "pkd/align.hpp"
#include "pkd/errors.hpp"
#include "pkd/random.hpp"

#include <atomic>
#include <cmath>
#include <numbers>

namespace pkd {

namespace {

std::atomic<std::uint64_t> next_net_id{1};

Parameter make_param(std::string name, std::vector<std::size_t> shape, std::size_t fan_in) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    Parameter p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.fan_in = fan_in;
    p.value.assign(n, 0.0);
    p.velocity.assign(n, 0.0);
    return p;
}

// 3x3, stride 2, zero padding 1.
FeatureMap conv3x3_s2(const FeatureMap& in, std::span<const double> w, std::span<const double> b,
                      std::size_t cout) {
    const Shape4& s = in.shape();
    const std::size_t ho = ToyNet::stage_extent(s.height);
    const std::size_t wo = ToyNet::stage_extent(s.width);
    FeatureMap out(Shape4{s.batch, cout, ho, wo});
    for (std::size_t n = 0; n < s.batch; ++n)
        for (std::size_t co = 0; co < cout; ++co) {
            for (std::size_t oy = 0; oy < ho; ++oy)
                for (std::size_t ox = 0; ox < wo; ++ox) out.at(n, co, oy, ox) = b[co];
            for (std::size_t ci = 0; ci < s.channels; ++ci)
                for (std::size_t ky = 0; ky < 3; ++ky)
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const double wv = w[((co * s.channels + ci) * 3 + ky) * 3 + kx];
                        for (std::size_t oy = 0; oy < ho; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(2 * oy + ky) - 1;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height)) continue;
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(2 * ox + kx) - 1;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.width)) continue;
                                out.at(n, co, oy, ox) += wv * in.at(n, ci, static_cast<std::size_t>(iy),
                                                                    static_cast<std::size_t>(ix));
                            }
                        }
                    }
        }
    return out;
}

// Accumulates dW, db and returns d input.
FeatureMap conv3x3_s2_backward(const FeatureMap& in, std::span<const double> w, const FeatureMap& up,
                               std::span<double> dw, std::span<double> db) {
    const Shape4& s = in.shape();
    const Shape4& u = up.shape();
    FeatureMap din(s);
    for (std::size_t n = 0; n < s.batch; ++n)
        for (std::size_t co = 0; co < u.channels; ++co) {
            double bsum = 0.0;
            for (std::size_t oy = 0; oy < u.height; ++oy)
                for (std::size_t ox = 0; ox < u.width; ++ox) bsum += up.at(n, co, oy, ox);
            db[co] += bsum;
            for (std::size_t ci = 0; ci < s.channels; ++ci)
                for (std::size_t ky = 0; ky < 3; ++ky)
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const std::size_t wi = ((co * s.channels + ci) * 3 + ky) * 3 + kx;
                        const double wv = w[wi];
                        double acc = 0.0;
                        for (std::size_t oy = 0; oy < u.height; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(2 * oy + ky) - 1;
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.height)) continue;
                            for (std::size_t ox = 0; ox < u.width; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(2 * ox + kx) - 1;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.width)) continue;
                                const double g = up.at(n, co, oy, ox);
                                const auto yy = static_cast<std::size_t>(iy);
                                const auto xx = static_cast<std::size_t>(ix);
                                acc += g * in.at(n, ci, yy, xx);
                                din.at(n, ci, yy, xx) += wv * g;
                            }
                        }
                        dw[wi] += acc;
                    }
        }
    return din;
}

void check_cache(const ToyNet& net, const ForwardCache& cache) {
    if (cache.net_id != net.id() || cache.net_version != net.version())
        throw StateError("forward cache is stale: parameters changed since the forward pass");
}

} // namespace

void ArchSpec::validate() const {
    if (input_channels == 0) throw ArgumentError("arch: input_channels must be >= 1");
    if (stage_channels.empty()) throw ArgumentError("arch: at least one conv stage is required");
    for (auto c : stage_channels)
        if (c == 0) throw ArgumentError("arch: stage widths must be >= 1");
    if (lateral_channels == 0) throw ArgumentError("arch: lateral_channels must be >= 1");
    if (level_count() == 0 || level_count() > stage_channels.size())
        throw ArgumentError("arch: levels must be between 1 and the number of stages");
}

std::size_t ToyNet::stage_extent(std::size_t input) { return (input + 1) / 2; }

ToyNet ToyNet::init(std::uint64_t seed, const ArchSpec& arch) {
    arch.validate();
    ToyNet net;
    net.arch_ = arch;
    net.id_ = next_net_id.fetch_add(1);
    std::size_t cin = arch.input_channels;
    for (std::size_t s = 0; s < arch.stage_channels.size(); ++s) {
        const std::size_t cout = arch.stage_channels[s];
        net.params_.push_back(make_param("stage" + std::to_string(s) + ".weight", {cout, cin, 3, 3}, cin * 9));
        net.params_.push_back(make_param("stage" + std::to_string(s) + ".bias", {cout}, cin * 9));
        cin = cout;
    }
    const std::size_t levels = arch.level_count();
    const std::size_t first = arch.stage_channels.size() - levels;
    for (std::size_t k = 0; k < levels; ++k) {
        const std::size_t c = arch.stage_channels[first + k];
        net.params_.push_back(make_param("lateral" + std::to_string(k) + ".weight", {arch.lateral_channels, c}, c));
        net.params_.push_back(make_param("lateral" + std::to_string(k) + ".bias", {arch.lateral_channels}, c));
    }
    net.params_.push_back(make_param("head.weight", {1, arch.lateral_channels}, arch.lateral_channels));
    net.params_.push_back(make_param("head.bias", {1}, arch.lateral_channels));

    Rng rng(seed);
    for (auto& p : net.params_) {
        if (p.shape.size() == 1) continue; // biases stay zero
        rng.fill_normal(p.value, 0.0, std::sqrt(2.0 / static_cast<double>(p.fan_in)));
    }
    return net;
}

std::vector<double>& ToyNet::mutable_values(std::size_t param) {
    ++version_;
    return params_.at(param).value;
}

Gradients ToyNet::zero_gradients() const {
    Gradients g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.emplace_back(p.value.size(), 0.0);
    return g;
}

std::size_t ToyNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

ForwardResult forward(const ToyNet& net, const FeatureMap& input) {
    const ArchSpec& arch = net.arch();
    if (input.channels() != arch.input_channels)
        throw ArgumentError("toy net expects " + std::to_string(arch.input_channels) +
                            " input channels, got " + std::to_string(input.channels()));
    const auto& params = net.parameters();
    ForwardResult r;
    r.cache.net_id = net.id();
    r.cache.net_version = net.version();
    r.cache.input = input;

    const FeatureMap* x = &input;
    for (std::size_t s = 0; s < arch.stage_channels.size(); ++s) {
        FeatureMap pre = conv3x3_s2(*x, params[net.stage_weight(s)].value, params[net.stage_bias(s)].value,
                                    arch.stage_channels[s]);
        FeatureMap post = pre;
        for (double& v : post.values()) v = v > 0.0 ? v : 0.0;
        r.cache.stage_pre.push_back(std::move(pre));
        r.cache.stage_post.push_back(std::move(post));
        x = &r.cache.stage_post.back();
    }

    const std::size_t levels = arch.level_count();
    const std::size_t first = arch.stage_channels.size() - levels;
    std::vector<FeatureMap> lv, hd;
    for (std::size_t k = 0; k < levels; ++k) {
        lv.push_back(pointwise_conv(params[net.lateral_weight(k)].value, params[net.lateral_bias(k)].value,
                                    arch.lateral_channels, r.cache.stage_post[first + k]));
        hd.push_back(pointwise_conv(params[net.head_weight()].value, params[net.head_bias()].value, 1, lv.back()));
    }
    r.cache.levels = lv;
    r.pyramid = FeaturePyramid(std::move(lv));
    r.head = FeaturePyramid(std::move(hd));
    return r;
}

Gradients backward(const ToyNet& net, const ForwardCache& cache, const FeaturePyramid* pyramid_grad,
                   const FeaturePyramid* head_grad) {
    check_cache(net, cache);
    const ArchSpec& arch = net.arch();
    const auto& params = net.parameters();
    const std::size_t stages = arch.stage_channels.size();
    const std::size_t levels = arch.level_count();
    const std::size_t first = stages - levels;
    if (pyramid_grad && pyramid_grad->size() != levels)
        throw ArgumentError("pyramid gradient has " + std::to_string(pyramid_grad->size()) + " levels, expected " +
                            std::to_string(levels));
    if (head_grad && head_grad->size() != levels)
        throw ArgumentError("head gradient has " + std::to_string(head_grad->size()) + " levels, expected " +
                            std::to_string(levels));

    Gradients g = net.zero_gradients();
    std::vector<FeatureMap> post_grad;
    for (const auto& p : cache.stage_post) post_grad.emplace_back(p.shape());

    for (std::size_t k = 0; k < levels; ++k) {
        FeatureMap level_grad(cache.levels[k].shape());
        if (pyramid_grad) {
            if (pyramid_grad->level(k).shape() != level_grad.shape())
                throw ArgumentError("pyramid gradient level " + std::to_string(k) + " has the wrong shape");
            level_grad = pyramid_grad->level(k);
        }
        if (head_grad) {
            FeatureMap from_head = pointwise_conv_backward(params[net.head_weight()].value, 1, cache.levels[k],
                                                           head_grad->level(k), g[net.head_weight()],
                                                           g[net.head_bias()]);
            auto dst = level_grad.values();
            const auto src = from_head.values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
        FeatureMap stage_grad =
            pointwise_conv_backward(params[net.lateral_weight(k)].value, arch.lateral_channels,
                                    cache.stage_post[first + k], level_grad, g[net.lateral_weight(k)],
                                    g[net.lateral_bias(k)]);
        auto dst = post_grad[first + k].values();
        const auto src = stage_grad.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    for (std::size_t s = stages; s-- > 0;) {
        FeatureMap pre_grad = post_grad[s];
        const auto pre = cache.stage_pre[s].values();
        auto pg = pre_grad.values();
        for (std::size_t i = 0; i < pg.size(); ++i)
            if (!(pre[i] > 0.0)) pg[i] = 0.0;
        const FeatureMap& in = s == 0 ? cache.input : cache.stage_post[s - 1];
        FeatureMap din = conv3x3_s2_backward(in, params[net.stage_weight(s)].value, pre_grad,
                                             g[net.stage_weight(s)], g[net.stage_bias(s)]);
        if (s > 0) {
            auto dst = post_grad[s - 1].values();
            const auto src = din.values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    }
    return g;
}

void sgd_update(std::span<double> value, std::span<const double> grad, std::span<double> velocity,
                double lr, double momentum, double weight_decay) {
    if (grad.size() != value.size() || velocity.size() != value.size())
        throw ArgumentError("sgd_update: buffer sizes differ");
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double d = grad[i] + weight_decay * value[i];
        velocity[i] = momentum * velocity[i] + d;
        value[i] -= lr * velocity[i];
    }
}

void sgd_step(ToyNet& net, const Gradients& grads, double lr, double momentum, double weight_decay) {
    if (grads.size() != net.params_.size())
        throw ArgumentError("sgd_step: expected " + std::to_string(net.params_.size()) + " gradient tensors, got " +
                            std::to_string(grads.size()));
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (grads[i].size() != net.params_[i].value.size())
            throw ArgumentError("sgd_step: gradient for " + net.params_[i].name + " has the wrong size");
    ++net.version_;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& p = net.params_[i];
        sgd_update(p.value, grads[i], p.velocity, lr, momentum, weight_decay);
    }
}

FeatureMap synthetic_inputs(std::uint64_t seed, std::uint64_t index, const Shape4& shape) {
    Rng rng(mix_seed(seed, index));
    FeatureMap out(shape);
    constexpr int kWaves = 4;
    for (std::size_t n = 0; n < shape.batch; ++n)
        for (std::size_t c = 0; c < shape.channels; ++c) {
            double amp[kWaves], fy[kWaves], fx[kWaves], phase[kWaves];
            for (int k = 0; k < kWaves; ++k) {
                amp[k] = rng.uniform(0.5, 1.0);
                fy[k] = rng.uniform(0.0, 2.0);
                fx[k] = rng.uniform(0.0, 2.0);
                phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
            }
            for (std::size_t y = 0; y < shape.height; ++y)
                for (std::size_t x = 0; x < shape.width; ++x) {
                    double v = rng.normal(0.0, 0.3);
                    for (int k = 0; k < kWaves; ++k)
                        v += amp[k] * std::cos(2.0 * std::numbers::pi *
                                                   (fy[k] * static_cast<double>(y) / static_cast<double>(shape.height) +
                                                    fx[k] * static_cast<double>(x) / static_cast<double>(shape.width)) +
                                               phase[k]);
                    out.at(n, c, y, x) = v;
                }
        }
    return out;
}

double dense_regression_loss(const FeaturePyramid& head, const FeaturePyramid& targets, FeaturePyramid* grad) {
    if (head.size() != targets.size() || head.empty())
        throw ArgumentError("head and targets differ in level count");
    const double inv_levels = 1.0 / static_cast<double>(head.size());
    if (grad) *grad = head.zeros_like();
    double total = 0.0;
    for (std::size_t l = 0; l < head.size(); ++l) {
        const auto h = head.level(l).values();
        const auto t = targets.level(l).values();
        if (head.level(l).shape() != targets.level(l).shape())
            throw ArgumentError("target level " + std::to_string(l) + " shape mismatch");
        const double inv_n = 1.0 / static_cast<double>(h.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i) {
            const double d = h[i] - t[i];
            sum += d * d;
            if (grad) grad->level(l).values()[i] = 2.0 * d * inv_n * inv_levels;
        }
        total += sum * inv_n;
    }
    return total * inv_levels;
}

} // namespace pkd
