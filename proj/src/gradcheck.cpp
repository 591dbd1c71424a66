#include "pkd/gradcheck.hpp"

#include "pkd/align.hpp"
#include "pkd/errors.hpp"
#include "pkd/losses.hpp"
#include "pkd/random.hpp"

#include <algorithm>
#include <cmath>

namespace pkd {

double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
    if (analytic.size() != numeric.size()) throw ArgumentError("gradient sizes differ");
    double diff = 0.0, scale = 1e-12;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return diff / scale;
}

std::vector<double> central_differences(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> x, double step) {
    std::vector<double> work(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = work[i];
        work[i] = orig + step;
        const double up = f(work);
        work[i] = orig - step;
        const double down = f(work);
        work[i] = orig;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

namespace {

FeaturePyramid single_level(const Shape4& shape, std::span<const double> values) {
    return FeaturePyramid({FeatureMap(shape, std::vector<double>(values.begin(), values.end()))});
}

void corrupt_gradient(std::vector<double>& g) {
    if (g.empty()) return;
    double scale = 0.0;
    for (double v : g) scale = std::max(scale, std::abs(v));
    g[0] += 0.5 * scale + 1e-3;
}

} // namespace

std::vector<GradcheckRow> gradcheck_losses(const Shape4& shape, std::uint64_t seed, double temperature,
                                           const std::vector<std::string>& kinds, bool corrupt) {
    if (shape.count() == 0 || shape.batch == 0 || shape.channels == 0 || shape.height == 0 || shape.width == 0)
        throw ArgumentError("gradcheck sizes must all be >= 1");
    if (shape.per_channel() < 2)
        throw ArgumentError("gradcheck needs b*h*w >= 2 (got " + std::to_string(shape.per_channel()) + ")");

    Rng rng(seed);
    std::vector<double> s(shape.count()), t(shape.count());
    rng.fill_normal(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.6 * s[i] + rng.normal(0.0, 0.8);
    const FeaturePyramid teacher = single_level(shape, t);

    std::vector<GradcheckRow> rows;
    for (const auto& kind : kinds) {
        LossConfig cfg;
        cfg.temperature = temperature;
        GradcheckRow row;
        row.name = kind;
        if (kind == "pkd" || kind == "norm-kl" || kind == "mse") {
            cfg.kind = parse_loss_kind(kind);
            const auto loss_of = [&](std::span<const double> x) {
                return compute_loss(single_level(shape, x), teacher, cfg).total;
            };
            const LossResult r = compute_loss(single_level(shape, s), teacher, cfg);
            const auto analytic = r.grad.level(0).values();
            std::vector<double> a(analytic.begin(), analytic.end());
            if (corrupt) corrupt_gradient(a);
            row.max_rel_error = gradient_relative_error(a, central_differences(loss_of, s));
        } else if (kind == "mse-adapter") {
            cfg.kind = LossKind::masked_mse;
            cfg.use_adapter = true;
            const ChannelAdapter base = ChannelAdapter::random(shape.channels, shape.channels, mix_seed(seed, 7));
            std::vector<ChannelAdapter> adapters{base};
            const LossResult r = compute_loss(single_level(shape, s), teacher, cfg, adapters);

            auto loss_student = [&](std::span<const double> x) {
                return compute_loss(single_level(shape, x), teacher, cfg, adapters).total;
            };
            auto loss_weight = [&](std::span<const double> w) {
                std::vector<ChannelAdapter> a{base};
                a[0].weight.assign(w.begin(), w.end());
                return compute_loss(single_level(shape, s), teacher, cfg, a).total;
            };
            auto loss_bias = [&](std::span<const double> b) {
                std::vector<ChannelAdapter> a{base};
                a[0].bias.assign(b.begin(), b.end());
                return compute_loss(single_level(shape, s), teacher, cfg, a).total;
            };
            const auto gs = r.grad.level(0).values();
            std::vector<double> a_s(gs.begin(), gs.end());
            std::vector<double> a_w = r.adapter_grads.at(0).weight_grad;
            std::vector<double> a_b = r.adapter_grads.at(0).bias_grad;
            if (corrupt) corrupt_gradient(a_s);
            row.max_rel_error = std::max({gradient_relative_error(a_s, central_differences(loss_student, s)),
                                          gradient_relative_error(a_w, central_differences(loss_weight, base.weight)),
                                          gradient_relative_error(a_b, central_differences(loss_bias, base.bias))});
        } else {
            throw ArgumentError("unknown gradcheck loss '" + kind + "'");
        }
        row.pass = row.max_rel_error < kGradcheckTolerance;
        rows.push_back(row);
    }
    return rows;
}

} // namespace pkd
