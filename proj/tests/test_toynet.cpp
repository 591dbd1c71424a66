#include "oracles.hpp"

#include "pkd/align.hpp"
#include "pkd/errors.hpp"
#include "pkd/losses.hpp"
#include "pkd/toynet.hpp"

#include <doctest.h>

#include <cmath>

using namespace pkd;

namespace {

ArchSpec tiny_arch() {
    ArchSpec a;
    a.input_channels = 2;
    a.stage_channels = {4, 4};
    a.lateral_channels = 4;
    return a;
}

std::vector<double> flatten(const ToyNet& net) {
    std::vector<double> out;
    for (const auto& p : net.parameters()) out.insert(out.end(), p.value.begin(), p.value.end());
    return out;
}

void unflatten(ToyNet& net, const std::vector<double>& flat) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
        auto& v = net.mutable_values(i);
        for (double& x : v) x = flat[k++];
    }
}

} // namespace

TEST_CASE("init") {
    const ArchSpec arch;
    const ToyNet a = ToyNet::init(5, arch), b = ToyNet::init(5, arch);
    CHECK(flatten(a) == flatten(b));
    CHECK(flatten(a) != flatten(ToyNet::init(6, arch)));

    SUBCASE("He scale for fan-in 9") {
        ArchSpec wide;
        wide.input_channels = 1;
        wide.stage_channels = {2048};
        wide.lateral_channels = 1;
        const ToyNet net = ToyNet::init(1, wide);
        const auto& w = net.parameters()[net.stage_weight(0)];
        CHECK(w.fan_in == 9);
        REQUIRE(w.value.size() >= 10000);
        double ss = 0;
        for (double v : w.value) ss += v * v;
        const double sd = std::sqrt(ss / static_cast<double>(w.value.size()));
        CHECK(std::abs(sd / std::sqrt(2.0 / 9.0) - 1.0) < 0.05);
        for (double v : net.parameters()[net.stage_bias(0)].value) CHECK(v == 0.0);
    }
    SUBCASE("invalid arch") {
        ArchSpec bad;
        bad.stage_channels = {};
        CHECK_THROWS_AS(ToyNet::init(1, bad), ArgumentError);
        ArchSpec too_many;
        too_many.levels = 5;
        CHECK_THROWS_AS(ToyNet::init(1, too_many), ArgumentError);
    }
}

TEST_CASE("forward geometry") {
    const ToyNet net = ToyNet::init(2, ArchSpec{});
    const auto r = forward(net, synthetic_inputs(3, 0, Shape4{2, 3, 32, 32}));
    REQUIRE(r.pyramid.size() == 3);
    CHECK(r.pyramid.level(0).shape() == Shape4{2, 8, 16, 16});
    CHECK(r.pyramid.level(1).shape() == Shape4{2, 8, 8, 8});
    CHECK(r.pyramid.level(2).shape() == Shape4{2, 8, 4, 4});
    CHECK(r.head.level(2).shape() == Shape4{2, 1, 4, 4});
    CHECK(ToyNet::stage_extent(7) == 4);
    CHECK_THROWS_AS(forward(net, FeatureMap(Shape4{1, 2, 8, 8})), ArgumentError);
}

TEST_CASE("forward properties") {
    SUBCASE("zero input and zero biases give zeros") {
        const ToyNet net = ToyNet::init(4, ArchSpec{});
        const auto r = forward(net, FeatureMap(Shape4{1, 3, 8, 8}));
        for (const auto& l : r.pyramid.levels())
            for (double v : l.values()) CHECK(v == 0.0);
    }
    SUBCASE("doubling a linear path") {
        // Non-negative weights on a non-negative input keep every ReLU in its linear region.
        ArchSpec arch;
        arch.input_channels = 1;
        arch.stage_channels = {2};
        arch.lateral_channels = 1;
        ToyNet net = ToyNet::init(1, arch);
        for (std::size_t i = 0; i < net.parameters().size(); ++i)
            for (double& v : net.mutable_values(i)) v = std::abs(v);
        const FeatureMap x(Shape4{1, 1, 4, 4}, std::vector<double>(16, 1.0));
        const auto base = forward(net, x).pyramid.level(0);
        for (double& v : net.mutable_values(net.stage_weight(0))) v *= 2;
        for (double& v : net.mutable_values(net.stage_bias(0))) v *= 2;
        const double lateral_bias = net.parameters()[net.lateral_bias(0)].value[0];
        const auto doubled = forward(net, x).pyramid.level(0);
        for (std::size_t i = 0; i < base.size(); ++i)
            CHECK(doubled.values()[i] - lateral_bias == doctest::Approx(2 * (base.values()[i] - lateral_bias)));
    }
    SUBCASE("deterministic output") {
        const ToyNet net = ToyNet::init(9, ArchSpec{});
        const auto x = synthetic_inputs(1, 2, Shape4{1, 3, 16, 16});
        CHECK(forward(net, x).pyramid == forward(net, x).pyramid);
    }
}

TEST_CASE("backward") {
    const ArchSpec arch = tiny_arch();
    ToyNet net = ToyNet::init(11, arch);
    const FeatureMap x = synthetic_inputs(12, 0, Shape4{1, 2, 8, 8});

    SUBCASE("zero upstream gives zero gradients") {
        const auto r = forward(net, x);
        const auto zeros = r.pyramid.zeros_like();
        const auto g = backward(net, r.cache, &zeros, nullptr);
        for (const auto& p : g)
            for (double v : p) CHECK(v == 0.0);
    }
    SUBCASE("stale cache") {
        const auto r = forward(net, x);
        net.mutable_values(0)[0] += 1.0;
        CHECK_THROWS_AS(backward(net, r.cache, nullptr, &r.head), StateError);
    }
    SUBCASE("every distillation loss end to end") {
        std::mt19937_64 rng(13);
        const auto ref = forward(ToyNet::init(14, arch), x);
        FeaturePyramid targets = ref.head;
        for (auto kind : {LossKind::pkd, LossKind::masked_mse, LossKind::norm_kl}) {
            LossConfig cfg;
            cfg.kind = kind;
            cfg.temperature = 3.0;
            const double alpha = 2.0;
            auto objective = [&](const std::vector<double>& flat) {
                ToyNet n = net;
                unflatten(n, flat);
                const auto r = forward(n, x);
                const double gt = dense_regression_loss(r.head, targets, nullptr);
                return total_loss(gt, compute_loss(r.pyramid, ref.pyramid, cfg), alpha);
            };
            const auto r = forward(net, x);
            FeaturePyramid head_grad;
            dense_regression_loss(r.head, targets, &head_grad);
            auto fpn = compute_loss(r.pyramid, ref.pyramid, cfg);
            for (std::size_t l = 0; l < fpn.grad.size(); ++l)
                for (double& v : fpn.grad.level(l).values()) v *= alpha;
            const auto g = backward(net, r.cache, &fpn.grad, &head_grad);
            std::vector<double> analytic;
            for (const auto& p : g) analytic.insert(analytic.end(), p.begin(), p.end());
            CHECK(oracle::rel_error(analytic, oracle::finite_diff(objective, flatten(net))) < 1e-3);
        }
    }
    SUBCASE("ground-truth gradient ignores the teacher") {
        const auto r = forward(net, x);
        FeaturePyramid targets = r.head.zeros_like();
        FeaturePyramid head_grad;
        dense_regression_loss(r.head, targets, &head_grad);
        const auto zeros = r.pyramid.zeros_like();
        const auto a = backward(net, r.cache, nullptr, &head_grad);
        const auto b = backward(net, r.cache, &zeros, &head_grad);
        CHECK(a == b);
    }
}

TEST_CASE("sgd") {
    SUBCASE("plain step") {
        std::vector<double> p{1.0, -2.0}, v{0, 0};
        sgd_update(p, std::vector<double>{0.5, 1.0}, v, 0.1, 0.0, 0.0);
        CHECK(p[0] == 1.0 - 0.1 * 0.5);
        CHECK(p[1] == -2.0 - 0.1 * 1.0);
    }
    SUBCASE("zero learning rate") {
        std::vector<double> p{1.0, -2.0}, v{0, 0};
        sgd_update(p, std::vector<double>{0.5, 1.0}, v, 0.0, 0.9, 1e-4);
        CHECK(p == std::vector<double>{1.0, -2.0});
    }
    SUBCASE("momentum unrolls to 1.9x") {
        std::vector<double> p{0.0}, v{0.0};
        const std::vector<double> g{1.0};
        sgd_update(p, g, v, 0.1, 0.9, 0.0);
        const double first = -p[0];
        const double before = p[0];
        sgd_update(p, g, v, 0.1, 0.9, 0.0);
        CHECK((before - p[0]) / first == doctest::Approx(1.9));
    }
    SUBCASE("small lr decreases total loss on a fixed batch") {
        const ArchSpec arch;
        ToyNet net = ToyNet::init(21, arch);
        const FeatureMap x = synthetic_inputs(22, 0, Shape4{4, 3, 16, 16});
        const auto targets = forward(ToyNet::init(23, arch), x).head;
        double prev = 1e300;
        for (int step = 0; step < 10; ++step) {
            const auto r = forward(net, x);
            FeaturePyramid g;
            const double loss = dense_regression_loss(r.head, targets, &g);
            CHECK(loss < prev);
            prev = loss;
            sgd_step(net, backward(net, r.cache, nullptr, &g), 0.002, 0.9, 1e-4);
        }
    }
}
