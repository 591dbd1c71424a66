#include "oracles.hpp"

#include "pkd/align.hpp"
#include "pkd/errors.hpp"
#include "pkd/losses.hpp"

#include <doctest.h>

#include <cmath>

using namespace pkd;

namespace {

FeaturePyramid one_level(Shape4 s, std::vector<double> v) { return FeaturePyramid({FeatureMap(s, std::move(v))}); }

LossConfig config(LossKind kind, double temperature = 1.0) {
    LossConfig c;
    c.kind = kind;
    c.temperature = temperature;
    return c;
}

double kl_reference(const std::vector<double>& s, const std::vector<double>& t, double T) {
    const auto sh = oracle::standardize(s);
    const auto th = oracle::standardize(t);
    double zs = 0, zt = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        zs += std::exp(sh[i] / T);
        zt += std::exp(th[i] / T);
    }
    double kl = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double p = std::exp(th[i] / T) / zt;
        const double q = std::exp(sh[i] / T) / zs;
        kl += p * std::log(p / q);
    }
    return T * T * kl;
}

} // namespace

TEST_CASE("pcc hand cases") {
    CHECK(pcc(make_sample({1, 2, 3, 4}), make_sample({1, 2, 3, 4})) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(pcc(make_sample({1, 2, 3, 4}), make_sample({-1, -2, -3, -4})) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(std::abs(pcc(make_sample({1, -1, 1, -1}), make_sample({1, 1, -1, -1}))) < 1e-12);
    CHECK(pcc(make_sample({3, 3, 3}), make_sample({1, 2, 3})) == 0.0);
    CHECK_THROWS_AS(pcc(make_sample({1, 2}), make_sample({1, 2, 3})), ArgumentError);
}

TEST_CASE("pcc agrees with a two-pass reference") {
    std::mt19937_64 rng(21);
    for (int k = 0; k < 20; ++k) {
        const auto a = oracle::normal_vector(rng, 30, 2.0, 3.0);
        auto b = oracle::normal_vector(rng, 30);
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += 0.5 * a[i];
        CHECK(pcc(make_sample(a), make_sample(b)) == doctest::Approx(oracle::pearson(a, b)).epsilon(1e-7));
    }
}

TEST_CASE("pkd channel loss") {
    const auto s = make_sample({1, 3, 2, 5, 4});
    CHECK(pkd_channel_loss(s, s).loss == doctest::Approx(0.0));
    auto neg = s.values;
    for (auto& v : neg) v = -v;
    CHECK(pkd_channel_loss(s, make_sample(neg)).loss == doctest::Approx(2.0).epsilon(1e-9));

    SUBCASE("gradient against finite differences of 1 - r") {
        std::mt19937_64 rng(8);
        const auto sv = oracle::normal_vector(rng, 64);
        const auto tv = oracle::normal_vector(rng, 64);
        const auto analytic = pkd_channel_loss(make_sample(sv), make_sample(tv)).grad;
        const auto numeric =
            oracle::finite_diff([&](const std::vector<double>& x) { return 1.0 - oracle::pearson(x, tv); }, sv);
        CHECK(oracle::rel_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("normalized MSE identity") {
    // Exact as epsilon -> 0; at the default epsilon the standardization is off by O(eps / sigma).
    std::mt19937_64 rng(4);
    auto gap = [](const std::vector<double>& s, const std::vector<double>& t, double eps) {
        const auto sn = normalize(make_sample(s), eps);
        const auto tn = normalize(make_sample(t), eps);
        const double m = static_cast<double>(s.size());
        double lhs = 0;
        for (std::size_t i = 0; i < s.size(); ++i) lhs += (sn.values[i] - tn.values[i]) * (sn.values[i] - tn.values[i]);
        lhs /= 2.0 * m;
        return std::abs(lhs - (m - 1) / m * pkd_channel_loss(make_sample(s), make_sample(t), eps).loss);
    };
    for (std::size_t m : {8u, 64u, 1024u}) {
        const auto s = oracle::normal_vector(rng, m, 1.0, 2.0);
        const auto t = oracle::normal_vector(rng, m, -3.0, 0.5);
        CHECK(gap(s, t, 1e-14) < 1e-9);
        const double ss = make_sample(s).std, ts = make_sample(t).std;
        CHECK(gap(s, t, kDefaultEpsilon) <= 2 * kDefaultEpsilon * (1 / ss + 1 / ts));
    }
}

TEST_CASE("pkd pyramid loss") {
    std::mt19937_64 rng(31);
    const Shape4 a{2, 3, 4, 4}, b{2, 3, 2, 2};
    FeaturePyramid s({oracle::random_map(rng, a), oracle::random_map(rng, b)});
    FeaturePyramid t({oracle::random_map(rng, a), oracle::random_map(rng, b)});

    SUBCASE("identical pyramids") {
        const auto r = compute_loss(s, s, config(LossKind::pkd));
        CHECK(std::abs(r.total) < 1e-12);
        for (std::size_t l = 0; l < r.grad.size(); ++l)
            for (double g : r.grad.level(l).values()) CHECK(std::abs(g) < 1e-12);
    }
    SUBCASE("affine teacher") {
        FeaturePyramid aff = s;
        for (std::size_t l = 0; l < aff.size(); ++l)
            for (double& v : aff.level(l).values()) v = 3 * v + 7;
        CHECK(std::abs(compute_loss(s, aff, config(LossKind::pkd)).total) < 1e-6);
    }
    SUBCASE("total is the mean of independently computed level losses") {
        double sum = 0;
        for (std::size_t l = 0; l < 2; ++l) {
            double level = 0;
            for (std::size_t c = 0; c < 3; ++c)
                level += 1 - oracle::pearson(oracle::channel(s.level(l), c), oracle::channel(t.level(l), c));
            sum += level / 3;
        }
        const auto r = compute_loss(s, t, config(LossKind::pkd));
        CHECK(r.total == doctest::Approx(sum / 2).epsilon(1e-9));
        CHECK(r.per_level.size() == 2);
        CHECK(r.per_channel[1].size() == 3);
    }
    SUBCASE("bounds") {
        const auto r = compute_loss(s, t, config(LossKind::pkd));
        for (const auto& pc : r.per_channel)
            for (double v : pc) {
                CHECK(v >= 0.0);
                CHECK(v <= 2.0);
            }
    }
    SUBCASE("mismatched shapes") {
        FeaturePyramid other({oracle::random_map(rng, Shape4{2, 4, 4, 4}), oracle::random_map(rng, b)});
        try {
            compute_loss(s, other, config(LossKind::pkd));
            FAIL("expected AlignmentError");
        } catch (const AlignmentError& e) {
            CHECK(e.level() == 0);
        }
    }
}

TEST_CASE("masked mse") {
    SUBCASE("hand value") {
        const auto r = compute_loss(one_level({1, 1, 1, 2}, {0, 0}), one_level({1, 1, 1, 2}, {2, 2}),
                                    config(LossKind::masked_mse));
        CHECK(r.total == doctest::Approx(4.0));
    }
    SUBCASE("identical is zero") {
        std::mt19937_64 rng(2);
        FeaturePyramid s({oracle::random_map(rng, {2, 2, 3, 3})});
        CHECK(compute_loss(s, s, config(LossKind::masked_mse)).total == 0.0);
    }
    SUBCASE("half mask equals restricted sum") {
        std::mt19937_64 rng(6);
        const Shape4 sh{2, 3, 4, 4};
        FeaturePyramid s({oracle::random_map(rng, sh)}), t({oracle::random_map(rng, sh)});
        FeatureMap mask(Shape4{1, 1, 4, 4});
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x) mask.at(0, 0, y, x) = (x + y) % 2 == 0 ? 1.0 : 0.0;
        LossConfig cfg = config(LossKind::masked_mse);
        cfg.mask = std::vector<FeatureMap>{mask};
        double sum = 0;
        std::size_t count = 0;
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < 4; ++y)
                    for (std::size_t x = 0; x < 4; ++x)
                        if ((x + y) % 2 == 0) {
                            const double d = s.level(0).at(n, c, y, x) - t.level(0).at(n, c, y, x);
                            sum += d * d;
                            ++count;
                        }
        const auto r = compute_loss(s, t, cfg);
        CHECK(r.total == doctest::Approx(sum / static_cast<double>(count)).epsilon(1e-12));
        double mean_channel = 0;
        for (double v : r.per_channel[0]) mean_channel += v / 3.0;
        CHECK(mean_channel == doctest::Approx(r.per_level[0]).epsilon(1e-12));
    }
    SUBCASE("degenerate and negative masks") {
        const Shape4 sh{1, 1, 2, 2};
        FeaturePyramid s = one_level(sh, {1, 2, 3, 4});
        LossConfig cfg = config(LossKind::masked_mse);
        cfg.mask = std::vector<FeatureMap>{FeatureMap(sh)};
        CHECK_THROWS_AS(compute_loss(s, s, cfg), DegenerateMaskError);
        cfg.mask = std::vector<FeatureMap>{FeatureMap(sh, {1, -1, 1, 1})};
        CHECK_THROWS_AS(compute_loss(s, s, cfg), ArgumentError);
    }
    SUBCASE("gradient with and without adapter") {
        std::mt19937_64 rng(9);
        const Shape4 sh{2, 3, 3, 3};
        const auto sv = oracle::normal_vector(rng, sh.count());
        FeaturePyramid t({oracle::random_map(rng, Shape4{2, 2, 3, 3})});
        FeaturePyramid t3({oracle::random_map(rng, sh)});
        LossConfig cfg = config(LossKind::masked_mse);

        const auto plain = compute_loss(one_level(sh, sv), t3, cfg);
        const auto num_plain = oracle::finite_diff(
            [&](const std::vector<double>& x) { return compute_loss(one_level(sh, x), t3, cfg).total; }, sv);
        const auto a_plain = plain.grad.level(0).values();
        CHECK(oracle::rel_error({a_plain.begin(), a_plain.end()}, num_plain) < 1e-4);

        cfg.use_adapter = true;
        const std::vector<ChannelAdapter> ad{ChannelAdapter::random(3, 2, 77)};
        const auto r = compute_loss(one_level(sh, sv), t, cfg, ad);
        const auto num_s = oracle::finite_diff(
            [&](const std::vector<double>& x) { return compute_loss(one_level(sh, x), t, cfg, ad).total; }, sv);
        const auto a_s = r.grad.level(0).values();
        CHECK(oracle::rel_error({a_s.begin(), a_s.end()}, num_s) < 1e-4);
        const auto num_w = oracle::finite_diff(
            [&](const std::vector<double>& w) {
                std::vector<ChannelAdapter> a = ad;
                a[0].weight = w;
                return compute_loss(one_level(sh, sv), t, cfg, a).total;
            },
            ad[0].weight);
        CHECK(oracle::rel_error(r.adapter_grads[0].weight_grad, num_w) < 1e-4);
        const auto num_b = oracle::finite_diff(
            [&](const std::vector<double>& b) {
                std::vector<ChannelAdapter> a = ad;
                a[0].bias = b;
                return compute_loss(one_level(sh, sv), t, cfg, a).total;
            },
            ad[0].bias);
        CHECK(oracle::rel_error(r.adapter_grads[0].bias_grad, num_b) < 1e-4);
    }
}

TEST_CASE("norm kl") {
    std::mt19937_64 rng(13);
    SUBCASE("identical is zero") {
        const auto s = make_sample(oracle::normal_vector(rng, 32));
        CHECK(std::abs(norm_kl_channel_loss(s, s, 5.0).loss) < 1e-12);
    }
    SUBCASE("matches a direct evaluation") {
        const auto s = oracle::normal_vector(rng, 40);
        const auto t = oracle::normal_vector(rng, 40);
        CHECK(norm_kl_channel_loss(make_sample(s), make_sample(t), 2.0).loss ==
              doctest::Approx(kl_reference(s, t, 2.0)).epsilon(1e-9));
    }
    SUBCASE("gradient against finite differences") {
        const auto s = oracle::normal_vector(rng, 24);
        const auto t = oracle::normal_vector(rng, 24);
        for (double T : {0.5, 2.0, 50.0}) {
            const auto analytic = norm_kl_channel_loss(make_sample(s), make_sample(t), T).grad;
            const auto numeric =
                oracle::finite_diff([&](const std::vector<double>& x) { return kl_reference(x, t, T); }, s);
            CHECK(oracle::rel_error(analytic, numeric) < 1e-4);
        }
    }
    SUBCASE("high temperature approaches normalized MSE gradient") {
        const auto sh = normalize(make_sample(oracle::normal_vector(rng, 256)));
        const auto th = normalize(make_sample(oracle::normal_vector(rng, 256)));
        auto gap = [&](double T) {
            const auto g = norm_kl_grad_normalized(sh.values, th.values, T);
            double worst = 0;
            for (std::size_t i = 0; i < g.size(); ++i)
                worst = std::max(worst, std::abs(g[i] - (sh.values[i] - th.values[i]) / 256.0));
            return worst;
        };
        CHECK(gap(50) < 2.0 / 50);
        const double ratio = gap(50) / gap(100);
        CHECK(ratio > 1.6);
        CHECK(ratio < 2.4);
    }
}

TEST_CASE("total loss weighting") {
    LossResult half;
    half.total = 0.5;
    CHECK(total_loss(1.0, half, kAlphaTwoStageTeacher) == doctest::Approx(4.0));
    LossResult zero;
    CHECK(total_loss(1.0, zero, kAlphaOneStageTeacher) == 1.0);
    LossResult two;
    two.total = 2.0;
    CHECK(total_loss(0.0, two, 10.0) == 20.0);
    CHECK_THROWS_AS(total_loss(1.0, two, -1.0), ArgumentError);
}

TEST_CASE("loss kind names") {
    CHECK(parse_loss_kind("pkd") == LossKind::pkd);
    CHECK(parse_loss_kind("mse") == LossKind::masked_mse);
    CHECK(parse_loss_kind("norm-kl") == LossKind::norm_kl);
    CHECK_THROWS_AS(parse_loss_kind("l1"), ArgumentError);
    for (auto k : {LossKind::pkd, LossKind::masked_mse, LossKind::norm_kl}) CHECK(parse_loss_kind(to_string(k)) == k);
}
