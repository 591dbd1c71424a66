#include "oracles.hpp"

#include "pkd/analysis.hpp"
#include "pkd/errors.hpp"

#include <doctest.h>

#include <cmath>

using namespace pkd;

TEST_CASE("dominant channels") {
    SUBCASE("one channel always larger") {
        FeatureMap m(Shape4{1, 2, 2, 2}, {5, 6, 7, 8, 1, 2, 3, 4});
        const auto r = dominant_channels(m, "P3");
        CHECK(r.level_name == "P3");
        CHECK(r.counts == std::vector<std::uint64_t>{4, 0});
        CHECK(r.ranked == std::vector<std::size_t>{0, 1});
    }
    SUBCASE("ties go to the lowest index") {
        FeatureMap m(Shape4{2, 3, 2, 2});
        const auto r = dominant_channels(m);
        CHECK(r.counts == std::vector<std::uint64_t>{8, 0, 0});
        CHECK(r.ranked == std::vector<std::size_t>{0, 1, 2});
    }
    SUBCASE("brute force on random maps") {
        std::mt19937_64 rng(17);
        for (int k = 0; k < 10; ++k) {
            FeatureMap m = oracle::random_map(rng, Shape4{2, 8, 5, 3});
            CHECK(dominant_channels(m).counts == oracle::argmax_counts(m));
        }
    }
    SUBCASE("boosted channel ranks first") {
        std::mt19937_64 rng(18);
        FeatureMap m = oracle::random_map(rng, Shape4{2, 6, 4, 4});
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 4; ++x) m.at(n, 4, y, x) = std::abs(m.at(n, 4, y, x)) * 100 + 10;
        CHECK(dominant_channels(m).ranked.front() == 4);
    }
    SUBCASE("invariant under a strictly increasing transform") {
        std::mt19937_64 rng(19);
        FeatureMap m = oracle::random_map(rng, Shape4{1, 5, 6, 6});
        FeatureMap t = m;
        for (double& v : t.values()) v = std::exp(0.5 * v) + std::pow(v, 3);
        CHECK(dominant_channels(m).counts == dominant_channels(t).counts);
    }
}

TEST_CASE("activation patterns") {
    SUBCASE("hand scaled single level") {
        FeaturePyramid p({FeatureMap(Shape4{1, 2, 2, 2}, {0, 1, 2, 4, -1, -1, -1, -1})});
        const auto a = activation_patterns(p, 0);
        REQUIRE(a.levels.size() == 1);
        CHECK(a.levels[0].pixels == std::vector<std::uint8_t>{0, 64, 128, 255});
        CHECK(a.min == 0.0);
        CHECK(a.max == 4.0);
    }
    SUBCASE("joint normalization across levels") {
        FeaturePyramid p({FeatureMap(Shape4{1, 1, 2, 2}, {10, 11, 12, 13}), FeatureMap(Shape4{1, 1, 1, 1}, {2})});
        const auto a = activation_patterns(p, 0);
        for (auto px : a.levels[0].pixels) CHECK(a.levels[1].pixels[0] < px);
    }
    SUBCASE("degenerate range") {
        FeaturePyramid p({FeatureMap(Shape4{1, 3, 2, 2}, std::vector<double>(12, 7.0))});
        const auto a = activation_patterns(p, 0);
        for (auto px : a.levels[0].pixels) CHECK(px == 0);
    }
    SUBCASE("batch index selects the element") {
        FeaturePyramid p({FeatureMap(Shape4{2, 1, 1, 2}, {0, 1, 5, 3})});
        CHECK(activation_patterns(p, 1).levels[0].pixels == std::vector<std::uint8_t>{255, 0});
        CHECK_THROWS_AS(activation_patterns(p, 2), IndexError);
    }
}

TEST_CASE("magnitude profile") {
    SUBCASE("zeros") {
        FeaturePyramid p({FeatureMap(Shape4{1, 2, 2, 2})});
        const auto r = stage_magnitude_profile(p)[0];
        CHECK(r.mean_abs == 0.0);
        CHECK(r.p50 == 0.0);
        CHECK(r.p99 == 0.0);
        CHECK(r.max == 0.0);
    }
    SUBCASE("one to one hundred") {
        std::vector<double> v(100);
        for (std::size_t i = 0; i < 100; ++i) v[i] = static_cast<double>(100 - i);
        FeaturePyramid p({FeatureMap(Shape4{1, 1, 10, 10}, v)});
        const auto r = stage_magnitude_profile(p)[0];
        CHECK(r.p50 == 50.0);
        CHECK(r.p99 == 99.0);
        CHECK(r.max == 100.0);
        CHECK(r.mean_abs == doctest::Approx(50.5));
    }
    SUBCASE("scaled levels") {
        std::mt19937_64 rng(23);
        FeatureMap a = oracle::random_map(rng, Shape4{1, 3, 4, 4});
        FeatureMap b = a;
        for (double& v : b.values()) v *= 10;
        const auto r = stage_magnitude_profile(FeaturePyramid({b, a}));
        CHECK(std::abs(r[0].mean_abs / r[1].mean_abs - 10.0) < 1e-9);
    }
    SUBCASE("quantiles match a sorted reference") {
        std::mt19937_64 rng(24);
        for (int k = 0; k < 10; ++k) {
            const auto v = oracle::normal_vector(rng, 37 + static_cast<std::size_t>(k));
            for (double q : {0.01, 0.25, 0.5, 0.9, 0.99, 1.0}) CHECK(nearest_rank_quantile(v, q) == oracle::quantile(v, q));
        }
        CHECK_THROWS_AS(nearest_rank_quantile({}, 0.5), ArgumentError);
        CHECK_THROWS_AS(nearest_rank_quantile({1.0}, 0.0), ArgumentError);
    }
}
