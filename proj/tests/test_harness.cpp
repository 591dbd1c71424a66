#include "oracles.hpp"

#include "pkd/analysis.hpp"
#include "pkd/errors.hpp"
#include "pkd/harness.hpp"
#include "pkd/report_io.hpp"

#include <doctest.h>

#include <cmath>

using namespace pkd;

namespace {

// Small and fast; not meant to converge.
ExperimentConfig quick(std::size_t steps = 20) {
    ExperimentConfig c;
    c.steps = steps;
    c.batch_size = 2;
    c.eval_batch_size = 2;
    c.input_size = 16;
    c.dataset_batches = 2;
    c.warmup_steps = 5;
    c.teacher_arch.stage_channels = {4, 8, 8};
    c.student_arch.stage_channels = {4, 8, 8};
    return c;
}

double mean_abs(const FeatureMap& m) {
    double s = 0;
    for (double v : m.values()) s += std::abs(v);
    return s / static_cast<double>(m.size());
}

} // namespace

TEST_CASE("teacher pathology") {
    const ArchSpec arch;
    const FeatureMap x = synthetic_inputs(1, 0, Shape4{2, 3, 32, 32});

    SUBCASE("identity transform") {
        PathologyConfig p;
        p.level_scale = {1, 1, 1};
        CHECK(p.is_identity());
        const auto out = make_teacher(3, arch, p).run(x, 0);
        CHECK(out.features == out.base_features);
    }
    SUBCASE("level multiplier scales magnitude") {
        PathologyConfig p;
        p.level_scale = {10, 1, 0.1};
        const auto out = make_teacher(3, arch, p).run(x, 0);
        CHECK(mean_abs(out.features.level(0)) / mean_abs(out.base_features.level(0)) == doctest::Approx(10.0));
        CHECK(mean_abs(out.features.level(2)) / mean_abs(out.base_features.level(2)) == doctest::Approx(0.1));
        CHECK(out.features.level(1) == out.base_features.level(1));
    }
    SUBCASE("boosted channel dominates") {
        PathologyConfig p;
        p.channel_boost = {{5, 100.0}};
        const auto out = make_teacher(3, arch, p).run(x, 0);
        CHECK(dominant_channels(out.features.level(0)).ranked.front() == 5);
    }
    SUBCASE("noise is keyed and deterministic") {
        PathologyConfig p;
        p.noise_std = 0.5;
        p.noise_seed = 9;
        const Teacher t = make_teacher(3, arch, p);
        CHECK(t.run(x, 4).features == t.run(x, 4).features);
        CHECK(!(t.run(x, 4).features == t.run(x, 5).features));
    }
    SUBCASE("invalid multipliers") {
        PathologyConfig p;
        p.level_scale = {-1};
        CHECK_THROWS_AS(p.validate(), ArgumentError);
        p.level_scale = {std::nan("")};
        CHECK_THROWS_AS(p.validate(), ArgumentError);
    }
}

TEST_CASE("experiment config") {
    ExperimentConfig c;
    CHECK(c.effective_alpha() == kAlphaOneStageTeacher);
    c.teacher_kind = TeacherKind::two_stage;
    CHECK(c.effective_alpha() == kAlphaTwoStageTeacher);
    c.alpha = 3.0;
    CHECK(c.effective_alpha() == 3.0);
    c.steps = 0;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("run_distillation") {
    SUBCASE("records and summary") {
        const auto r = run_distillation(quick(), "t");
        CHECK(r.records.size() == 20);
        for (std::size_t i = 0; i < r.records.size(); ++i) {
            CHECK(r.records[i].step == i);
            CHECK(std::isfinite(r.records[i].total));
            CHECK(r.records[i].level_pcc.size() == 3);
        }
        CHECK(!r.summary.diverged);
        CHECK(r.level_names == std::vector<std::string>{"P0", "P1", "P2"});
    }
    SUBCASE("deterministic reports") {
        const auto a = run_distillation(quick(), "t");
        const auto b = run_distillation(quick(), "t");
        CHECK(report_csv(a) == report_csv(b));
        CHECK(a.data_hash == b.data_hash);
        CHECK(a.teacher_hash == b.teacher_hash);
    }
    SUBCASE("training improves correlation") {
        ExperimentConfig c = quick(150);
        const auto r = run_distillation(c, "t");
        CHECK(r.summary.final_mean_pcc > r.summary.initial_mean_pcc + 0.2);
    }
    SUBCASE("alpha zero removes the distillation signal") {
        ExperimentConfig c = quick(60);
        c.alpha = 0.0;
        const auto pkd_run = run_distillation(c, "a");
        c.loss = LossKind::masked_mse;
        const auto mse_run = run_distillation(c, "b");
        c.loss = LossKind::norm_kl;
        const auto kl_run = run_distillation(c, "c");
        CHECK(pkd_run.summary.final_mean_pcc == mse_run.summary.final_mean_pcc);
        CHECK(pkd_run.summary.final_mean_pcc == kl_run.summary.final_mean_pcc);
        c.loss = LossKind::pkd;
        c.alpha = 10.0;
        CHECK(run_distillation(c, "d").summary.final_mean_pcc > pkd_run.summary.final_mean_pcc + 0.1);
    }
    SUBCASE("divergence is reported") {
        ExperimentConfig c = quick(50);
        c.loss = LossKind::masked_mse;
        c.alpha = 1e6;
        c.warmup_steps = 0;
        const auto r = run_distillation(c, "boom");
        CHECK(r.summary.diverged);
        REQUIRE(r.summary.diverged_at.has_value());
        CHECK(*r.summary.diverged_at < 50);
        CHECK(r.records.size() == *r.summary.diverged_at);
    }
    SUBCASE("explicit level pairs") {
        ExperimentConfig c = quick(5);
        c.student_arch.levels = 2;
        CHECK_THROWS_AS(run_distillation(c), ArgumentError);
        c.pairs = {{0, 1}, {1, 2}};
        const auto r = run_distillation(c);
        CHECK(r.records.back().level_pcc.size() == 2);
    }
}

TEST_CASE("compare and sweep share data") {
    ExperimentConfig c = quick(10);
    c.mse_weights = {1, 10};
    const auto cmp = compare_losses(c);
    CHECK(cmp.mse.size() == 2);
    CHECK(cmp.pkd.data_hash == cmp.norm_kl.data_hash);
    for (const auto& m : cmp.mse) CHECK(m.data_hash == cmp.pkd.data_hash);
    CHECK(cmp.mse[1].alpha == 10.0);
    CHECK(cmp.pkd.label == "pkd");

    const auto sw = alpha_sweep(c, {4.0});
    REQUIRE(sw.runs.size() == 1);
    CHECK(sw.pcc_spread == 0.0);
    ExperimentConfig single = c;
    single.alpha = 4.0;
    CHECK(report_csv(sw.runs[0]) == report_csv(run_distillation(single, sw.runs[0].label)));
    CHECK_THROWS_AS(alpha_sweep(c, {}), ArgumentError);
}

TEST_CASE("kl limit check") {
    const auto rows = kl_limit_check({10, 50, 100}, 7, 256);
    REQUIRE(rows.size() == 3);
    CHECK(rows[2].gap < rows[0].gap);
    CHECK(rows[1].gap < rows[0].gap);
    for (const auto& r : rows) CHECK(r.gap_times_t == doctest::Approx(r.gap * r.temperature));

    std::mt19937_64 rng(3);
    const auto s = make_sample(oracle::normal_vector(rng, 64));
    for (const auto& r : kl_limit_check({1, 10}, s, s)) CHECK(r.gap == 0.0);
    CHECK_THROWS_AS(kl_limit_check({50, 10}, 1, 64), ArgumentError);
    CHECK_THROWS_AS(kl_limit_check({0, 10}, 1, 64), ArgumentError);
}
