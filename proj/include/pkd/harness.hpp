#pragma once

// Teacher-student distillation experiments on ToyNet pairs: a frozen teacher
// whose features carry injected magnitude pathologies, a student trained on
// L_GT + alpha * L_FPN, and sweeps/comparisons built on top.

#include "pkd/align.hpp"
#include "pkd/losses.hpp"
#include "pkd/toynet.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pkd {

// Post-hoc transform of teacher features:
//   f[l, c] * level_scale[l] * stage_boost[l] * channel_boost[c] + N(0, noise_std)
// Missing entries mean a multiplier of 1.
struct PathologyConfig {
    std::vector<double> level_scale;
    std::vector<double> stage_boost;
    std::vector<std::pair<std::size_t, double>> channel_boost;
    double noise_std = 0.0;
    std::uint64_t noise_seed = 0;

    void validate() const;
    bool is_identity() const;
};

// noise_key selects the noise draw so the same batch always gets the same noise.
FeaturePyramid apply_pathology(const FeaturePyramid& features, const PathologyConfig& pathology,
                               std::uint64_t noise_key);

class Teacher {
public:
    Teacher(ToyNet net, PathologyConfig pathology);

    const ToyNet& net() const { return net_; }
    const PathologyConfig& pathology() const { return pathology_; }

    // Transformed pyramid plus the untransformed head outputs.
    struct Output {
        FeaturePyramid features;
        FeaturePyramid base_features;
        FeaturePyramid head;
    };
    Output run(const FeatureMap& inputs, std::uint64_t noise_key) const;

    // Fingerprint of the frozen parameters.
    std::uint64_t parameter_hash() const;

private:
    ToyNet net_;
    PathologyConfig pathology_;
};

Teacher make_teacher(std::uint64_t seed, const ArchSpec& arch, const PathologyConfig& pathology);

enum class TeacherKind { one_stage, two_stage };

struct ExperimentConfig {
    LossKind loss = LossKind::pkd;
    std::optional<double> alpha; // default from teacher_kind
    TeacherKind teacher_kind = TeacherKind::one_stage;
    double temperature = 50.0;
    double epsilon = kDefaultEpsilon;
    bool use_adapter = false;

    std::size_t steps = 500;
    std::size_t batch_size = 8;
    std::size_t eval_batch_size = 8;
    std::size_t input_size = 32;
    std::size_t dataset_batches = 16;
    ArchSpec teacher_arch{3, {8, 16, 16}, 0, 8};
    ArchSpec student_arch{3, {16, 32, 32}, 0, 8};
    std::vector<std::pair<std::size_t, std::size_t>> pairs; // empty: identity

    std::uint64_t seed = 1;
    std::optional<std::uint64_t> teacher_seed;
    std::optional<std::uint64_t> student_seed;
    std::optional<std::uint64_t> data_seed;

    double lr = 0.03;
    // Linear learning-rate ramp over the first warmup_steps steps (0 disables).
    std::size_t warmup_steps = 100;
    double momentum = 0.9;
    double weight_decay = 1e-4;

    PathologyConfig pathology;
    double pcc_target = 0.8;

    std::vector<double> mse_weights{0.1, 1, 5, 10, 20, 50, 70};
    std::vector<double> alphas{3, 5, 8, 10, 13};
    std::vector<double> temperatures{10, 50, 100};
    std::size_t kl_samples = 256;

    double effective_alpha() const;
    std::uint64_t effective_teacher_seed() const;
    std::uint64_t effective_student_seed() const;
    std::uint64_t effective_data_seed() const;
    void validate() const;
};

struct StepRecord {
    std::size_t step = 0;
    double l_gt = 0.0;
    double l_fpn = 0.0;
    double total = 0.0;
    std::vector<double> level_pcc; // mean channel PCC per aligned level
    double mean_pcc = 0.0;
};

struct ExperimentSummary {
    double initial_mean_pcc = 0.0;
    double final_mean_pcc = 0.0;
    std::vector<double> final_level_pcc;
    double final_l_gt = 0.0;
    std::optional<std::size_t> steps_to_target; // first step with mean_pcc >= pcc_target
    bool diverged = false;
    std::optional<std::size_t> diverged_at;
};

struct ExperimentReport {
    std::string label;
    ExperimentConfig config;
    double alpha = 0.0;
    std::vector<std::string> level_names;
    std::vector<StepRecord> records;
    ExperimentSummary summary;
    std::uint64_t data_hash = 0;    // every training/eval batch consumed
    std::uint64_t teacher_hash = 0; // frozen teacher parameters
    double wall_seconds = 0.0;
};

// Mean over channels of pcc(student, teacher) per level on aligned pyramids.
std::vector<double> level_pcc(const FeaturePyramid& student, const FeaturePyramid& teacher,
                              double epsilon = kDefaultEpsilon);

ExperimentReport run_distillation(const ExperimentConfig& cfg, const std::string& label = "run");

struct CompareReport {
    ExperimentReport pkd;
    ExperimentReport norm_kl;
    std::vector<ExperimentReport> mse; // one per weight in cfg.mse_weights
    std::optional<std::size_t> best_mse; // highest final PCC among non-diverged arms
};

CompareReport compare_losses(const ExperimentConfig& cfg);

struct SweepReport {
    std::vector<ExperimentReport> runs; // one per alpha
    double pcc_spread = 0.0;
    double l_gt_spread = 0.0;
};

SweepReport alpha_sweep(const ExperimentConfig& cfg, const std::vector<double>& alphas);

struct KlLimitRow {
    double temperature = 0.0;
    double gap = 0.0; // max |T (q - p) - (s_hat - t_hat) / m|
    double gap_times_t = 0.0;
};

// Seeded standard-normal s and t, standardized, evaluated at each temperature.
std::vector<KlLimitRow> kl_limit_check(const std::vector<double>& temperatures, std::uint64_t seed,
                                       std::size_t samples = 256);
std::vector<KlLimitRow> kl_limit_check(const std::vector<double>& temperatures,
                                       const ChannelSample& s, const ChannelSample& t,
                                       double epsilon = kDefaultEpsilon);

} // namespace pkd
