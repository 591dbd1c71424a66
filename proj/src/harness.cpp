#include "pkd/harness.hpp"

#include "pkd/errors.hpp"
#include "pkd/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

namespace pkd {

void PathologyConfig::validate() const {
    auto check = [](double v, const char* what) {
        if (!std::isfinite(v) || v < 0.0) throw ArgumentError(std::string(what) + " must be finite and >= 0");
    };
    for (double v : level_scale) check(v, "level_scale");
    for (double v : stage_boost) check(v, "stage_boost");
    for (const auto& [c, v] : channel_boost) check(v, "channel_boost");
    check(noise_std, "noise_std");
}

bool PathologyConfig::is_identity() const {
    auto ones = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return x == 1.0; });
    };
    return ones(level_scale) && ones(stage_boost) && noise_std == 0.0 &&
           std::all_of(channel_boost.begin(), channel_boost.end(), [](const auto& p) { return p.second == 1.0; });
}

FeaturePyramid apply_pathology(const FeaturePyramid& features, const PathologyConfig& pathology,
                               std::uint64_t noise_key) {
    pathology.validate();
    if (pathology.is_identity()) return features;
    Rng rng(mix_seed(pathology.noise_seed, noise_key));
    std::vector<FeatureMap> out;
    for (std::size_t l = 0; l < features.size(); ++l) {
        FeatureMap m = features.level(l);
        double level_mult = 1.0;
        if (l < pathology.level_scale.size()) level_mult *= pathology.level_scale[l];
        if (l < pathology.stage_boost.size()) level_mult *= pathology.stage_boost[l];
        std::vector<double> channel_mult(m.channels(), 1.0);
        for (const auto& [c, v] : pathology.channel_boost)
            if (c < channel_mult.size()) channel_mult[c] *= v;
        for (std::size_t n = 0; n < m.batch(); ++n)
            for (std::size_t c = 0; c < m.channels(); ++c)
                for (std::size_t y = 0; y < m.height(); ++y)
                    for (std::size_t x = 0; x < m.width(); ++x) {
                        double& v = m.at(n, c, y, x);
                        v *= level_mult * channel_mult[c];
                        if (pathology.noise_std > 0.0) v += rng.normal(0.0, pathology.noise_std);
                    }
        out.push_back(std::move(m));
    }
    return FeaturePyramid(std::move(out), features.names());
}

Teacher::Teacher(ToyNet net, PathologyConfig pathology) : net_(std::move(net)), pathology_(std::move(pathology)) {
    pathology_.validate();
}

Teacher::Output Teacher::run(const FeatureMap& inputs, std::uint64_t noise_key) const {
    ForwardResult fr = forward(net_, inputs);
    Output out;
    out.features = apply_pathology(fr.pyramid, pathology_, noise_key);
    out.base_features = std::move(fr.pyramid);
    out.head = std::move(fr.head);
    return out;
}

std::uint64_t Teacher::parameter_hash() const {
    Fnv1a h;
    for (const auto& p : net_.parameters()) h.update(p.value);
    return h.digest();
}

Teacher make_teacher(std::uint64_t seed, const ArchSpec& arch, const PathologyConfig& pathology) {
    return Teacher(ToyNet::init(seed, arch), pathology);
}

double ExperimentConfig::effective_alpha() const {
    if (alpha) return *alpha;
    return teacher_kind == TeacherKind::two_stage ? kAlphaTwoStageTeacher : kAlphaOneStageTeacher;
}

std::uint64_t ExperimentConfig::effective_teacher_seed() const { return teacher_seed.value_or(mix_seed(seed, 1)); }
std::uint64_t ExperimentConfig::effective_student_seed() const { return student_seed.value_or(mix_seed(seed, 2)); }
std::uint64_t ExperimentConfig::effective_data_seed() const { return data_seed.value_or(mix_seed(seed, 3)); }

void ExperimentConfig::validate() const {
    if (alpha && !(*alpha >= 0.0)) throw ArgumentError("alpha must be >= 0");
    if (loss == LossKind::norm_kl && !(temperature > 0.0)) throw ArgumentError("temperature must be > 0");
    if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be > 0");
    if (steps == 0) throw ArgumentError("steps must be >= 1");
    if (batch_size == 0 || eval_batch_size == 0 || dataset_batches == 0)
        throw ArgumentError("batch sizes and dataset_batches must be >= 1");
    if (input_size < 2) throw ArgumentError("input_size must be >= 2");
    if (!(lr >= 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0))
        throw ArgumentError("lr, momentum and weight_decay must be >= 0");
    teacher_arch.validate();
    student_arch.validate();
    if (teacher_arch.input_channels != student_arch.input_channels)
        throw ArgumentError("teacher and student must take the same input channels");
    pathology.validate();
}

std::vector<double> level_pcc(const FeaturePyramid& student, const FeaturePyramid& teacher, double epsilon) {
    if (student.size() != teacher.size()) throw ArgumentError("level_pcc: level counts differ");
    std::vector<double> out(student.size(), 0.0);
    for (std::size_t l = 0; l < student.size(); ++l) {
        const FeatureMap& s = student.level(l);
        const FeatureMap& t = teacher.level(l);
        if (s.shape() != t.shape()) throw AlignmentError(l, "level_pcc needs aligned shapes");
        double sum = 0.0;
        for (std::size_t c = 0; c < s.channels(); ++c) sum += pcc(channel_sample(s, c), channel_sample(t, c), epsilon);
        out[l] = sum / static_cast<double>(s.channels());
    }
    return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

bool all_finite(const Gradients& g) {
    for (const auto& t : g)
        for (double v : t)
            if (!std::isfinite(v)) return false;
    return true;
}

struct PreparedBatch {
    FeatureMap inputs;
    FeaturePyramid targets;
    FeaturePyramid teacher_features;
};

PreparedBatch prepare_batch(const Teacher& teacher, std::uint64_t data_seed, std::uint64_t index,
                            std::size_t batch, std::size_t channels, std::size_t size, Fnv1a& hash) {
    PreparedBatch b;
    b.inputs = synthetic_inputs(data_seed, index, Shape4{batch, channels, size, size});
    Teacher::Output t = teacher.run(b.inputs, index);
    b.targets = std::move(t.head);
    b.teacher_features = std::move(t.features);
    hash.update(b.inputs.values());
    return b;
}

constexpr std::uint64_t kEvalBatchIndex = 1u << 20;

} // namespace

ExperimentReport run_distillation(const ExperimentConfig& cfg, const std::string& label) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    ExperimentReport report;
    report.label = label;
    report.config = cfg;
    report.alpha = cfg.effective_alpha();

    PathologyConfig pathology = cfg.pathology;
    if (pathology.noise_seed == 0) pathology.noise_seed = mix_seed(cfg.seed, 4);
    const Teacher teacher = make_teacher(cfg.effective_teacher_seed(), cfg.teacher_arch, pathology);
    ToyNet student = ToyNet::init(cfg.effective_student_seed(), cfg.student_arch);
    report.teacher_hash = teacher.parameter_hash();

    const std::size_t student_levels = cfg.student_arch.level_count();
    AlignmentPolicy policy;
    if (cfg.pairs.empty()) {
        if (student_levels != cfg.teacher_arch.level_count())
            throw ArgumentError("student and teacher level counts differ; supply explicit level pairs");
        policy = AlignmentPolicy::identity(student_levels);
    } else {
        policy.pairs = cfg.pairs;
    }
    // The ground-truth head of student level k regresses the teacher head of its paired level.
    constexpr auto kUnpaired = static_cast<std::size_t>(-1);
    std::vector<std::size_t> gt_level(student_levels, kUnpaired);
    for (const auto& [si, ti] : policy.pairs) {
        if (si >= student_levels || ti >= cfg.teacher_arch.level_count())
            throw ArgumentError("level pair " + std::to_string(si) + ":" + std::to_string(ti) + " is out of range");
        if (gt_level[si] != kUnpaired)
            throw ArgumentError("student level " + std::to_string(si) + " is paired twice");
        gt_level[si] = ti;
    }
    for (std::size_t k = 0; k < student_levels; ++k)
        if (gt_level[k] == kUnpaired)
            throw ArgumentError("student level " + std::to_string(k) + " has no teacher pair");

    LossConfig loss_cfg;
    loss_cfg.kind = cfg.loss;
    loss_cfg.alpha = report.alpha;
    loss_cfg.temperature = cfg.temperature;
    loss_cfg.epsilon = cfg.epsilon;
    loss_cfg.use_adapter = cfg.use_adapter && cfg.loss == LossKind::masked_mse;
    std::vector<ChannelAdapter> adapters;
    if (loss_cfg.use_adapter) {
        for (std::size_t k = 0; k < policy.pairs.size(); ++k)
            adapters.push_back(ChannelAdapter::random(cfg.student_arch.lateral_channels,
                                                      cfg.teacher_arch.lateral_channels,
                                                      mix_seed(cfg.effective_student_seed(), 100 + k)));
    }

    Fnv1a data_hash;
    const std::uint64_t data_seed = cfg.effective_data_seed();
    const std::size_t in_ch = cfg.student_arch.input_channels;
    std::vector<PreparedBatch> batches;
    batches.reserve(cfg.dataset_batches);
    for (std::size_t i = 0; i < cfg.dataset_batches; ++i)
        batches.push_back(prepare_batch(teacher, data_seed, i, cfg.batch_size, in_ch, cfg.input_size, data_hash));
    PreparedBatch eval =
        prepare_batch(teacher, data_seed, kEvalBatchIndex, cfg.eval_batch_size, in_ch, cfg.input_size, data_hash);
    report.data_hash = data_hash.digest();
    auto select_targets = [&](FeaturePyramid& targets) {
        std::vector<FeatureMap> picked;
        for (std::size_t k = 0; k < student_levels; ++k) picked.push_back(targets.level(gt_level[k]));
        targets = FeaturePyramid(std::move(picked));
    };
    for (auto& b : batches) select_targets(b.targets);
    select_targets(eval.targets);

    auto eval_pcc = [&]() {
        ForwardResult fr = forward(student, eval.inputs);
        AlignedPyramids a = align(fr.pyramid, eval.teacher_features, policy);
        return level_pcc(a.student, a.teacher, cfg.epsilon);
    };

    for (std::size_t k = 0; k < policy.pairs.size(); ++k)
        report.level_names.push_back("P" + std::to_string(policy.pairs[k].first));
    report.summary.initial_mean_pcc = mean_of(eval_pcc());

    const double alpha = report.alpha;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const PreparedBatch& batch = batches[step % batches.size()];
        ForwardResult fr = forward(student, batch.inputs);
        AlignedPyramids aligned = align(fr.pyramid, batch.teacher_features, policy);
        LossResult fpn = compute_loss(aligned.student, aligned.teacher, loss_cfg, adapters);
        FeaturePyramid head_grad;
        const double l_gt = dense_regression_loss(fr.head, batch.targets, &head_grad);
        const double total = total_loss(l_gt, fpn, alpha);

        StepRecord rec;
        rec.step = step;
        rec.l_gt = l_gt;
        rec.l_fpn = fpn.total;
        rec.total = total;
        if (!std::isfinite(total)) {
            report.summary.diverged = true;
            report.summary.diverged_at = step;
            break;
        }
        rec.level_pcc = level_pcc(aligned.student, aligned.teacher, cfg.epsilon);
        rec.mean_pcc = mean_of(rec.level_pcc);
        report.records.push_back(rec);
        if (!report.summary.steps_to_target && rec.mean_pcc >= cfg.pcc_target) report.summary.steps_to_target = step;

        Gradients grads;
        if (alpha > 0.0) {
            FeaturePyramid scaled = fpn.grad;
            for (std::size_t l = 0; l < scaled.size(); ++l)
                for (double& v : scaled.level(l).values()) v *= alpha;
            AlignBackward back = align_backward(aligned, fr.pyramid, scaled);
            grads = backward(student, fr.cache, &back.student_grad, &head_grad);
        } else {
            grads = backward(student, fr.cache, nullptr, &head_grad);
        }
        if (!all_finite(grads)) {
            report.summary.diverged = true;
            report.summary.diverged_at = step;
            break;
        }
        const double lr = step < cfg.warmup_steps
                              ? cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps)
                              : cfg.lr;
        sgd_step(student, grads, lr, cfg.momentum, cfg.weight_decay);
        if (alpha > 0.0) {
            for (std::size_t k = 0; k < adapters.size() && k < fpn.adapter_grads.size(); ++k) {
                auto& a = adapters[k];
                auto wg = fpn.adapter_grads[k].weight_grad;
                auto bg = fpn.adapter_grads[k].bias_grad;
                for (double& v : wg) v *= alpha;
                for (double& v : bg) v *= alpha;
                sgd_update(a.weight, wg, a.weight_velocity, lr, cfg.momentum, cfg.weight_decay);
                sgd_update(a.bias, bg, a.bias_velocity, lr, cfg.momentum, cfg.weight_decay);
            }
        }
    }

    if (report.summary.diverged) {
        report.summary.final_mean_pcc = std::numeric_limits<double>::quiet_NaN();
        report.summary.final_l_gt = std::numeric_limits<double>::quiet_NaN();
    } else {
        const auto final_pcc = eval_pcc();
        report.summary.final_level_pcc = final_pcc;
        report.summary.final_mean_pcc = mean_of(final_pcc);
        ForwardResult fr = forward(student, eval.inputs);
        report.summary.final_l_gt = dense_regression_loss(fr.head, eval.targets, nullptr);
        if (!std::isfinite(report.summary.final_mean_pcc) || !std::isfinite(report.summary.final_l_gt)) {
            report.summary.diverged = true;
            report.summary.diverged_at = cfg.steps;
        }
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

CompareReport compare_losses(const ExperimentConfig& cfg) {
    if (cfg.mse_weights.empty()) throw ArgumentError("compare_losses needs at least one MSE weight");
    CompareReport out;
    ExperimentConfig c = cfg;
    c.loss = LossKind::pkd;
    out.pkd = run_distillation(c, "pkd");
    c.loss = LossKind::norm_kl;
    out.norm_kl = run_distillation(c, "norm-kl");
    c.loss = LossKind::masked_mse;
    for (double w : cfg.mse_weights) {
        c.alpha = w;
        char label[64];
        std::snprintf(label, sizeof label, "mse_w%g", w);
        out.mse.push_back(run_distillation(c, label));
    }
    for (std::size_t i = 0; i < out.mse.size(); ++i) {
        if (out.mse[i].summary.diverged) continue;
        if (!out.best_mse || out.mse[i].summary.final_mean_pcc > out.mse[*out.best_mse].summary.final_mean_pcc)
            out.best_mse = i;
    }
    return out;
}

SweepReport alpha_sweep(const ExperimentConfig& cfg, const std::vector<double>& alphas) {
    if (alphas.empty()) throw ArgumentError("alpha_sweep needs a non-empty alpha list");
    SweepReport out;
    double pcc_lo = std::numeric_limits<double>::infinity(), pcc_hi = -pcc_lo;
    double gt_lo = pcc_lo, gt_hi = -pcc_lo;
    for (double a : alphas) {
        ExperimentConfig c = cfg;
        c.alpha = a;
        char label[64];
        std::snprintf(label, sizeof label, "alpha_%g", a);
        out.runs.push_back(run_distillation(c, label));
        const auto& s = out.runs.back().summary;
        if (s.diverged) {
            pcc_lo = gt_lo = -std::numeric_limits<double>::infinity();
            continue;
        }
        pcc_lo = std::min(pcc_lo, s.final_mean_pcc);
        pcc_hi = std::max(pcc_hi, s.final_mean_pcc);
        gt_lo = std::min(gt_lo, s.final_l_gt);
        gt_hi = std::max(gt_hi, s.final_l_gt);
    }
    out.pcc_spread = pcc_hi - pcc_lo;
    out.l_gt_spread = gt_hi - gt_lo;
    return out;
}

std::vector<KlLimitRow> kl_limit_check(const std::vector<double>& temperatures, const ChannelSample& s,
                                       const ChannelSample& t, double epsilon) {
    if (temperatures.empty()) throw ArgumentError("kl_limit_check needs temperatures");
    for (std::size_t i = 0; i < temperatures.size(); ++i) {
        if (!(temperatures[i] > 0.0)) throw ArgumentError("temperatures must be > 0");
        if (i > 0 && !(temperatures[i] > temperatures[i - 1]))
            throw ArgumentError("temperatures must be sorted ascending");
    }
    const ChannelSample s_hat = normalize(s, epsilon);
    const ChannelSample t_hat = normalize(t, epsilon);
    const double inv_m = 1.0 / static_cast<double>(s_hat.size());
    std::vector<KlLimitRow> rows;
    for (double temp : temperatures) {
        const auto g = norm_kl_grad_normalized(s_hat.values, t_hat.values, temp);
        double gap = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i)
            gap = std::max(gap, std::abs(g[i] - inv_m * (s_hat.values[i] - t_hat.values[i])));
        rows.push_back({temp, gap, gap * temp});
    }
    return rows;
}

std::vector<KlLimitRow> kl_limit_check(const std::vector<double>& temperatures, std::uint64_t seed,
                                       std::size_t samples) {
    if (samples < 2) throw ArgumentError("kl_limit_check needs at least 2 samples");
    Rng rng(seed);
    std::vector<double> s(samples), t(samples);
    rng.fill_normal(s);
    rng.fill_normal(t);
    return kl_limit_check(temperatures, make_sample(std::move(s)), make_sample(std::move(t)));
}

} // namespace pkd
