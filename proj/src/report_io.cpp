#include "pkd/report_io.hpp"

#include "pkd/errors.hpp"
#include "pkd/fmap_io.hpp"

#include <json.hpp>

#include <cstdio>

namespace pkd {

namespace {

using nlohmann::json;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

json config_json(const ExperimentConfig& c, double alpha) {
    json j;
    j["loss"] = to_string(c.loss);
    j["alpha"] = alpha;
    j["teacher_kind"] = c.teacher_kind == TeacherKind::two_stage ? "two_stage" : "one_stage";
    j["temperature"] = c.temperature;
    j["epsilon"] = c.epsilon;
    j["use_adapter"] = c.use_adapter;
    j["steps"] = c.steps;
    j["batch_size"] = c.batch_size;
    j["eval_batch_size"] = c.eval_batch_size;
    j["input_size"] = c.input_size;
    j["dataset_batches"] = c.dataset_batches;
    j["teacher_stages"] = c.teacher_arch.stage_channels;
    j["student_stages"] = c.student_arch.stage_channels;
    j["lateral_channels"] = c.student_arch.lateral_channels;
    j["seed"] = c.seed;
    j["teacher_seed"] = c.effective_teacher_seed();
    j["student_seed"] = c.effective_student_seed();
    j["data_seed"] = c.effective_data_seed();
    j["lr"] = c.lr;
    j["warmup_steps"] = c.warmup_steps;
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    j["pathology"] = {{"level_scale", c.pathology.level_scale},
                      {"stage_boost", c.pathology.stage_boost},
                      {"noise_std", c.pathology.noise_std}};
    json boosts = json::array();
    for (const auto& [ch, m] : c.pathology.channel_boost) boosts.push_back({{"channel", ch}, {"multiplier", m}});
    j["pathology"]["channel_boost"] = boosts;
    j["pcc_target"] = c.pcc_target;
    return j;
}

json summary_object(const ExperimentReport& r) {
    json j;
    j["label"] = r.label;
    j["alpha"] = r.alpha;
    j["initial_mean_pcc"] = r.summary.initial_mean_pcc;
    j["final_mean_pcc"] = r.summary.final_mean_pcc;
    j["final_level_pcc"] = r.summary.final_level_pcc;
    j["final_l_gt"] = r.summary.final_l_gt;
    j["steps_to_target"] = r.summary.steps_to_target ? json(*r.summary.steps_to_target) : json(nullptr);
    j["diverged"] = r.summary.diverged;
    j["diverged_at"] = r.summary.diverged_at ? json(*r.summary.diverged_at) : json(nullptr);
    j["steps_completed"] = r.records.size();
    j["data_hash"] = r.data_hash;
    j["teacher_hash"] = r.teacher_hash;
    j["wall_seconds"] = r.wall_seconds;
    j["level_names"] = r.level_names;
    return j;
}

} // namespace

std::string report_csv(const ExperimentReport& report) {
    std::string out = "step,l_gt,l_fpn,total,mean_pcc";
    for (const auto& n : report.level_names) out += ",pcc_" + n;
    out += '\n';
    for (const auto& rec : report.records) {
        out += std::to_string(rec.step) + ',' + num(rec.l_gt) + ',' + num(rec.l_fpn) + ',' + num(rec.total) + ',' +
               num(rec.mean_pcc);
        for (double p : rec.level_pcc) out += ',' + num(p);
        out += '\n';
    }
    return out;
}

std::string summary_json(const ExperimentReport& report) {
    json j = summary_object(report);
    j["config"] = config_json(report.config, report.alpha);
    return j.dump(2) + "\n";
}

std::string gnuplot_script(const std::string& csv_name, const ExperimentReport& report) {
    std::string s = "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'step'\n";
    s += "set multiplot layout 2,1\nset ylabel 'loss'\n";
    s += "plot '" + csv_name + "' using 1:2 with lines, '' using 1:3 with lines, '' using 1:4 with lines\n";
    s += "set ylabel 'PCC to teacher'\nplot '" + csv_name + "' using 1:5 with lines lw 2";
    for (std::size_t i = 0; i < report.level_names.size(); ++i)
        s += ", '' using 1:" + std::to_string(6 + i) + " with lines";
    s += "\nunset multiplot\n";
    return s;
}

std::string compare_json(const CompareReport& report) {
    json j;
    j["pkd"] = summary_object(report.pkd);
    j["norm_kl"] = summary_object(report.norm_kl);
    json mse = json::array();
    for (const auto& r : report.mse) mse.push_back(summary_object(r));
    j["mse"] = mse;
    j["best_mse_weight"] = report.best_mse ? json(report.mse[*report.best_mse].alpha) : json(nullptr);
    j["best_mse_final_pcc"] =
        report.best_mse ? json(report.mse[*report.best_mse].summary.final_mean_pcc) : json(nullptr);
    j["config"] = config_json(report.pkd.config, report.pkd.alpha);
    return j.dump(2) + "\n";
}

std::string sweep_csv(const SweepReport& report) {
    std::string out = "alpha,final_mean_pcc,final_l_gt,diverged\n";
    for (const auto& r : report.runs)
        out += num(r.alpha) + ',' + num(r.summary.final_mean_pcc) + ',' + num(r.summary.final_l_gt) + ',' +
               (r.summary.diverged ? "1" : "0") + '\n';
    return out;
}

std::string sweep_json(const SweepReport& report) {
    json j;
    json runs = json::array();
    for (const auto& r : report.runs) runs.push_back(summary_object(r));
    j["runs"] = runs;
    j["pcc_spread"] = report.pcc_spread;
    j["l_gt_spread"] = report.l_gt_spread;
    if (!report.runs.empty()) j["config"] = config_json(report.runs.front().config, report.runs.front().alpha);
    return j.dump(2) + "\n";
}

std::string kl_limit_csv(const std::vector<KlLimitRow>& rows) {
    std::string out = "temperature,gap,gap_times_t\n";
    for (const auto& r : rows) out += num(r.temperature) + ',' + num(r.gap) + ',' + num(r.gap_times_t) + '\n';
    return out;
}

std::string kl_limit_json(const std::vector<KlLimitRow>& rows, std::uint64_t seed, std::size_t samples) {
    json j;
    j["seed"] = seed;
    j["samples"] = samples;
    json arr = json::array();
    for (const auto& r : rows) arr.push_back({{"temperature", r.temperature}, {"gap", r.gap}, {"gap_times_t", r.gap_times_t}});
    j["rows"] = arr;
    return j.dump(2) + "\n";
}

void write_outputs(const std::filesystem::path& dir, const std::vector<OutputFile>& files) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string());
    for (const auto& f : files) write_file_atomic(dir / f.name, f.contents);
}

std::vector<OutputFile> experiment_outputs(const ExperimentReport& report, const std::string& stem) {
    const std::string base = stem.empty() ? "" : stem + "_";
    const std::string csv = base + "curves.csv";
    return {{csv, report_csv(report)},
            {base + "summary.json", summary_json(report)},
            {base + "plot.gp", gnuplot_script(csv, report)}};
}

} // namespace pkd
