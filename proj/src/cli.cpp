#include "pkd/cli.hpp"

#include "pkd/align.hpp"
#include "pkd/analysis.hpp"
#include "pkd/errors.hpp"
#include "pkd/fmap_io.hpp"
#include "pkd/gradcheck.hpp"
#include "pkd/harness.hpp"
#include "pkd/losses.hpp"
#include "pkd/random.hpp"
#include "pkd/report_io.hpp"
#include "pkd/run_config.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>

namespace pkd {

namespace {

using nlohmann::json;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::vector<std::pair<std::size_t, std::size_t>> parse_pairs(const std::vector<std::string>& specs) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& s : specs) {
        const auto colon = s.find(':');
        try {
            if (colon == std::string::npos) throw std::invalid_argument(s);
            std::size_t used = 0;
            const auto a = std::stoul(s.substr(0, colon), &used);
            if (used != colon) throw std::invalid_argument(s);
            const auto rest = s.substr(colon + 1);
            const auto b = std::stoul(rest, &used);
            if (used != rest.size()) throw std::invalid_argument(s);
            out.emplace_back(a, b);
        } catch (const std::exception&) {
            throw ArgumentError("--pair expects i:j, got '" + s + "'");
        }
    }
    return out;
}

Shape4 parse_sizes(const std::string& spec) {
    std::vector<std::size_t> dims;
    std::size_t start = 0;
    while (start <= spec.size()) {
        const auto comma = spec.find(',', start);
        const auto item = spec.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        try {
            std::size_t used = 0;
            if (item.empty() || item[0] == '-') throw std::invalid_argument(item);
            dims.push_back(std::stoul(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ArgumentError("--sizes expects b,c,h,w, got '" + spec + "'");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (dims.size() != 4) throw ArgumentError("--sizes expects four values b,c,h,w, got '" + spec + "'");
    for (auto d : dims)
        if (d == 0) throw ArgumentError("--sizes values must be >= 1");
    Shape4 s{dims[0], dims[1], dims[2], dims[3]};
    if (s.per_channel() < 2) throw ArgumentError("--sizes needs b*h*w >= 2 (got " + std::to_string(s.per_channel()) + ")");
    return s;
}

// ---- stats ----------------------------------------------------------------

struct StatsArgs {
    std::string input;
    std::string out_dir;
    std::size_t batch = 0;
    bool pattern_csv = false;
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
    const FeaturePyramid pyr = read_fmap(a.input);
    const auto summary = pyramid_summary(pyr);
    const auto profile = stage_magnitude_profile(pyr);
    const auto patterns = activation_patterns(pyr, a.batch);

    std::vector<OutputFile> files;
    std::string csv = "level,min,max,mean,std,abs_mean,p50_abs,p99_abs,max_abs\n";
    for (std::size_t l = 0; l < pyr.size(); ++l) {
        const auto& s = summary[l];
        const auto& p = profile[l];
        csv += pyr.name(l) + ',' + num(s.min) + ',' + num(s.max) + ',' + num(s.mean) + ',' + num(s.std) + ',' +
               num(s.abs_mean) + ',' + num(p.p50) + ',' + num(p.p99) + ',' + num(p.max) + '\n';
    }
    files.push_back({"profile.csv", csv});
    for (std::size_t l = 0; l < pyr.size(); ++l) {
        const auto rep = dominant_channels(pyr.level(l), pyr.name(l));
        std::string d = "rank,channel,count\n";
        for (std::size_t r = 0; r < rep.ranked.size(); ++r)
            d += std::to_string(r) + ',' + std::to_string(rep.ranked[r]) + ',' +
                 std::to_string(rep.counts[rep.ranked[r]]) + '\n';
        files.push_back({"dominant_" + pyr.name(l) + ".csv", d});
    }
    for (const auto& level : patterns.levels) {
        files.push_back({"pattern_" + level.name + ".pgm", encode_pgm(level.width, level.height, level.pixels)});
        if (a.pattern_csv) {
            std::string p;
            for (std::size_t y = 0; y < level.height; ++y) {
                for (std::size_t x = 0; x < level.width; ++x) {
                    if (x) p += ',';
                    p += std::to_string(level.pixels[y * level.width + x]);
                }
                p += '\n';
            }
            files.push_back({"pattern_" + level.name + ".csv", p});
        }
    }
    write_outputs(a.out_dir, files);
    out << "stats: " << pyr.size() << " levels, wrote " << files.size() << " files to " << a.out_dir << "\n";
    return kExitOk;
}

// ---- loss -----------------------------------------------------------------

struct LossArgs {
    std::string student;
    std::string teacher;
    std::string loss = "pkd";
    std::optional<double> alpha;
    std::optional<double> temperature;
    std::string mask;
    std::vector<std::string> pairs;
    bool adapter = false;
    std::uint64_t seed = 0;
    std::string grad_out;
};

int cmd_loss(const LossArgs& a, std::ostream& out) {
    LossConfig cfg;
    cfg.kind = parse_loss_kind(a.loss);
    if (cfg.kind == LossKind::norm_kl) {
        if (!a.temperature) throw ArgumentError("--loss norm-kl requires --temperature");
        cfg.temperature = *a.temperature;
    }
    if (a.alpha) cfg.alpha = *a.alpha;
    cfg.validate();

    const FeaturePyramid student = read_fmap(a.student);
    const FeaturePyramid teacher = read_fmap(a.teacher);

    AlignmentPolicy policy;
    if (a.pairs.empty()) {
        if (student.size() != teacher.size())
            throw AlignmentError(std::min(student.size(), teacher.size()),
                                 "student has " + std::to_string(student.size()) + " levels, teacher has " +
                                     std::to_string(teacher.size()) + "; pass --pair");
        policy = AlignmentPolicy::identity(student.size());
    } else {
        policy.pairs = parse_pairs(a.pairs);
    }
    std::vector<ChannelAdapter> adapters;
    if (a.adapter) {
        policy.channel_rule = ChannelRule::adapter;
        for (std::size_t k = 0; k < policy.pairs.size(); ++k) {
            const auto [si, ti] = policy.pairs[k];
            if (si >= student.size() || ti >= teacher.size())
                throw AlignmentError(k, "pair " + std::to_string(si) + ":" + std::to_string(ti) + " is out of range");
            adapters.push_back(ChannelAdapter::random(student.level(si).channels(), teacher.level(ti).channels(),
                                                      mix_seed(a.seed, k)));
        }
    }
    const AlignedPyramids aligned = align(student, teacher, policy, adapters);
    if (!a.mask.empty()) {
        const FeaturePyramid mask = read_fmap(a.mask);
        cfg.mask = mask.levels();
    }
    const LossResult r = compute_loss(aligned.student, aligned.teacher, cfg);

    json j;
    j["loss"] = to_string(cfg.kind);
    j["total"] = r.total;
    if (a.alpha) {
        j["alpha"] = *a.alpha;
        j["weighted_total"] = *a.alpha * r.total;
    }
    json levels = json::array();
    for (std::size_t l = 0; l < r.per_level.size(); ++l) {
        const auto& pc = r.per_channel[l];
        double mean = 0.0;
        for (double v : pc) mean += v;
        mean /= static_cast<double>(pc.size());
        levels.push_back({{"student_level", aligned.student.name(l)},
                          {"teacher_level", aligned.teacher.name(l)},
                          {"loss", r.per_level[l]},
                          {"channels", pc.size()},
                          {"channel_min", *std::min_element(pc.begin(), pc.end())},
                          {"channel_max", *std::max_element(pc.begin(), pc.end())},
                          {"channel_mean", mean}});
    }
    j["per_level"] = levels;

    if (!a.grad_out.empty()) {
        const AlignBackward back = align_backward(aligned, student, r.grad, adapters);
        write_fmap(a.grad_out, back.student_grad);
        j["grad_out"] = a.grad_out;
    }
    out << j.dump(2) << "\n";
    return kExitOk;
}

// ---- gradcheck --------------------------------------------------------------

struct GradcheckArgs {
    std::string loss = "all";
    std::string sizes = "2,4,4,4";
    std::uint64_t seed = 0;
    double temperature = 2.0;
    bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
    const Shape4 shape = parse_sizes(a.sizes);
    std::vector<std::string> kinds;
    if (a.loss == "all") kinds = {"pkd", "mse", "mse-adapter", "norm-kl"};
    else if (a.loss == "mse") kinds = {"mse", "mse-adapter"};
    else kinds = {to_string(parse_loss_kind(a.loss))};
    const auto rows = gradcheck_losses(shape, a.seed, a.temperature, kinds, a.corrupt);
    bool ok = true;
    char line[128];
    std::snprintf(line, sizeof line, "%-12s %-14s %s\n", "loss", "max_rel_error", "result");
    out << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-12s %-14.3e %s\n", r.name.c_str(), r.max_rel_error, r.pass ? "PASS" : "FAIL");
        out << line;
        ok = ok && r.pass;
    }
    out << "tolerance " << kGradcheckTolerance << ", sizes " << to_string(shape) << "\n";
    return ok ? kExitOk : kExitCheckFailed;
}

// ---- experiments ------------------------------------------------------------

struct ExperimentArgs {
    std::string config;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
};

RunConfig load_for(const ExperimentArgs& a, const std::string& experiment, std::filesystem::path& out_dir) {
    RunConfig rc = load_run_config(a.config);
    if (rc.experiment != experiment)
        throw ConfigError("experiment", "config is for '" + rc.experiment + "', not '" + experiment + "'");
    if (a.seed) rc.experiment_config.seed = *a.seed;
    if (!a.out_dir.empty()) out_dir = a.out_dir;
    else if (rc.out_dir) out_dir = *rc.out_dir;
    else throw ConfigError("out_dir", "no output directory: set out_dir or pass --out");
    return rc;
}

std::string summary_line(const ExperimentReport& r) {
    std::string s = r.label + ": loss=" + to_string(r.config.loss) + " alpha=" + num(r.alpha) +
                    " steps=" + std::to_string(r.records.size());
    if (r.summary.diverged) return s + " DIVERGED at step " + std::to_string(r.summary.diverged_at.value_or(0));
    s += " final_mean_pcc=" + num(r.summary.final_mean_pcc) + " final_l_gt=" + num(r.summary.final_l_gt);
    s += " steps_to_pcc_" + num(r.config.pcc_target) + "=" +
         (r.summary.steps_to_target ? std::to_string(*r.summary.steps_to_target) : std::string("never"));
    return s;
}

int cmd_distill(const ExperimentArgs& a, std::ostream& out) {
    std::filesystem::path dir;
    const RunConfig rc = load_for(a, "distill", dir);
    const ExperimentReport r = run_distillation(rc.experiment_config, "distill");
    write_outputs(dir, experiment_outputs(r));
    out << summary_line(r) << "\n";
    return r.summary.diverged ? kExitDiverged : kExitOk;
}

int cmd_compare(const ExperimentArgs& a, std::ostream& out) {
    std::filesystem::path dir;
    const RunConfig rc = load_for(a, "compare", dir);
    const CompareReport r = compare_losses(rc.experiment_config);
    std::vector<OutputFile> files{{"compare.json", compare_json(r)}};
    auto add = [&](const ExperimentReport& e) {
        for (auto& f : experiment_outputs(e, e.label)) files.push_back(std::move(f));
        out << summary_line(e) << "\n";
    };
    add(r.pkd);
    add(r.norm_kl);
    for (const auto& m : r.mse) add(m);
    write_outputs(dir, files);
    if (r.best_mse)
        out << "best mse weight " << num(r.mse[*r.best_mse].alpha) << " final_mean_pcc "
            << num(r.mse[*r.best_mse].summary.final_mean_pcc) << "\n";
    else
        out << "every mse arm diverged\n";
    return r.pkd.summary.diverged || r.norm_kl.summary.diverged ? kExitDiverged : kExitOk;
}

int cmd_sweep(const ExperimentArgs& a, std::ostream& out) {
    std::filesystem::path dir;
    const RunConfig rc = load_for(a, "sweep", dir);
    const SweepReport r = alpha_sweep(rc.experiment_config, rc.experiment_config.alphas);
    std::vector<OutputFile> files{{"sweep.csv", sweep_csv(r)}, {"sweep.json", sweep_json(r)}};
    bool diverged = false;
    for (const auto& e : r.runs) {
        for (auto& f : experiment_outputs(e, e.label)) files.push_back(std::move(f));
        out << summary_line(e) << "\n";
        diverged = diverged || e.summary.diverged;
    }
    write_outputs(dir, files);
    out << "sweep: pcc_spread=" << num(r.pcc_spread) << " l_gt_spread=" << num(r.l_gt_spread) << "\n";
    return diverged ? kExitDiverged : kExitOk;
}

int cmd_kl_limit(const ExperimentArgs& a, std::ostream& out) {
    std::filesystem::path dir;
    const RunConfig rc = load_for(a, "kl-limit", dir);
    const auto& c = rc.experiment_config;
    const auto rows = kl_limit_check(c.temperatures, c.seed, c.kl_samples);
    write_outputs(dir, {{"kl_limit.csv", kl_limit_csv(rows)}, {"kl_limit.json", kl_limit_json(rows, c.seed, c.kl_samples)}});
    for (const auto& r : rows)
        out << "T=" << num(r.temperature) << " gap=" << num(r.gap) << " gap*T=" << num(r.gap_times_t) << "\n";
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pearson-correlation feature distillation toolkit", "pkd"};
    app.require_subcommand(1);

    StatsArgs stats;
    auto* s = app.add_subcommand("stats", "Feature statistics, dominant channels and activation maps of an FMP1 dump");
    s->add_option("input", stats.input, "FMP1 feature file")->required();
    s->add_option("--out", stats.out_dir, "Output directory")->required();
    s->add_option("--batch", stats.batch, "Batch element for activation maps");
    s->add_flag("--pattern-csv", stats.pattern_csv, "Also write activation maps as CSV");

    LossArgs loss;
    auto* l = app.add_subcommand("loss", "Evaluate a distillation loss between two FMP1 dumps");
    l->add_option("student", loss.student, "Student FMP1 file")->required();
    l->add_option("teacher", loss.teacher, "Teacher FMP1 file")->required();
    l->add_option("--loss", loss.loss, "pkd | mse | norm-kl");
    l->add_option("--alpha", loss.alpha, "Distillation weight (reported as weighted_total)");
    l->add_option("--temperature", loss.temperature, "Softmax temperature (norm-kl)");
    l->add_option("--mask", loss.mask, "FMP1 mask pyramid for mse");
    l->add_option("--pair", loss.pairs, "Level pairing i:j (repeatable)");
    l->add_flag("--adapter", loss.adapter, "Pass the student through a seeded 1x1 channel adapter");
    l->add_option("--seed", loss.seed, "Adapter initialization seed");
    l->add_option("--grad-out", loss.grad_out, "Write d loss / d student as FMP1");

    GradcheckArgs gc;
    auto* g = app.add_subcommand("gradcheck", "Finite-difference check of the analytic loss gradients");
    g->add_option("--loss", gc.loss, "all | pkd | mse | norm-kl");
    g->add_option("--sizes", gc.sizes, "b,c,h,w");
    g->add_option("--seed", gc.seed, "Input seed");
    g->add_option("--temperature", gc.temperature, "Temperature for norm-kl");
    g->add_flag("--corrupt", gc.corrupt, "Debug: perturb the analytic gradient (must fail)");

    ExperimentArgs exp;
    auto add_experiment = [&](const char* name, const char* help) {
        auto* c = app.add_subcommand(name, help);
        c->add_option("--config", exp.config, "Run configuration file")->required();
        c->add_option("--out", exp.out_dir, "Output directory (overrides out_dir)");
        c->add_option("--seed", exp.seed, "Base seed (overrides seed)");
        return c;
    };
    auto* d = add_experiment("distill", "Train a student against a frozen teacher");
    auto* cmp = add_experiment("compare", "Compare pkd, norm-kl and an mse weight grid");
    auto* sw = add_experiment("sweep", "Sweep the distillation weight alpha");
    auto* kl = add_experiment("kl-limit", "High-temperature gap between norm-kl and normalized MSE gradients");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitBadInput;
    }

    try {
        if (s->parsed()) return cmd_stats(stats, out);
        if (l->parsed()) return cmd_loss(loss, out);
        if (g->parsed()) return cmd_gradcheck(gc, out);
        if (d->parsed()) return cmd_distill(exp, out);
        if (cmp->parsed()) return cmd_compare(exp, out);
        if (sw->parsed()) return cmd_sweep(exp, out);
        if (kl->parsed()) return cmd_kl_limit(exp, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitBadInput;
    }
    return kExitBadInput;
}

} // namespace pkd
