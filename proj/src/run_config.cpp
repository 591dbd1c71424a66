#include "pkd/run_config.hpp"

#include "pkd/errors.hpp"
#include "pkd/fmap_io.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

namespace pkd {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key, "expected a number, got '" + v + "'");
    }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& item : split(v, ',')) out.push_back(to_double(key, item));
    return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& item : split(v, ',')) out.push_back(to_uint(key, item));
    return out;
}

std::pair<std::size_t, std::string> split_colon(const std::string& key, const std::string& item) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError(key, "expected 'i:value', got '" + item + "'");
    return {to_uint(key, trim(item.substr(0, colon))), trim(item.substr(colon + 1))};
}

} // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig rc;
    ExperimentConfig& c = rc.experiment_config;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> setters = {
        {"experiment", [&](auto& k, auto& v) {
             if (v != "distill" && v != "compare" && v != "sweep" && v != "kl-limit")
                 throw ConfigError(k, "unknown experiment '" + v + "'");
             rc.experiment = v;
         }},
        {"loss", [&](auto& k, auto& v) {
             try {
                 c.loss = parse_loss_kind(v);
             } catch (const ArgumentError& e) {
                 throw ConfigError(k, e.what());
             }
         }},
        {"alpha", [&](auto& k, auto& v) { c.alpha = to_double(k, v); }},
        {"teacher_kind", [&](auto& k, auto& v) {
             if (v == "one_stage") c.teacher_kind = TeacherKind::one_stage;
             else if (v == "two_stage") c.teacher_kind = TeacherKind::two_stage;
             else throw ConfigError(k, "expected one_stage or two_stage, got '" + v + "'");
         }},
        {"temperature", [&](auto& k, auto& v) { c.temperature = to_double(k, v); }},
        {"epsilon", [&](auto& k, auto& v) { c.epsilon = to_double(k, v); }},
        {"use_adapter", [&](auto& k, auto& v) { c.use_adapter = to_bool(k, v); }},
        {"steps", [&](auto& k, auto& v) { c.steps = to_uint(k, v); }},
        {"batch_size", [&](auto& k, auto& v) { c.batch_size = to_uint(k, v); }},
        {"eval_batch_size", [&](auto& k, auto& v) { c.eval_batch_size = to_uint(k, v); }},
        {"input_size", [&](auto& k, auto& v) { c.input_size = to_uint(k, v); }},
        {"dataset_batches", [&](auto& k, auto& v) { c.dataset_batches = to_uint(k, v); }},
        {"input_channels", [&](auto& k, auto& v) {
             c.teacher_arch.input_channels = c.student_arch.input_channels = to_uint(k, v);
         }},
        {"teacher_stages", [&](auto& k, auto& v) { c.teacher_arch.stage_channels = to_sizes(k, v); }},
        {"student_stages", [&](auto& k, auto& v) { c.student_arch.stage_channels = to_sizes(k, v); }},
        {"teacher_levels", [&](auto& k, auto& v) { c.teacher_arch.levels = to_uint(k, v); }},
        {"student_levels", [&](auto& k, auto& v) { c.student_arch.levels = to_uint(k, v); }},
        {"lateral_channels", [&](auto& k, auto& v) {
             c.teacher_arch.lateral_channels = c.student_arch.lateral_channels = to_uint(k, v);
         }},
        {"pairs", [&](auto& k, auto& v) {
             c.pairs.clear();
             for (const auto& item : split(v, ',')) {
                 auto [s, t] = split_colon(k, item);
                 c.pairs.emplace_back(s, to_uint(k, t));
             }
         }},
        {"seed", [&](auto& k, auto& v) { c.seed = to_uint(k, v); }},
        {"teacher_seed", [&](auto& k, auto& v) { c.teacher_seed = to_uint(k, v); }},
        {"student_seed", [&](auto& k, auto& v) { c.student_seed = to_uint(k, v); }},
        {"data_seed", [&](auto& k, auto& v) { c.data_seed = to_uint(k, v); }},
        {"lr", [&](auto& k, auto& v) { c.lr = to_double(k, v); }},
        {"warmup_steps", [&](auto& k, auto& v) { c.warmup_steps = to_uint(k, v); }},
        {"momentum", [&](auto& k, auto& v) { c.momentum = to_double(k, v); }},
        {"weight_decay", [&](auto& k, auto& v) { c.weight_decay = to_double(k, v); }},
        {"level_scale", [&](auto& k, auto& v) { c.pathology.level_scale = to_doubles(k, v); }},
        {"stage_boost", [&](auto& k, auto& v) { c.pathology.stage_boost = to_doubles(k, v); }},
        {"channel_boost", [&](auto& k, auto& v) {
             c.pathology.channel_boost.clear();
             for (const auto& item : split(v, ',')) {
                 auto [ch, mult] = split_colon(k, item);
                 c.pathology.channel_boost.emplace_back(ch, to_double(k, mult));
             }
         }},
        {"noise_std", [&](auto& k, auto& v) { c.pathology.noise_std = to_double(k, v); }},
        {"pcc_target", [&](auto& k, auto& v) { c.pcc_target = to_double(k, v); }},
        {"mse_weights", [&](auto& k, auto& v) { c.mse_weights = to_doubles(k, v); }},
        {"alphas", [&](auto& k, auto& v) { c.alphas = to_doubles(k, v); }},
        {"temperatures", [&](auto& k, auto& v) { c.temperatures = to_doubles(k, v); }},
        {"kl_samples", [&](auto& k, auto& v) { c.kl_samples = to_uint(k, v); }},
        {"out_dir", [&](auto&, auto& v) { rc.out_dir = v; }},
    };

    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("", "line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError(key, "unknown key (line " + std::to_string(line_no) + ")");
        if (seen.count(key)) throw ConfigError(key, "duplicate key (line " + std::to_string(line_no) + ")");
        if (value.empty()) throw ConfigError(key, "empty value (line " + std::to_string(line_no) + ")");
        seen[key] = line_no;
        it->second(key, value);
    }
    if (rc.experiment.empty()) throw ConfigError("experiment", "required key is missing");
    try {
        c.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError("", e.what());
    }
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_file(path)); }

} // namespace pkd
