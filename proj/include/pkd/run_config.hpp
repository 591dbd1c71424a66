#pragma once

// Flat "key = value" experiment configuration. '#' starts a comment; list
// values are comma separated; pairs are written "i:j".
//
//   experiment       distill | compare | sweep | kl-limit     (required)
//   loss             pkd | mse | norm-kl
//   alpha            distillation weight; default from teacher_kind
//   teacher_kind     one_stage (alpha 10) | two_stage (alpha 6)
//   temperature, epsilon, use_adapter
//   steps, batch_size, eval_batch_size, input_size, dataset_batches
//   input_channels, teacher_stages, student_stages, teacher_levels,
//   student_levels, lateral_channels, pairs
//   seed, teacher_seed, student_seed, data_seed
//   lr, warmup_steps, momentum, weight_decay
//   level_scale, stage_boost, channel_boost (c:mult list), noise_std
//   pcc_target, mse_weights, alphas, temperatures, kl_samples
//   out_dir

#include "pkd/harness.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace pkd {

struct RunConfig {
    std::string experiment;
    ExperimentConfig experiment_config;
    std::optional<std::filesystem::path> out_dir;
};

// Throws ConfigError naming the offending key (unknown, malformed, missing).
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

} // namespace pkd
