#pragma once

// Serialization of experiment results: one CSV row per training step,
// JSON summaries and a gnuplot script for the curves.

#include "pkd/harness.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace pkd {

// Columns: step,l_gt,l_fpn,total,mean_pcc,pcc_<level>...
std::string report_csv(const ExperimentReport& report);
std::string summary_json(const ExperimentReport& report);
std::string gnuplot_script(const std::string& csv_name, const ExperimentReport& report);

std::string compare_json(const CompareReport& report);
std::string sweep_csv(const SweepReport& report);
std::string sweep_json(const SweepReport& report);
std::string kl_limit_csv(const std::vector<KlLimitRow>& rows);
std::string kl_limit_json(const std::vector<KlLimitRow>& rows, std::uint64_t seed, std::size_t samples);

// Files are written only after every payload has been built.
struct OutputFile {
    std::string name;
    std::string contents;
};
void write_outputs(const std::filesystem::path& dir, const std::vector<OutputFile>& files);

std::vector<OutputFile> experiment_outputs(const ExperimentReport& report, const std::string& stem = "");

} // namespace pkd
