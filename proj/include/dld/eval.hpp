// SPDX-License-Identifier: Apache-2.0
//
// Depth-sweep evaluation: token error rate at each fixed depth, executed
// parameters, and speedup (the executed-parameter ratio). Wall-clock time is
// deliberately not the compute proxy.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dld/checkpoint.hpp"
#include "dld/data.hpp"
#include "dld/encoder.hpp"

namespace dld {

// Minimum insertions + deletions + substitutions turning a into b.
std::int64_t edit_distance(std::span<const std::int32_t> a, std::span<const std::int32_t> b);

// Sum of edit distances over the dataset divided by total target length.
// Insertions can push this above 1; it is reported unclipped.
double token_error_rate(const ModelParams& params, const std::vector<SyntheticSample>& samples,
                        const GateVector& gates);
double token_error_rate(const Checkpoint& ckpt, const std::vector<SyntheticSample>& samples,
                        const GateVector& gates);

struct SweepRow {
    std::int64_t n_ds = 0;
    std::string policy;
    double ter = 0.0;
    std::int64_t executed_params = 0;
    double speedup = 1.0;
};

struct SweepReport {
    std::vector<SweepRow> rows;  // sorted by n_ds descending; reference row last
};

double speedup_from_params(std::int64_t full_depth_params, std::int64_t executed_params);

// One row per depth (descending) plus a trailing full-depth reference row.
// `reference` defaults to the swept checkpoint itself.
SweepReport depth_sweep(const Checkpoint& ckpt, const std::vector<SyntheticSample>& samples,
                        const std::vector<std::int64_t>& depths, GatePolicy policy,
                        const Checkpoint* reference = nullptr);

struct EpochSweep {
    std::vector<std::int64_t> depths;
    std::vector<std::int64_t> epochs;
    // ter[depth_idx][epoch_idx]; nullopt marks a missing checkpoint
    std::vector<std::vector<std::optional<double>>> ter;
};

EpochSweep epoch_sweep(const std::map<std::int64_t, Checkpoint>& checkpoints_by_epoch,
                       const std::vector<std::int64_t>& epochs,
                       const std::vector<SyntheticSample>& samples,
                       const std::vector<std::int64_t>& depths, GatePolicy policy);

enum class ReportFormat { Csv, Markdown };

ReportFormat parse_report_format(const std::string& name);

void emit_report(const SweepReport& report, ReportFormat format, const std::filesystem::path& path);
SweepReport parse_sweep_csv(const std::filesystem::path& path);

std::string render_epoch_sweep_markdown(const EpochSweep& sweep);
void emit_epoch_sweep(const EpochSweep& sweep, ReportFormat format, const std::filesystem::path& path);

// Side-by-side comparison of several runs' sweep reports; lowest error per
// row is bolded.
std::string render_comparison_markdown(const std::vector<std::pair<std::string, SweepReport>>& runs);

}  // namespace dld
