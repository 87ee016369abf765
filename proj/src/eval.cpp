// SPDX-License-Identifier: Apache-2.0
#include "dld/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dld/errors.hpp"
#include "dld/losses.hpp"

namespace dld {

std::int64_t edit_distance(std::span<const std::int32_t> a, std::span<const std::int32_t> b) {
    const std::size_t m = a.size(), n = b.size();
    std::vector<std::int64_t> prev(n + 1), cur(n + 1);
    for (std::size_t j = 0; j <= n; ++j) prev[j] = static_cast<std::int64_t>(j);
    for (std::size_t i = 1; i <= m; ++i) {
        cur[0] = static_cast<std::int64_t>(i);
        for (std::size_t j = 1; j <= n; ++j) {
            const std::int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

double token_error_rate(const ModelParams& params, const std::vector<SyntheticSample>& samples,
                        const GateVector& gates) {
    if (samples.empty()) throw ContractError("token_error_rate: empty dataset");
    std::int64_t errors = 0, length = 0;
    Tape tape;  // params carry no grad here, so nothing records
    for (const auto& sample : samples) {
        EncoderOutput out = encoder_forward(tape, sample.features, params, gates);
        const auto decoded = greedy_ctc_decode(out.log_probs);
        errors += edit_distance(decoded, sample.target.tokens);
        length += sample.target.length();
    }
    return static_cast<double>(errors) / static_cast<double>(length);
}

double token_error_rate(const Checkpoint& ckpt, const std::vector<SyntheticSample>& samples,
                        const GateVector& gates) {
    return token_error_rate(ckpt.to_model_params(false), samples, gates);
}

double speedup_from_params(std::int64_t full_depth_params, std::int64_t executed_params) {
    if (executed_params <= 0) throw ContractError("speedup: executed params must be positive");
    return static_cast<double>(full_depth_params) / static_cast<double>(executed_params);
}

SweepReport depth_sweep(const Checkpoint& ckpt, const std::vector<SyntheticSample>& samples,
                        const std::vector<std::int64_t>& depths, GatePolicy policy,
                        const Checkpoint* reference) {
    const std::int64_t full = ckpt.config.num_blocks;
    for (auto d : depths)
        if (d < 1 || d > full)
            throw ContractError("depth_sweep: depth " + std::to_string(d) + " outside [1," +
                                std::to_string(full) + "]");
    const ModelParams params = ckpt.to_model_params(false);
    const std::int64_t full_params = count_executed_params(ckpt.config, full);

    std::vector<std::int64_t> sorted = depths;
    std::sort(sorted.rbegin(), sorted.rend());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    SweepReport report;
    for (auto depth : sorted) {
        SweepRow row;
        row.n_ds = depth;
        row.policy = to_string(policy);
        row.ter = token_error_rate(params, samples, select_gates(depth, full, policy));
        row.executed_params = count_executed_params(ckpt.config, depth);
        row.speedup = speedup_from_params(full_params, row.executed_params);
        report.rows.push_back(std::move(row));
    }
    {
        const Checkpoint& ref = reference ? *reference : ckpt;
        SweepRow row;
        row.n_ds = ref.config.num_blocks;
        row.policy = "reference";
        row.ter = token_error_rate(ref, samples, GateVector::ones(ref.config.num_blocks));
        row.executed_params = count_executed_params(ref.config, ref.config.num_blocks);
        row.speedup = 1.0;
        report.rows.push_back(std::move(row));
    }
    return report;
}

EpochSweep epoch_sweep(const std::map<std::int64_t, Checkpoint>& checkpoints_by_epoch,
                       const std::vector<std::int64_t>& epochs,
                       const std::vector<SyntheticSample>& samples,
                       const std::vector<std::int64_t>& depths, GatePolicy policy) {
    EpochSweep sweep;
    sweep.depths = depths;
    std::sort(sweep.depths.rbegin(), sweep.depths.rend());
    sweep.epochs = epochs;
    std::sort(sweep.epochs.begin(), sweep.epochs.end());
    sweep.ter.assign(sweep.depths.size(), std::vector<std::optional<double>>(sweep.epochs.size()));
    for (std::size_t e = 0; e < sweep.epochs.size(); ++e) {
        auto it = checkpoints_by_epoch.find(sweep.epochs[e]);
        if (it == checkpoints_by_epoch.end()) continue;  // gap marker stays nullopt
        const ModelParams params = it->second.to_model_params(false);
        const std::int64_t full = it->second.config.num_blocks;
        for (std::size_t d = 0; d < sweep.depths.size(); ++d)
            sweep.ter[d][e] = token_error_rate(params, samples, select_gates(sweep.depths[d], full, policy));
    }
    return sweep;
}

ReportFormat parse_report_format(const std::string& name) {
    if (name == "csv") return ReportFormat::Csv;
    if (name == "md" || name == "markdown") return ReportFormat::Markdown;
    throw ContractError("unknown report format '" + name + "' (valid: csv, md)");
}

namespace {

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string render_csv(const SweepReport& report) {
    std::ostringstream os;
    os << "n_ds,policy,ter,params,speedup\n";
    for (const auto& row : report.rows)
        os << row.n_ds << ',' << row.policy << ',' << fixed6(row.ter) << ',' << row.executed_params
           << ',' << fixed6(row.speedup) << '\n';
    return os.str();
}

std::string render_markdown(const SweepReport& report) {
    std::ostringstream os;
    os << "| n_DS | policy | TER | params | speedup |\n";
    os << "|---:|---|---:|---:|---:|\n";
    for (const auto& row : report.rows)
        os << "| " << row.n_ds << " | " << row.policy << " | " << fixed6(row.ter) << " | "
           << row.executed_params << " | " << fixed6(row.speedup) << " |\n";
    return os.str();
}

void write_text(const std::string& text, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << text;
    os.flush();
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace

void emit_report(const SweepReport& report, ReportFormat format, const std::filesystem::path& path) {
    write_text(format == ReportFormat::Csv ? render_csv(report) : render_markdown(report), path);
}

SweepReport parse_sweep_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw IoError(path.string() + ": empty sweep csv");
    if (line != "n_ds,policy,ter,params,speedup")
        throw IoError(path.string() + ": unexpected header '" + line + "'");
    SweepReport report;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        SweepRow row;
        std::string field;
        std::getline(ls, field, ',');
        row.n_ds = std::stoll(field);
        std::getline(ls, row.policy, ',');
        std::getline(ls, field, ',');
        row.ter = std::stod(field);
        std::getline(ls, field, ',');
        row.executed_params = std::stoll(field);
        std::getline(ls, field, ',');
        row.speedup = std::stod(field);
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string render_epoch_sweep_markdown(const EpochSweep& sweep) {
    std::ostringstream os;
    os << "| n_DS |";
    for (auto e : sweep.epochs) os << " epoch " << e << " |";
    os << "\n|---:|";
    for (std::size_t i = 0; i < sweep.epochs.size(); ++i) os << "---:|";
    os << '\n';
    for (std::size_t d = 0; d < sweep.depths.size(); ++d) {
        os << "| " << sweep.depths[d] << " |";
        for (std::size_t e = 0; e < sweep.epochs.size(); ++e)
            os << ' ' << (sweep.ter[d][e] ? fixed6(*sweep.ter[d][e]) : std::string("-")) << " |";
        os << '\n';
    }
    return os.str();
}

void emit_epoch_sweep(const EpochSweep& sweep, ReportFormat format, const std::filesystem::path& path) {
    if (format == ReportFormat::Markdown) {
        write_text(render_epoch_sweep_markdown(sweep), path);
        return;
    }
    std::ostringstream os;
    os << "n_ds";
    for (auto e : sweep.epochs) os << ",epoch_" << e;
    os << '\n';
    for (std::size_t d = 0; d < sweep.depths.size(); ++d) {
        os << sweep.depths[d];
        for (std::size_t e = 0; e < sweep.epochs.size(); ++e)
            os << ',' << (sweep.ter[d][e] ? fixed6(*sweep.ter[d][e]) : std::string("-"));
        os << '\n';
    }
    write_text(os.str(), path);
}

std::string render_comparison_markdown(const std::vector<std::pair<std::string, SweepReport>>& runs) {
    if (runs.empty()) throw ContractError("comparison: no runs given");
    // row keys in first-run order, then any extras in argument order
    std::vector<std::pair<std::int64_t, std::string>> keys;
    for (const auto& [name, report] : runs)
        for (const auto& row : report.rows) {
            const std::pair<std::int64_t, std::string> key{row.n_ds, row.policy};
            if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
        }
    std::ostringstream os;
    os << "| n_DS | policy |";
    for (const auto& [name, report] : runs) os << ' ' << name << " |";
    os << "\n|---:|---|";
    for (std::size_t i = 0; i < runs.size(); ++i) os << "---:|";
    os << '\n';
    for (const auto& key : keys) {
        std::vector<std::optional<double>> ters;
        std::optional<double> best;
        for (const auto& [name, report] : runs) {
            std::optional<double> ter;
            for (const auto& row : report.rows)
                if (row.n_ds == key.first && row.policy == key.second) {
                    ter = row.ter;
                    break;
                }
            if (ter && (!best || *ter < *best)) best = *ter;
            ters.push_back(ter);
        }
        os << "| " << key.first << " | " << key.second << " |";
        for (const auto& ter : ters) {
            if (!ter)
                os << " - |";
            else if (best && *ter == *best)
                os << " **" << fixed6(*ter) << "** |";
            else
                os << ' ' << fixed6(*ter) << " |";
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace dld
