// SPDX-License-Identifier: Apache-2.0
//
// dld: train and evaluate depth-dynamic CTC encoders.
//
// Exit codes: 0 success, 2 config/usage error, 3 I/O error, 4 numeric failure.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "dld/config.hpp"
#include "dld/data.hpp"
#include "dld/errors.hpp"
#include "dld/eval.hpp"
#include "dld/trainer.hpp"

namespace fs = std::filesystem;
using namespace dld;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

// --- config assembly: defaults < file < DLD_SEED env < flags -------------

struct FlagLayer {
    KvConfig values;
};

void add_kv_flag(CLI::App* cmd, FlagLayer& layer, const std::string& flag, const std::string& key,
                 const std::string& help) {
    cmd->add_option_function<std::string>(
           flag, [&layer, key](const std::string& v) { layer.values.set(key, v); }, help)
        ->type_name("VALUE");
}

KvConfig dataset_defaults() {
    KvConfig c;
    DatasetConfig d;
    c.set_int("data.vocab_size", d.vocab_size);
    c.set_int("data.input_dim", d.input_dim);
    c.set_int("data.min_duration", d.min_duration);
    c.set_int("data.max_duration", d.max_duration);
    c.set_int("data.min_tokens", d.min_tokens);
    c.set_int("data.max_tokens", d.max_tokens);
    c.set_double("data.noise_sigma", d.noise_sigma);
    c.set_int("data.num_train", d.num_train);
    c.set_int("data.num_test", d.num_test);
    c.set_uint("data.seed", d.seed);
    return c;
}

KvConfig model_defaults() {
    KvConfig c;
    EncoderConfig e;
    c.set_int("model.num_blocks", e.num_blocks);
    c.set_int("model.model_dim", e.model_dim);
    c.set_int("model.ffn_dim", e.ffn_dim);
    c.set_int("model.max_frames", 0);  // 0 = fit the dataset
    return c;
}

KvConfig train_defaults() {
    KvConfig c;
    TrainConfig t;
    c.set_int("train.epochs", t.epochs);
    c.set_int("train.batch_size", t.batch_size);
    c.set_double("train.peak_lr", t.peak_lr);
    c.set_int("train.warmup_steps", t.warmup_steps);
    c.set_double("train.decay_rate", t.decay_rate);
    c.set_double("train.p_d", t.p_d);
    c.set_double("train.weight_decay", t.weight_decay);
    c.set_double("train.beta1", t.beta1);
    c.set_double("train.beta2", t.beta2);
    c.set_double("train.adam_eps", t.adam_eps);
    c.set_double("train.clip_norm", t.clip_norm);
    c.set_double("train.kld_weight", t.kld_weight);
    c.set_uint("train.seed", t.seed);
    c.set_int("train.ckpt_every", t.ckpt_every);
    return c;
}

KvConfig resolve_layers(const KvConfig& defaults, const std::optional<std::string>& config_path,
                        const FlagLayer& flags) {
    KvConfig out = defaults;
    if (config_path) out.merge(KvConfig::load(*config_path));
    if (const char* env_seed = std::getenv("DLD_SEED")) {
        KvConfig env;
        env.set("data.seed", env_seed);
        env.set("train.seed", env_seed);
        // the env layer only touches keys the command already knows about
        for (const auto& [k, v] : env.values())
            if (defaults.has(k)) out.set(k, v);
    }
    out.merge(flags.values);
    return out;
}

DatasetConfig dataset_config_from(const KvConfig& c) {
    DatasetConfig d;
    d.vocab_size = c.get_int("data.vocab_size");
    d.input_dim = c.get_int("data.input_dim");
    d.min_duration = c.get_int("data.min_duration");
    d.max_duration = c.get_int("data.max_duration");
    d.min_tokens = c.get_int("data.min_tokens");
    d.max_tokens = c.get_int("data.max_tokens");
    d.noise_sigma = c.get_double("data.noise_sigma");
    d.num_train = c.get_int("data.num_train");
    d.num_test = c.get_int("data.num_test");
    d.seed = c.get_uint("data.seed");
    d.validate();
    return d;
}

EncoderConfig encoder_config_from(const KvConfig& c, const Dataset& dataset) {
    EncoderConfig e;
    e.num_blocks = c.get_int("model.num_blocks");
    e.model_dim = c.get_int("model.model_dim");
    e.ffn_dim = c.get_int("model.ffn_dim");
    e.vocab_size = dataset.config.vocab_size + 1;  // blank
    e.input_dim = dataset.config.input_dim;
    e.max_frames = c.get_int("model.max_frames");
    if (e.max_frames == 0) e.max_frames = dataset.max_frames();
    e.validate();
    return e;
}

TrainConfig train_config_from(const KvConfig& c) {
    TrainConfig t;
    t.epochs = c.get_int("train.epochs");
    t.batch_size = c.get_int("train.batch_size");
    t.peak_lr = c.get_double("train.peak_lr");
    t.warmup_steps = c.get_int("train.warmup_steps");
    t.decay_rate = c.get_double("train.decay_rate");
    t.p_d = c.get_double("train.p_d");
    t.weight_decay = c.get_double("train.weight_decay");
    t.beta1 = c.get_double("train.beta1");
    t.beta2 = c.get_double("train.beta2");
    t.adam_eps = c.get_double("train.adam_eps");
    t.clip_norm = c.get_double("train.clip_norm");
    t.kld_weight = c.get_double("train.kld_weight");
    t.seed = c.get_uint("train.seed");
    t.ckpt_every = c.get_int("train.ckpt_every");
    t.validate();
    return t;
}

void print_resolved(const KvConfig& c) {
    std::cout << "# resolved config\n" << c.dump() << "# end config\n";
}

std::vector<std::int64_t> parse_depths(const std::string& text) {
    std::vector<std::int64_t> depths;
    std::string item;
    std::istringstream is(text);
    while (std::getline(is, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t pos = 0;
            depths.push_back(std::stoll(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ContractError("invalid depth '" + item + "' in list '" + text + "'");
        }
    }
    if (depths.empty()) throw ContractError("empty depth list");
    return depths;
}

// --- subcommand drivers ---------------------------------------------------

struct GenDataArgs {
    std::optional<std::string> config_path;
    FlagLayer flags;
    std::string out;
};

int run_gen_data(const GenDataArgs& args) {
    KvConfig resolved = resolve_layers(dataset_defaults(), args.config_path, args.flags);
    const DatasetConfig config = dataset_config_from(resolved);
    print_resolved(resolved);
    const Dataset dataset = generate_dataset(config);
    save_dataset(dataset, args.out);
    double frame_sum = 0.0;
    for (const auto& s : dataset.train) frame_sum += static_cast<double>(s.frames());
    for (const auto& s : dataset.test) frame_sum += static_cast<double>(s.frames());
    const auto total = static_cast<double>(dataset.train.size() + dataset.test.size());
    std::printf("wrote %s: %zu train + %zu test samples, vocab %lld, mean T %.2f\n",
                args.out.c_str(), dataset.train.size(), dataset.test.size(),
                static_cast<long long>(config.vocab_size), frame_sum / total);
    return kExitOk;
}

struct TrainArgs {
    std::string data;
    std::optional<std::string> config_path;
    std::optional<std::string> ref_ckpt;
    FlagLayer flags;
    std::string out;
};

int run_train(TrainMode mode, const TrainArgs& args) {
    KvConfig defaults = train_defaults();
    if (mode != TrainMode::DldStudent) defaults.merge(model_defaults());
    KvConfig resolved = resolve_layers(defaults, args.config_path, args.flags);

    const Dataset dataset = load_dataset(args.data);
    TrainConfig train_config = train_config_from(resolved);

    std::optional<Checkpoint> ref;
    EncoderConfig encoder_config;
    if (args.ref_ckpt) {
        ref = load_checkpoint(*args.ref_ckpt);
        encoder_config = ref->config;
    } else {
        encoder_config = encoder_config_from(resolved, dataset);
    }
    check_model_fits_dataset(encoder_config, dataset);

    // resolve auto values so the printed config re-runs bit-identically
    const std::int64_t batches_per_epoch =
        static_cast<std::int64_t>(batch_iter(dataset.train, train_config.batch_size, 0).size());
    train_config = resolve_train_config(train_config, train_config.epochs * batches_per_epoch);
    resolved.set_double("train.decay_rate", train_config.decay_rate);
    resolved.set_int("train.ckpt_every", train_config.ckpt_every);
    if (mode != TrainMode::DldStudent && !args.ref_ckpt)
        resolved.set_int("model.max_frames", encoder_config.max_frames);
    print_resolved(resolved);

    TrainResult result;
    switch (mode) {
        case TrainMode::Reference:
            result = train_reference(dataset, encoder_config, train_config);
            break;
        case TrainMode::DldStudent:
            result = train_student_dld(dataset, *ref, train_config);
            break;
        case TrainMode::RdStudent:
            result = train_student_rd(dataset, encoder_config, train_config,
                                      ref ? &*ref : nullptr);
            break;
    }

    fs::create_directories(args.out);
    const fs::path out_dir(args.out);
    {
        std::ofstream os(out_dir / "config.resolved", std::ios::trunc);
        if (!os) throw IoError("cannot write " + (out_dir / "config.resolved").string());
        os << resolved.dump();
    }
    write_epoch_log_csv(result.log, out_dir / "train_log.csv");
    for (const auto& [epoch, ckpt] : result.periodic) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04lld.dldc", static_cast<long long>(epoch));
        save_checkpoint(ckpt, out_dir / name);
    }
    save_checkpoint(result.checkpoint, out_dir / "final.dldc");
    if (!result.log.empty()) {
        const auto& last = result.log.back();
        std::printf("trained %s for %lld epochs: l_ctc %.4f, test TER %.4f\n",
                    to_string(mode).c_str(), static_cast<long long>(train_config.epochs), last.l_ctc,
                    last.test_ter);
    } else {
        std::printf("wrote initialization checkpoint for %s (0 epochs)\n", to_string(mode).c_str());
    }
    return kExitOk;
}

struct SweepArgs {
    std::string ckpt;
    std::string data;
    std::string depths = "";
    std::string policy = "evenly-spaced";
    std::string format = "csv";
    std::optional<std::string> ref_ckpt;
    std::string out;
};

int run_sweep(const SweepArgs& args) {
    const Checkpoint ckpt = load_checkpoint(args.ckpt);
    const Dataset dataset = load_dataset(args.data);
    std::vector<std::int64_t> depths;
    if (args.depths.empty()) {
        for (std::int64_t d = ckpt.config.num_blocks; d >= 1; --d) depths.push_back(d);
    } else {
        depths = parse_depths(args.depths);
    }
    const GatePolicy policy = parse_gate_policy(args.policy);
    const ReportFormat format = parse_report_format(args.format);
    KvConfig resolved;
    resolved.set("sweep.ckpt", args.ckpt);
    resolved.set("sweep.data", args.data);
    resolved.set("sweep.depths", [&] {
        std::string s;
        for (std::size_t i = 0; i < depths.size(); ++i)
            s += (i ? "," : "") + std::to_string(depths[i]);
        return s;
    }());
    resolved.set("sweep.policy", to_string(policy));
    resolved.set("sweep.format", args.format);
    if (args.ref_ckpt) resolved.set("sweep.ref_ckpt", *args.ref_ckpt);
    print_resolved(resolved);

    std::optional<Checkpoint> ref;
    if (args.ref_ckpt) ref = load_checkpoint(*args.ref_ckpt);
    const SweepReport report =
        depth_sweep(ckpt, dataset.test.empty() ? dataset.train : dataset.test, depths, policy,
                    ref ? &*ref : nullptr);
    emit_report(report, format, args.out);
    std::printf("wrote %s (%zu rows)\n", args.out.c_str(), report.rows.size());
    return kExitOk;
}

struct EpochSweepArgs {
    std::string run;
    std::string data;
    std::string depths = "";
    std::string policy = "evenly-spaced";
    std::string format = "md";
    std::string out;
};

int run_epoch_sweep(const EpochSweepArgs& args) {
    const Dataset dataset = load_dataset(args.data);
    std::map<std::int64_t, Checkpoint> by_epoch;
    const std::regex name_re("epoch_([0-9]+)\\.dldc");
    if (!fs::is_directory(args.run)) throw IoError("not a run directory: " + args.run);
    for (const auto& entry : fs::directory_iterator(args.run)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, name_re))
            by_epoch.emplace(std::stoll(m[1].str()), load_checkpoint(entry.path()));
    }
    if (by_epoch.empty()) throw IoError("no epoch_*.dldc checkpoints under " + args.run);
    std::vector<std::int64_t> epochs;
    for (const auto& [epoch, ckpt] : by_epoch) epochs.push_back(epoch);
    const std::int64_t full = by_epoch.begin()->second.config.num_blocks;
    std::vector<std::int64_t> depths;
    if (args.depths.empty()) {
        for (std::int64_t d = full; d >= 1; --d) depths.push_back(d);
    } else {
        depths = parse_depths(args.depths);
    }
    KvConfig resolved;
    resolved.set("epoch_sweep.run", args.run);
    resolved.set("epoch_sweep.data", args.data);
    resolved.set("epoch_sweep.policy", args.policy);
    resolved.set("epoch_sweep.format", args.format);
    print_resolved(resolved);
    const EpochSweep sweep =
        epoch_sweep(by_epoch, epochs, dataset.test.empty() ? dataset.train : dataset.test, depths,
                    parse_gate_policy(args.policy));
    emit_epoch_sweep(sweep, parse_report_format(args.format), args.out);
    std::printf("wrote %s (%zu depths x %zu epochs)\n", args.out.c_str(), sweep.depths.size(),
                sweep.epochs.size());
    return kExitOk;
}

struct ReportArgs {
    std::vector<std::string> runs;
    std::string out;
};

int run_report(const ReportArgs& args) {
    std::vector<std::pair<std::string, SweepReport>> runs;
    for (const auto& dir : args.runs) {
        const fs::path csv = fs::path(dir) / "sweep.csv";
        if (!fs::exists(csv)) throw IoError("run dir " + dir + " has no sweep.csv");
        runs.emplace_back(fs::path(dir).filename().string(), parse_sweep_csv(csv));
    }
    const std::string table = render_comparison_markdown(runs);
    std::ofstream os(args.out, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + args.out);
    os << table;
    os.flush();
    if (!os) throw IoError("write failed: " + args.out);
    std::printf("wrote %s (%zu runs)\n", args.out.c_str(), runs.size());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"depth-dynamic CTC encoder training and evaluation"};
    app.require_subcommand(1);

    GenDataArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset (DLDS file)");
    gen->add_option("--config", gen_args.config_path, "key=value config file");
    gen->add_option("--out", gen_args.out, "output dataset path")->required();
    add_kv_flag(gen, gen_args.flags, "--vocab-size", "data.vocab_size", "tokens excluding blank");
    add_kv_flag(gen, gen_args.flags, "--input-dim", "data.input_dim", "feature dimension");
    add_kv_flag(gen, gen_args.flags, "--min-duration", "data.min_duration", "min frames per token");
    add_kv_flag(gen, gen_args.flags, "--max-duration", "data.max_duration", "max frames per token");
    add_kv_flag(gen, gen_args.flags, "--min-tokens", "data.min_tokens", "min tokens per sample");
    add_kv_flag(gen, gen_args.flags, "--max-tokens", "data.max_tokens", "max tokens per sample");
    add_kv_flag(gen, gen_args.flags, "--noise-sigma", "data.noise_sigma", "feature noise stddev");
    add_kv_flag(gen, gen_args.flags, "--num-train", "data.num_train", "training samples");
    add_kv_flag(gen, gen_args.flags, "--num-test", "data.num_test", "test samples");
    add_kv_flag(gen, gen_args.flags, "--seed", "data.seed", "dataset seed");

    auto add_train_cmd = [&](const std::string& name, const std::string& desc, TrainArgs& args,
                             bool model_flags, bool ref_flag, bool ref_required) {
        auto* cmd = app.add_subcommand(name, desc);
        cmd->add_option("--data", args.data, "DLDS dataset path")->required();
        cmd->add_option("--config", args.config_path, "key=value config file");
        cmd->add_option("--out", args.out, "output run directory")->required();
        if (ref_flag) {
            auto* opt = cmd->add_option("--ref-ckpt", args.ref_ckpt, "reference checkpoint (DLDC)");
            if (ref_required) opt->required();
        }
        if (model_flags) {
            add_kv_flag(cmd, args.flags, "--blocks", "model.num_blocks", "encoder blocks N");
            add_kv_flag(cmd, args.flags, "--dim", "model.model_dim", "model width d");
            add_kv_flag(cmd, args.flags, "--ffn-dim", "model.ffn_dim", "feed-forward width");
            add_kv_flag(cmd, args.flags, "--max-frames", "model.max_frames",
                        "positional table length (0 = fit dataset)");
        }
        add_kv_flag(cmd, args.flags, "--epochs", "train.epochs", "training epochs");
        add_kv_flag(cmd, args.flags, "--batch-size", "train.batch_size", "batch size");
        add_kv_flag(cmd, args.flags, "--peak-lr", "train.peak_lr", "peak learning rate");
        add_kv_flag(cmd, args.flags, "--warmup-steps", "train.warmup_steps", "warmup steps");
        add_kv_flag(cmd, args.flags, "--decay-rate", "train.decay_rate",
                    "per-step lr decay (0 = auto 10x over the run)");
        add_kv_flag(cmd, args.flags, "--p-d", "train.p_d", "per-block drop probability");
        add_kv_flag(cmd, args.flags, "--weight-decay", "train.weight_decay", "decoupled L2");
        add_kv_flag(cmd, args.flags, "--clip-norm", "train.clip_norm", "gradient norm cap (0 = off)");
        add_kv_flag(cmd, args.flags, "--kld-weight", "train.kld_weight",
                    "distillation weight (1 = the plain sum)");
        add_kv_flag(cmd, args.flags, "--seed", "train.seed", "training seed");
        add_kv_flag(cmd, args.flags, "--ckpt-every", "train.ckpt_every",
                    "epochs between checkpoints (0 = quarter of the run)");
        return cmd;
    };

    TrainArgs ref_args, dld_args, rd_args;
    add_train_cmd("train-ref", "train the full-depth reference (CTC only)", ref_args, true, false,
                  false);
    add_train_cmd("train-dld", "finetune the dynamic student with distillation", dld_args, false,
                  true, true);
    add_train_cmd("train-rd", "train the random-dropping baseline (CTC only)", rd_args, true, true,
                  false);

    SweepArgs sweep_args;
    auto* sweep = app.add_subcommand("sweep", "evaluate a checkpoint at fixed depths");
    sweep->add_option("--ckpt", sweep_args.ckpt, "checkpoint to evaluate")->required();
    sweep->add_option("--data", sweep_args.data, "DLDS dataset (test split is used)")->required();
    sweep->add_option("--depths", sweep_args.depths, "comma-separated depth list (default: N..1)");
    sweep->add_option("--policy", sweep_args.policy, "evenly-spaced | first-n | last-n");
    sweep->add_option("--format", sweep_args.format, "csv | md");
    sweep->add_option("--ref-ckpt", sweep_args.ref_ckpt, "model for the reference row");
    sweep->add_option("--out", sweep_args.out, "output report path")->required();

    EpochSweepArgs epoch_args;
    auto* esweep = app.add_subcommand("epoch-sweep", "TER per (epoch, depth) from saved checkpoints");
    esweep->add_option("--run", epoch_args.run, "run directory with epoch_*.dldc")->required();
    esweep->add_option("--data", epoch_args.data, "DLDS dataset")->required();
    esweep->add_option("--depths", epoch_args.depths, "comma-separated depth list (default: N..1)");
    esweep->add_option("--policy", epoch_args.policy, "evenly-spaced | first-n | last-n");
    esweep->add_option("--format", epoch_args.format, "csv | md");
    esweep->add_option("--out", epoch_args.out, "output path")->required();

    ReportArgs report_args;
    auto* report = app.add_subcommand("report", "side-by-side comparison of run sweeps");
    report->add_option("--runs", report_args.runs, "run directories, each with a sweep.csv")
        ->required()
        ->expected(-1);
    report->add_option("--out", report_args.out, "output markdown path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) return run_gen_data(gen_args);
        if (app.got_subcommand("train-ref")) return run_train(TrainMode::Reference, ref_args);
        if (app.got_subcommand("train-dld")) return run_train(TrainMode::DldStudent, dld_args);
        if (app.got_subcommand("train-rd")) return run_train(TrainMode::RdStudent, rd_args);
        if (sweep->parsed()) return run_sweep(sweep_args);
        if (esweep->parsed()) return run_epoch_sweep(epoch_args);
        if (report->parsed()) return run_report(report_args);
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitIo;
    } catch (const std::invalid_argument& e) {  // ContractError, ShapeError
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    }
    return kExitConfig;
}
