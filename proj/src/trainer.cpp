// SPDX-License-Identifier: Apache-2.0
#include "dld/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "dld/errors.hpp"
#include "dld/eval.hpp"
#include "dld/losses.hpp"

namespace dld {

void TrainConfig::validate() const {
    if (epochs < 0) throw ContractError("train config: epochs must be >= 0");
    if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
    if (!(peak_lr > 0.0)) throw ContractError("train config: peak_lr must be positive");
    if (warmup_steps < 1) throw ContractError("train config: warmup_steps must be >= 1");
    if (decay_rate < 0.0 || decay_rate > 1.0)
        throw ContractError("train config: decay_rate must lie in (0,1] (or 0 for auto)");
    if (!(p_d >= 0.0 && p_d <= 1.0)) throw ContractError("train config: p_d must lie in [0,1]");
    if (weight_decay < 0.0) throw ContractError("train config: weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ContractError("train config: betas must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw ContractError("train config: adam_eps must be positive");
    if (clip_norm < 0.0) throw ContractError("train config: clip_norm must be >= 0");
    if (kld_weight < 0.0) throw ContractError("train config: kld_weight must be >= 0");
    if (ckpt_every < 0) throw ContractError("train config: ckpt_every must be >= 0");
}

double lr_schedule(std::int64_t step, const TrainConfig& config) {
    if (step < 0) throw ContractError("lr_schedule: step must be >= 0");
    if (!(config.decay_rate > 0.0 && config.decay_rate <= 1.0))
        throw ContractError("lr_schedule: decay_rate not resolved");
    if (step < config.warmup_steps)
        return config.peak_lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
    return config.peak_lr * std::pow(config.decay_rate, static_cast<double>(step - config.warmup_steps));
}

TrainConfig resolve_train_config(const TrainConfig& config, std::int64_t total_steps) {
    TrainConfig out = config;
    if (out.decay_rate == 0.0) {
        const std::int64_t decay_steps = std::max<std::int64_t>(1, total_steps - out.warmup_steps);
        out.decay_rate = std::pow(0.1, 1.0 / static_cast<double>(decay_steps));
    }
    if (out.ckpt_every == 0) out.ckpt_every = std::max<std::int64_t>(1, out.epochs / 4);
    out.validate();
    return out;
}

AdamState AdamState::init(const ModelParams& params) {
    AdamState state;
    params.for_each_param([&](const std::string& name, const Tensor& t) {
        state.m.emplace_back(name, Tensor::zeros(t.shape()));
        state.v.emplace_back(name, Tensor::zeros(t.shape()));
    });
    return state;
}

void adam_step(ModelParams& params, AdamState& state, double lr, const TrainConfig& config) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    std::size_t idx = 0;
    params.for_each_param([&](const std::string& name, Tensor& p) {
        if (state.m[idx].first != name)
            throw ContractError("adam_step: state/param order mismatch at '" + name + "'");
        Tensor& m = state.m[idx].second;
        Tensor& v = state.v[idx].second;
        ++idx;
        if (m.numel() != p.numel()) throw ContractError("adam_step: state shape mismatch at '" + name + "'");
        const double* g = p.grad_data();
        double* pm = m.data();
        double* pv = v.data();
        double* pp = p.data();
        const std::int64_t n = p.numel();
        for (std::int64_t i = 0; i < n; ++i) {
            pm[i] = config.beta1 * pm[i] + (1.0 - config.beta1) * g[i];
            pv[i] = config.beta2 * pv[i] + (1.0 - config.beta2) * g[i] * g[i];
            const double mhat = pm[i] / bc1;
            const double vhat = pv[i] / bc2;
            pp[i] -= lr * mhat / (std::sqrt(vhat) + config.adam_eps) + lr * config.weight_decay * pp[i];
        }
    });
}

void write_epoch_log_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "step,epoch,lr,l_kld,l_ctc,total,test_ter_full_depth\n";
    char buf[256];
    for (const auto& row : log) {
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%.12g,%.12g,%.12g,%.12g,%.6f\n",
                      static_cast<long long>(row.step), static_cast<long long>(row.epoch), row.lr,
                      row.l_kld, row.l_ctc, row.total, row.test_ter);
        os << buf;
    }
    os.flush();
    if (!os) throw IoError("write failed: " + path.string());
}

void check_model_fits_dataset(const EncoderConfig& encoder_config, const Dataset& dataset) {
    if (encoder_config.input_dim != dataset.config.input_dim)
        throw ContractError("model input_dim " + std::to_string(encoder_config.input_dim) +
                            " != dataset input_dim " + std::to_string(dataset.config.input_dim));
    if (encoder_config.vocab_size != dataset.config.vocab_size + 1)
        throw ContractError("model vocab_size " + std::to_string(encoder_config.vocab_size) +
                            " must be dataset vocab + blank = " +
                            std::to_string(dataset.config.vocab_size + 1));
    const std::int64_t frames = dataset.max_frames();
    if (encoder_config.max_frames < frames)
        throw ContractError("model max_frames " + std::to_string(encoder_config.max_frames) +
                            " < longest sample " + std::to_string(frames));
}

namespace {

Checkpoint build_checkpoint(const ModelParams& params, TrainMode mode, std::uint64_t step,
                            const AdamState& state, const RngStream& gate_stream) {
    Checkpoint ckpt;
    ckpt.config = params.config;
    ckpt.mode = mode;
    ckpt.step = step;
    ckpt.blank = kBlank;
    params.for_each_param(
        [&](const std::string& name, const Tensor& t) { ckpt.tensors.emplace_back(name, t.clone()); });
    for (const auto& [name, t] : state.m) ckpt.tensors.emplace_back("opt.m." + name, t.clone());
    for (const auto& [name, t] : state.v) ckpt.tensors.emplace_back("opt.v." + name, t.clone());
    ckpt.rng_states.push_back({"gates", gate_stream.seed(), gate_stream.counter()});
    return ckpt;
}

double global_grad_norm(ModelParams& params) {
    double sq = 0.0;
    params.for_each_param([&](const std::string&, Tensor& t) {
        if (!t.has_grad()) return;
        for (double g : t.grad()) sq += g * g;
    });
    return std::sqrt(sq);
}

void scale_grads(ModelParams& params, double factor) {
    params.for_each_param([&](const std::string&, Tensor& t) {
        if (!t.has_grad()) return;
        double* g = t.grad_data();
        for (std::int64_t i = 0; i < t.numel(); ++i) g[i] *= factor;
    });
}

Tensor batch_mean(Tape& tape, const std::vector<Tensor>& values) {
    Tensor acc = values.front();
    for (std::size_t i = 1; i < values.size(); ++i) acc = tape.add(acc, values[i]);
    return tape.mul_scalar(acc, 1.0 / static_cast<double>(values.size()));
}

// Shared loop. `reference` is null for reference/rd modes.
TrainResult run_training(const Dataset& dataset, ModelParams params, TrainMode mode,
                         const Checkpoint* reference, const TrainConfig& raw_config,
                         const TrainHooks& hooks) {
    const EncoderConfig& enc = params.config;
    check_model_fits_dataset(enc, dataset);

    const std::int64_t batches_per_epoch =
        static_cast<std::int64_t>(batch_iter(dataset.train, raw_config.batch_size, 0).size());
    const TrainConfig config = resolve_train_config(raw_config, raw_config.epochs * batches_per_epoch);

    AdamState opt = AdamState::init(params);
    RngStream gate_stream = make_stream(config.seed, "gates");

    // Reference outputs are constant across epochs; compute each sample once.
    ModelParams ref_params;
    std::unordered_map<std::uint64_t, Tensor> ref_log_probs;
    if (mode == TrainMode::DldStudent) {
        ref_params = reference->to_model_params(false);
        ref_log_probs.reserve(dataset.train.size());
    }
    const GateVector all_on = GateVector::ones(enc.num_blocks);

    TrainResult result;
    std::int64_t step = 0;
    for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto batches =
            batch_iter(dataset.train, config.batch_size, make_stream(config.seed, "order", static_cast<std::uint64_t>(epoch)).seed());
        double kld_sum = 0.0, ctc_sum = 0.0, last_lr = 0.0;
        for (const auto& batch : batches) {
            ++step;
            const GateVector gates =
                mode == TrainMode::Reference ? all_on : sample_gates(enc.num_blocks, config.p_d, gate_stream);
            Tape tape;
            std::vector<Tensor> klds, ctcs;
            klds.reserve(batch.size());
            ctcs.reserve(batch.size());
            for (const SyntheticSample* sample : batch) {
                EncoderOutput out = encoder_forward(tape, sample->features, params, gates);
                if (!out.log_probs.all_finite())
                    throw DivergenceError("training diverged at step " + std::to_string(step) +
                                          ": model output is not finite");
                if (mode == TrainMode::DldStudent) {
                    auto it = ref_log_probs.find(sample->sample_id);
                    if (it == ref_log_probs.end()) {
                        Tape ref_tape;
                        EncoderOutput ref_out =
                            encoder_forward(ref_tape, sample->features, ref_params, all_on);
                        it = ref_log_probs.emplace(sample->sample_id, ref_out.log_probs).first;
                    }
                    klds.push_back(kld_loss_from_log(tape, it->second, out.log_probs));
                }
                ctcs.push_back(ctc_loss(tape, out.log_probs, sample->target));
            }
            Tensor l_ctc = batch_mean(tape, ctcs);
            Tensor l_kld;
            if (mode == TrainMode::DldStudent) {
                l_kld = batch_mean(tape, klds);
                if (config.kld_weight != 1.0) l_kld = tape.mul_scalar(l_kld, config.kld_weight);
            }
            LossReport report = total_loss(tape, l_kld, l_ctc);
            if (!std::isfinite(report.total.value()))
                throw DivergenceError("training diverged at step " + std::to_string(step) +
                                      ": loss is not finite");
            tape.backward(report.total);
            if (hooks.after_backward) hooks.after_backward(step, gates, params);
            if (config.clip_norm > 0.0) {
                const double norm = global_grad_norm(params);
                if (norm > config.clip_norm) scale_grads(params, config.clip_norm / norm);
            }
            last_lr = lr_schedule(step, config);
            adam_step(params, opt, last_lr, config);
            params.zero_grads();
            kld_sum += report.l_kld.value();
            ctc_sum += report.l_ctc.value();
        }
        EpochLog row;
        row.step = step;
        row.epoch = epoch;
        row.lr = last_lr;
        row.l_kld = kld_sum / static_cast<double>(batches.size());
        row.l_ctc = ctc_sum / static_cast<double>(batches.size());
        row.total = row.l_kld + row.l_ctc;
        if (!dataset.test.empty()) row.test_ter = token_error_rate(params, dataset.test, all_on);
        result.log.push_back(row);
        if (epoch % config.ckpt_every == 0 && epoch != config.epochs)
            result.periodic.emplace(
                epoch, build_checkpoint(params, mode, static_cast<std::uint64_t>(step), opt, gate_stream));
    }
    result.checkpoint =
        build_checkpoint(params, mode, static_cast<std::uint64_t>(step), opt, gate_stream);
    if (config.epochs > 0) result.periodic.emplace(config.epochs, result.checkpoint);
    return result;
}

}  // namespace

TrainResult train_reference(const Dataset& dataset, const EncoderConfig& encoder_config,
                            const TrainConfig& config, const TrainHooks& hooks) {
    config.validate();
    encoder_config.validate();
    RngStream init_stream = make_stream(config.seed, "init");
    ModelParams params = ModelParams::init(encoder_config, init_stream, true);
    return run_training(dataset, std::move(params), TrainMode::Reference, nullptr, config, hooks);
}

TrainResult train_student_dld(const Dataset& dataset, const Checkpoint& reference,
                              const TrainConfig& config, const TrainHooks& hooks) {
    config.validate();
    ModelParams params = reference.to_model_params(true);
    return run_training(dataset, std::move(params), TrainMode::DldStudent, &reference, config, hooks);
}

TrainResult train_student_rd(const Dataset& dataset, const EncoderConfig& encoder_config,
                             const TrainConfig& config, const Checkpoint* init_from,
                             const TrainHooks& hooks) {
    config.validate();
    encoder_config.validate();
    ModelParams params;
    if (init_from) {
        if (!(init_from->config == encoder_config))
            throw ContractError("train_student_rd: init checkpoint config differs from requested config");
        params = init_from->to_model_params(true);
    } else {
        RngStream init_stream = make_stream(config.seed, "init");
        params = ModelParams::init(encoder_config, init_stream, true);
    }
    return run_training(dataset, std::move(params), TrainMode::RdStudent, nullptr, config, hooks);
}

}  // namespace dld
