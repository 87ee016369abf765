// SPDX-License-Identifier: Apache-2.0
//
// Training loops: a full-depth reference trained with CTC only, a dynamic
// student finetuned from the reference under CTC + distillation with
// Bernoulli-sampled gates, and a random-dropping baseline without the
// distillation term. One (config, seed) pair fully determines every logged
// number and checkpoint byte.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dld/checkpoint.hpp"
#include "dld/data.hpp"
#include "dld/encoder.hpp"

namespace dld {

struct TrainConfig {
    std::int64_t epochs = 30;
    std::int64_t batch_size = 16;
    double peak_lr = 3e-3;
    std::int64_t warmup_steps = 200;
    double decay_rate = 0.0;  // per-step gamma; 0 = auto (10x decay over the run)
    double p_d = 0.5;         // per-block drop probability
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 5.0;    // global gradient norm cap; 0 disables
    double kld_weight = 1.0;   // the objective is an unweighted sum; != 1 is an experiment
    std::uint64_t seed = 1;
    std::int64_t ckpt_every = 0;  // epochs between periodic checkpoints; 0 = epochs/4

    void validate() const;
};

// Piecewise schedule: linear warmup to peak_lr, then exponential decay.
// `decay_rate` must be resolved (> 0) before calling.
double lr_schedule(std::int64_t step, const TrainConfig& config);

// Fills in decay_rate when it is 0 so the lr drops 10x over the remaining
// steps, and ckpt_every when it is 0.
TrainConfig resolve_train_config(const TrainConfig& config, std::int64_t total_steps);

struct AdamState {
    std::vector<std::pair<std::string, Tensor>> m;
    std::vector<std::pair<std::string, Tensor>> v;
    std::uint64_t t = 0;

    static AdamState init(const ModelParams& params);
};

// Bias-corrected moment update with decoupled weight decay.
void adam_step(ModelParams& params, AdamState& state, double lr, const TrainConfig& config);

struct EpochLog {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    double lr = 0.0;
    double l_kld = 0.0;
    double l_ctc = 0.0;
    double total = 0.0;
    double test_ter = -1.0;  // -1 when the dataset has no test split
};

void write_epoch_log_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path);

struct TrainHooks {
    // Runs after backward and before clipping/update; gradients are intact.
    std::function<void(std::int64_t step, const GateVector& gates, const ModelParams& params)>
        after_backward;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
    std::map<std::int64_t, Checkpoint> periodic;  // epoch -> checkpoint
};

TrainResult train_reference(const Dataset& dataset, const EncoderConfig& encoder_config,
                            const TrainConfig& config, const TrainHooks& hooks = {});

// Student initialized from the reference's weights; the frozen reference
// supervises every frame's distribution through the KL term.
TrainResult train_student_dld(const Dataset& dataset, const Checkpoint& reference,
                              const TrainConfig& config, const TrainHooks& hooks = {});

// Random-dropping baseline: same gate stream, CTC only. Trains from scratch
// unless `init_from` provides weights.
TrainResult train_student_rd(const Dataset& dataset, const EncoderConfig& encoder_config,
                             const TrainConfig& config, const Checkpoint* init_from = nullptr,
                             const TrainHooks& hooks = {});

// Encoder shape checks against the dataset (input_dim, vocab+blank, frames).
void check_model_fits_dataset(const EncoderConfig& encoder_config, const Dataset& dataset);

}  // namespace dld
