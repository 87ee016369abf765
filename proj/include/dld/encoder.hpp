// SPDX-License-Identifier: Apache-2.0
//
// Depth-dynamic encoder: input projection with learned positional embedding,
// a stack of gated residual blocks (y_{i+1} = y_i + g_i * delta_i(y_i)), and
// a linear head producing per-frame token distributions. A gate of 0 skips
// the block's computation entirely, which is what makes reduced-depth
// inference cheaper rather than merely zeroed out.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dld/rng.hpp"
#include "dld/tensor.hpp"

namespace dld {

constexpr double kLayerNormEps = 1e-5;

struct EncoderConfig {
    std::int64_t num_blocks = 6;
    std::int64_t model_dim = 32;
    std::int64_t ffn_dim = 64;
    std::int64_t vocab_size = 9;  // includes blank at index 0
    std::int64_t input_dim = 16;
    std::int64_t max_frames = 64;  // positional table length cap

    void validate() const;
    bool operator==(const EncoderConfig&) const = default;
};

struct GateVector {
    std::vector<std::uint8_t> gates;

    static GateVector ones(std::int64_t n) { return {std::vector<std::uint8_t>(static_cast<std::size_t>(n), 1)}; }
    static GateVector zeros(std::int64_t n) { return {std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0)}; }

    std::int64_t size() const { return static_cast<std::int64_t>(gates.size()); }
    // n_DS: number of executed blocks.
    std::int64_t active_count() const;
    bool operator==(const GateVector&) const = default;
};

struct BlockParams {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, wk, wv, wo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;
};

struct ModelParams {
    EncoderConfig config;
    Tensor in_w, in_b;
    Tensor pos;  // [max_frames x d]
    std::vector<BlockParams> blocks;
    Tensor out_w, out_b;

    static ModelParams init(const EncoderConfig& config, RngStream& init_stream, bool requires_grad);

    // Visits every parameter tensor under its stable checkpoint name.
    void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each_param(const std::function<void(const std::string&, const Tensor&)>& fn) const;

    ModelParams clone(bool requires_grad) const;
    void zero_grads();
};

struct EncoderOutput {
    Tensor hidden;     // [T x d]
    Tensor log_probs;  // [T x V]
    Tensor probs;      // [T x V]
};

enum class GatePolicy { EvenlySpaced, FirstN, LastN };

GatePolicy parse_gate_policy(const std::string& name);
std::string to_string(GatePolicy policy);

// Projected input y^1: features * W_in + b_in + positional rows [0, T).
Tensor input_projection(Tape& tape, const Tensor& features, const ModelParams& params);

// The block's delta contribution. The residual add lives in encoder_forward.
Tensor block_forward(Tape& tape, const Tensor& y, const BlockParams& block);

// Head on top of the final hidden state: logits -> (log_probs, probs).
EncoderOutput output_head(Tape& tape, const Tensor& hidden, const ModelParams& params);

EncoderOutput encoder_forward(Tape& tape, const Tensor& features, const ModelParams& params,
                              const GateVector& gates);

// One fresh gate per block; g = 0 with probability p_d.
GateVector sample_gates(std::int64_t num_blocks, double p_d, RngStream& stream);

// Deterministic inference gates: exactly n_ds ones placed per policy.
GateVector select_gates(std::int64_t n_ds, std::int64_t num_blocks, GatePolicy policy);

// Parameters touched by a forward pass at depth n_ds (base + n_ds blocks).
std::int64_t count_executed_params(const EncoderConfig& config, std::int64_t n_ds);

}  // namespace dld
