// SPDX-License-Identifier: Apache-2.0
#include "dld/encoder.hpp"

#include <cmath>
#include <numeric>

#include "dld/errors.hpp"

namespace dld {

void EncoderConfig::validate() const {
    if (num_blocks < 1) throw ContractError("encoder config: num_blocks must be >= 1");
    if (vocab_size < 2) throw ContractError("encoder config: vocab_size must be >= 2 (blank + one token)");
    if (model_dim < 1 || ffn_dim < 1 || input_dim < 1 || max_frames < 1)
        throw ContractError("encoder config: dimensions must be positive");
}

std::int64_t GateVector::active_count() const {
    std::int64_t n = 0;
    for (auto g : gates) n += g;
    return n;
}

GatePolicy parse_gate_policy(const std::string& name) {
    if (name == "evenly-spaced") return GatePolicy::EvenlySpaced;
    if (name == "first-n") return GatePolicy::FirstN;
    if (name == "last-n") return GatePolicy::LastN;
    throw ContractError("unknown gate policy '" + name +
                        "' (valid: evenly-spaced, first-n, last-n)");
}

std::string to_string(GatePolicy policy) {
    switch (policy) {
        case GatePolicy::EvenlySpaced: return "evenly-spaced";
        case GatePolicy::FirstN: return "first-n";
        case GatePolicy::LastN: return "last-n";
    }
    return "?";
}

namespace {

Tensor normal_matrix(Shape shape, double scale, RngStream& stream, bool requires_grad) {
    Tensor t = Tensor::zeros(shape, requires_grad);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = scale * stream.next_normal();
    return t;
}

}  // namespace

ModelParams ModelParams::init(const EncoderConfig& config, RngStream& init_stream, bool requires_grad) {
    config.validate();
    const auto d = config.model_dim;
    const auto ffn = config.ffn_dim;
    ModelParams p;
    p.config = config;
    p.in_w = normal_matrix({config.input_dim, d}, 1.0 / std::sqrt(static_cast<double>(config.input_dim)),
                           init_stream, requires_grad);
    p.in_b = Tensor::zeros({d}, requires_grad);
    p.pos = normal_matrix({config.max_frames, d}, 0.02, init_stream, requires_grad);
    const double wscale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::int64_t i = 0; i < config.num_blocks; ++i) {
        BlockParams b;
        b.ln1_gain = Tensor::full({d}, 1.0, requires_grad);
        b.ln1_bias = Tensor::zeros({d}, requires_grad);
        b.wq = normal_matrix({d, d}, wscale, init_stream, requires_grad);
        b.wk = normal_matrix({d, d}, wscale, init_stream, requires_grad);
        b.wv = normal_matrix({d, d}, wscale, init_stream, requires_grad);
        b.wo = normal_matrix({d, d}, wscale, init_stream, requires_grad);
        b.ln2_gain = Tensor::full({d}, 1.0, requires_grad);
        b.ln2_bias = Tensor::zeros({d}, requires_grad);
        b.w1 = normal_matrix({d, ffn}, wscale, init_stream, requires_grad);
        b.b1 = Tensor::zeros({ffn}, requires_grad);
        b.w2 = normal_matrix({ffn, d}, 1.0 / std::sqrt(static_cast<double>(ffn)), init_stream,
                             requires_grad);
        b.b2 = Tensor::zeros({d}, requires_grad);
        p.blocks.push_back(std::move(b));
    }
    p.out_w = normal_matrix({d, config.vocab_size}, wscale, init_stream, requires_grad);
    p.out_b = Tensor::zeros({config.vocab_size}, requires_grad);
    return p;
}

namespace {

template <typename Self, typename Fn>
void visit_params(Self& self, Fn&& fn) {
    fn("input.w", self.in_w);
    fn("input.b", self.in_b);
    fn("pos", self.pos);
    for (std::size_t i = 0; i < self.blocks.size(); ++i) {
        const std::string prefix = "block" + std::to_string(i) + ".";
        auto& b = self.blocks[i];
        fn(prefix + "ln1.gain", b.ln1_gain);
        fn(prefix + "ln1.bias", b.ln1_bias);
        fn(prefix + "wq", b.wq);
        fn(prefix + "wk", b.wk);
        fn(prefix + "wv", b.wv);
        fn(prefix + "wo", b.wo);
        fn(prefix + "ln2.gain", b.ln2_gain);
        fn(prefix + "ln2.bias", b.ln2_bias);
        fn(prefix + "ffn.w1", b.w1);
        fn(prefix + "ffn.b1", b.b1);
        fn(prefix + "ffn.w2", b.w2);
        fn(prefix + "ffn.b2", b.b2);
    }
    fn("out.w", self.out_w);
    fn("out.b", self.out_b);
}

}  // namespace

void ModelParams::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_params(*this, fn);
}

void ModelParams::for_each_param(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    visit_params(*this, fn);
}

ModelParams ModelParams::clone(bool requires_grad) const {
    ModelParams out;
    out.config = config;
    auto cp = [requires_grad](const Tensor& t) {
        Tensor c = t.clone();
        c.set_requires_grad(requires_grad);
        return c;
    };
    out.in_w = cp(in_w);
    out.in_b = cp(in_b);
    out.pos = cp(pos);
    for (const auto& b : blocks) {
        BlockParams nb;
        nb.ln1_gain = cp(b.ln1_gain);
        nb.ln1_bias = cp(b.ln1_bias);
        nb.wq = cp(b.wq);
        nb.wk = cp(b.wk);
        nb.wv = cp(b.wv);
        nb.wo = cp(b.wo);
        nb.ln2_gain = cp(b.ln2_gain);
        nb.ln2_bias = cp(b.ln2_bias);
        nb.w1 = cp(b.w1);
        nb.b1 = cp(b.b1);
        nb.w2 = cp(b.w2);
        nb.b2 = cp(b.b2);
        out.blocks.push_back(std::move(nb));
    }
    out.out_w = cp(out_w);
    out.out_b = cp(out_b);
    return out;
}

void ModelParams::zero_grads() {
    for_each_param([](const std::string&, Tensor& t) { t.zero_grad(); });
}

Tensor input_projection(Tape& tape, const Tensor& features, const ModelParams& params) {
    if (features.rank() != 2 || features.dim(1) != params.config.input_dim)
        throw ShapeError("encoder: features " + shape_str(features.shape()) +
                         " incompatible with input_dim " + std::to_string(params.config.input_dim));
    const std::int64_t frames = features.dim(0);
    if (frames > params.config.max_frames)
        throw ContractError("encoder: " + std::to_string(frames) + " frames exceed max_frames " +
                            std::to_string(params.config.max_frames));
    Tensor y = tape.add(tape.matmul(features, params.in_w), params.in_b);
    std::vector<std::int64_t> rows(static_cast<std::size_t>(frames));
    std::iota(rows.begin(), rows.end(), 0);
    return tape.add(y, tape.gather_rows(params.pos, rows));
}

Tensor block_forward(Tape& tape, const Tensor& y, const BlockParams& block) {
    const std::int64_t d = block.wq.dim(0);
    if (y.rank() != 2 || y.dim(1) != d)
        throw ContractError("block_forward: input " + shape_str(y.shape()) +
                            " incompatible with model_dim " + std::to_string(d));
    // attention half keeps its inner residual: u = y + Attn(LN1(y))
    Tensor h = tape.layer_norm(y, block.ln1_gain, block.ln1_bias, kLayerNormEps);
    Tensor q = tape.matmul(h, block.wq);
    Tensor k = tape.matmul(h, block.wk);
    Tensor v = tape.matmul(h, block.wv);
    Tensor scores = tape.mul_scalar(tape.matmul(q, tape.transpose(k)),
                                    1.0 / std::sqrt(static_cast<double>(d)));
    Tensor attn = tape.softmax(scores, 1);
    Tensor ctx = tape.matmul(tape.matmul(attn, v), block.wo);
    Tensor u = tape.add(y, ctx);
    // FFN half: the outer residual is supplied by the gated add in the stack
    Tensor z = tape.layer_norm(u, block.ln2_gain, block.ln2_bias, kLayerNormEps);
    Tensor hidden = tape.gelu(tape.add(tape.matmul(z, block.w1), block.b1));
    return tape.add(tape.matmul(hidden, block.w2), block.b2);
}

EncoderOutput output_head(Tape& tape, const Tensor& hidden, const ModelParams& params) {
    Tensor logits = tape.add(tape.matmul(hidden, params.out_w), params.out_b);
    EncoderOutput out;
    out.hidden = hidden;
    out.log_probs = tape.log_softmax(logits, 1);
    out.probs = tape.softmax(logits, 1);
    return out;
}

EncoderOutput encoder_forward(Tape& tape, const Tensor& features, const ModelParams& params,
                              const GateVector& gates) {
    if (gates.size() != params.config.num_blocks)
        throw ContractError("encoder_forward: gate vector length " + std::to_string(gates.size()) +
                            " != num_blocks " + std::to_string(params.config.num_blocks));
    Tensor y = input_projection(tape, features, params);
    for (std::int64_t i = 0; i < gates.size(); ++i) {
        if (!gates.gates[static_cast<std::size_t>(i)]) continue;  // skipped, not multiplied by zero
        y = tape.add(y, block_forward(tape, y, params.blocks[static_cast<std::size_t>(i)]));
    }
    return output_head(tape, y, params);
}

GateVector sample_gates(std::int64_t num_blocks, double p_d, RngStream& stream) {
    if (!(p_d >= 0.0 && p_d <= 1.0))
        throw ContractError("sample_gates: p_d must lie in [0,1], got " + std::to_string(p_d));
    GateVector gv = GateVector::zeros(num_blocks);
    for (std::int64_t i = 0; i < num_blocks; ++i)
        gv.gates[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(stream.next_bernoulli(1.0 - p_d));
    return gv;
}

GateVector select_gates(std::int64_t n_ds, std::int64_t num_blocks, GatePolicy policy) {
    if (n_ds < 0 || n_ds > num_blocks)
        throw ContractError("select_gates: n_ds " + std::to_string(n_ds) + " outside [0," +
                            std::to_string(num_blocks) + "]");
    GateVector gv = GateVector::zeros(num_blocks);
    switch (policy) {
        case GatePolicy::FirstN:
            for (std::int64_t i = 0; i < n_ds; ++i) gv.gates[static_cast<std::size_t>(i)] = 1;
            break;
        case GatePolicy::LastN:
            for (std::int64_t i = num_blocks - n_ds; i < num_blocks; ++i)
                gv.gates[static_cast<std::size_t>(i)] = 1;
            break;
        case GatePolicy::EvenlySpaced:
            // index_k = round(k*N/n) - 1; collisions shift left to the nearest free
            // smaller index (rightward only when no smaller slot remains)
            for (std::int64_t k = 1; k <= n_ds; ++k) {
                const double exact = static_cast<double>(k * num_blocks) / static_cast<double>(n_ds);
                const std::int64_t target =
                    std::min(num_blocks - 1, std::max<std::int64_t>(0, std::llround(exact) - 1));
                std::int64_t idx = target;
                while (idx >= 0 && gv.gates[static_cast<std::size_t>(idx)]) --idx;
                if (idx < 0) {
                    idx = target + 1;
                    while (gv.gates[static_cast<std::size_t>(idx)]) ++idx;
                }
                gv.gates[static_cast<std::size_t>(idx)] = 1;
            }
            break;
    }
    return gv;
}

std::int64_t count_executed_params(const EncoderConfig& config, std::int64_t n_ds) {
    if (n_ds < 0 || n_ds > config.num_blocks)
        throw ContractError("count_executed_params: n_ds outside [0,N]");
    const auto d = config.model_dim;
    const auto ffn = config.ffn_dim;
    const std::int64_t base = (config.input_dim * d + d) + config.max_frames * d +
                              (d * config.vocab_size + config.vocab_size);
    const std::int64_t per_block = 4 * d * d + 4 * d + (d * ffn + ffn) + (ffn * d + d);
    return base + n_ds * per_block;
}

}  // namespace dld
