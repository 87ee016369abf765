// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dld/encoder.hpp"
#include "dld/errors.hpp"
#include "support.hpp"

using namespace dld;
using dld::testing::check_gradients;
using dld::testing::random_tensor;

TEST_SUITE_BEGIN("encoder");

namespace {

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.num_blocks = 2;
    c.model_dim = 8;
    c.ffn_dim = 12;
    c.vocab_size = 5;
    c.input_dim = 6;
    c.max_frames = 16;
    return c;
}

ModelParams make_params(const EncoderConfig& config, std::uint64_t seed, bool requires_grad) {
    RngStream stream = make_stream(seed, "init");
    return ModelParams::init(config, stream, requires_grad);
}

}  // namespace

TEST_CASE("block with all parameters zero returns zero delta") {
    EncoderConfig c = tiny_config();
    ModelParams p = make_params(c, 1, false);
    BlockParams& b = p.blocks[0];
    for (Tensor* t : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_gain,
                      &b.ln2_bias, &b.w1, &b.b1, &b.w2, &b.b2})
        std::fill(t->data(), t->data() + t->numel(), 0.0);
    RngStream stream = make_stream(2, "x");
    Tensor y = random_tensor({5, c.model_dim}, stream, false);
    Tape tape;
    Tensor delta = block_forward(tape, y, b);
    for (std::int64_t i = 0; i < delta.numel(); ++i) CHECK(delta.data()[i] == 0.0);
}

TEST_CASE("block with zero weights and zero LN gains is input-independent") {
    EncoderConfig c = tiny_config();
    ModelParams p = make_params(c, 3, false);
    BlockParams& b = p.blocks[0];
    for (Tensor* t : {&b.ln1_gain, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_gain, &b.w1, &b.w2})
        std::fill(t->data(), t->data() + t->numel(), 0.0);
    // biases stay; the delta must be one constant row regardless of y
    RngStream stream = make_stream(4, "x");
    Tape tape;
    Tensor d1 = block_forward(tape, random_tensor({4, c.model_dim}, stream, false), b);
    Tensor d2 = block_forward(tape, random_tensor({4, c.model_dim}, stream, false), b);
    CHECK(d1.values() == d2.values());
    for (std::int64_t i = 1; i < 4; ++i)
        for (std::int64_t j = 0; j < c.model_dim; ++j) CHECK(d1(i, j) == d1(0, j));
}

TEST_CASE("block output shape equals input shape for T in 1..8") {
    EncoderConfig c = tiny_config();
    ModelParams p = make_params(c, 5, false);
    RngStream stream = make_stream(6, "x");
    for (std::int64_t frames = 1; frames <= 8; ++frames) {
        Tape tape;
        Tensor y = random_tensor({frames, c.model_dim}, stream, false);
        Tensor delta = block_forward(tape, y, p.blocks[1]);
        CHECK(delta.shape() == y.shape());
    }
}

TEST_CASE("block gradient w.r.t. every parameter matches finite differences") {
    EncoderConfig c = tiny_config();
    c.num_blocks = 1;
    ModelParams p = make_params(c, 7, true);
    RngStream stream = make_stream(8, "x");
    Tensor y = random_tensor({4, c.model_dim}, stream, true);

    std::vector<std::pair<std::string, Tensor>> leaves{{"y", y}};
    BlockParams& b = p.blocks[0];
    leaves.emplace_back("ln1_gain", b.ln1_gain);
    leaves.emplace_back("ln1_bias", b.ln1_bias);
    leaves.emplace_back("wq", b.wq);
    leaves.emplace_back("wk", b.wk);
    leaves.emplace_back("wv", b.wv);
    leaves.emplace_back("wo", b.wo);
    leaves.emplace_back("ln2_gain", b.ln2_gain);
    leaves.emplace_back("ln2_bias", b.ln2_bias);
    leaves.emplace_back("w1", b.w1);
    leaves.emplace_back("b1", b.b1);
    leaves.emplace_back("w2", b.w2);
    leaves.emplace_back("b2", b.b2);

    auto forward = [&] {
        Tape tape;
        return tape.sum(block_forward(tape, y, b)).value();
    };
    auto backward = [&] {
        Tape tape;
        tape.backward(tape.sum(block_forward(tape, y, b)));
    };
    const auto result = check_gradients(forward, leaves, backward);
    INFO("worst at " << result.where);
    CHECK(result.max_rel_err < 1e-5);
}

TEST_CASE("sample_gates endpoints") {
    RngStream stream = make_stream(9, "gates");
    CHECK(sample_gates(6, 0.0, stream) == GateVector::ones(6));
    CHECK(sample_gates(6, 1.0, stream) == GateVector::zeros(6));
    CHECK_THROWS_AS(sample_gates(6, 1.5, stream), ContractError);
}

TEST_CASE("mean depth over 1e4 draws with N=12, p_d=0.5 lies in [5.85, 6.15]") {
    RngStream stream = make_stream(10, "gates");
    double total = 0.0;
    for (int i = 0; i < 10000; ++i)
        total += static_cast<double>(sample_gates(12, 0.5, stream).active_count());
    const double mean = total / 10000.0;
    CHECK(mean > 5.85);
    CHECK(mean < 6.15);
}

TEST_CASE("active_count equals the sum of gates") {
    RngStream stream = make_stream(11, "gates");
    for (int trial = 0; trial < 50; ++trial) {
        GateVector gv = sample_gates(9, 0.4, stream);
        std::int64_t manual = 0;
        for (auto g : gv.gates) manual += g;
        CHECK(gv.active_count() == manual);
    }
}

TEST_CASE("select_gates whole-range and empty cases") {
    for (GatePolicy policy : {GatePolicy::EvenlySpaced, GatePolicy::FirstN, GatePolicy::LastN}) {
        CHECK(select_gates(5, 5, policy) == GateVector::ones(5));
        CHECK(select_gates(0, 5, policy) == GateVector::zeros(5));
    }
    CHECK_THROWS_AS(select_gates(7, 5, GatePolicy::FirstN), ContractError);
}

TEST_CASE("select_gates first-n and last-n placement") {
    CHECK(select_gates(3, 6, GatePolicy::FirstN).gates ==
          std::vector<std::uint8_t>{1, 1, 1, 0, 0, 0});
    CHECK(select_gates(3, 6, GatePolicy::LastN).gates ==
          std::vector<std::uint8_t>{0, 0, 0, 1, 1, 1});
}

TEST_CASE("evenly-spaced picks round(k*N/n)-1") {
    CHECK(select_gates(3, 6, GatePolicy::EvenlySpaced).gates ==
          std::vector<std::uint8_t>{0, 1, 0, 1, 0, 1});
    CHECK(select_gates(2, 6, GatePolicy::EvenlySpaced).gates ==
          std::vector<std::uint8_t>{0, 0, 1, 0, 0, 1});
    CHECK(select_gates(1, 6, GatePolicy::EvenlySpaced).gates ==
          std::vector<std::uint8_t>{0, 0, 0, 0, 0, 1});
}

TEST_CASE("select_gates always places exactly n ones") {
    for (std::int64_t n_blocks = 1; n_blocks <= 16; ++n_blocks)
        for (std::int64_t depth = 0; depth <= n_blocks; ++depth)
            for (GatePolicy policy :
                 {GatePolicy::EvenlySpaced, GatePolicy::FirstN, GatePolicy::LastN}) {
                GateVector gv = select_gates(depth, n_blocks, policy);
                CHECK(gv.active_count() == depth);
                CHECK(gv.size() == n_blocks);
            }
}

TEST_CASE("all-zero gates: hidden equals the projected input bitwise") {
    EncoderConfig c = tiny_config();
    ModelParams p = make_params(c, 12, false);
    RngStream stream = make_stream(13, "x");
    Tensor features = random_tensor({7, c.input_dim}, stream, false);
    Tape tape;
    EncoderOutput out = encoder_forward(tape, features, p, GateVector::zeros(c.num_blocks));
    Tensor projected = input_projection(tape, features, p);
    CHECK(out.hidden.values() == projected.values());
}

TEST_CASE("all-one gates: equals the manually chained ungated stack bitwise") {
    EncoderConfig c = tiny_config();
    c.num_blocks = 3;
    ModelParams p = make_params(c, 14, false);
    RngStream stream = make_stream(15, "x");
    Tensor features = random_tensor({6, c.input_dim}, stream, false);

    Tape tape;
    EncoderOutput gated = encoder_forward(tape, features, p, GateVector::ones(c.num_blocks));

    Tensor y = input_projection(tape, features, p);
    for (const auto& block : p.blocks) y = tape.add(y, block_forward(tape, y, block));
    EncoderOutput manual = output_head(tape, y, p);

    CHECK(gated.hidden.values() == manual.hidden.values());
    CHECK(gated.log_probs.values() == manual.log_probs.values());
    CHECK(gated.probs.values() == manual.probs.values());
}

TEST_CASE("prefix-gate composition matches block-by-block chaining") {
    EncoderConfig c = tiny_config();
    c.num_blocks = 4;
    ModelParams p = make_params(c, 16, false);
    RngStream stream = make_stream(17, "x");
    RngStream gate_stream = make_stream(18, "gates");
    for (int trial = 0; trial < 5; ++trial) {
        Tensor features = random_tensor({5, c.input_dim}, stream, false);
        GateVector gates = sample_gates(c.num_blocks, 0.5, gate_stream);
        Tape tape;
        EncoderOutput direct = encoder_forward(tape, features, p, gates);
        Tensor y = input_projection(tape, features, p);
        for (std::int64_t i = 0; i < c.num_blocks; ++i)
            if (gates.gates[static_cast<std::size_t>(i)])
                y = tape.add(y, block_forward(tape, y, p.blocks[static_cast<std::size_t>(i)]));
        CHECK(direct.hidden.values() == y.values());
    }
}

TEST_CASE("probability rows sum to 1 within 1e-12") {
    EncoderConfig c = tiny_config();
    ModelParams p = make_params(c, 19, false);
    RngStream stream = make_stream(20, "x");
    Tensor features = random_tensor({9, c.input_dim}, stream, false);
    Tape tape;
    EncoderOutput out = encoder_forward(tape, features, p, GateVector::ones(c.num_blocks));
    for (std::int64_t t = 0; t < 9; ++t) {
        double sum = 0.0;
        for (std::int64_t v = 0; v < c.vocab_size; ++v) sum += out.probs(t, v);
        CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("skipped blocks receive exactly zero gradient") {
    EncoderConfig c = tiny_config();
    c.num_blocks = 3;
    ModelParams p = make_params(c, 21, true);
    RngStream stream = make_stream(22, "x");
    Tensor features = random_tensor({5, c.input_dim}, stream, false);
    GateVector gates{{1, 0, 1}};
    Tape tape;
    EncoderOutput out = encoder_forward(tape, features, p, gates);
    tape.backward(tape.mean(out.log_probs));

    auto grad_norm = [](const BlockParams& b) {
        double sq = 0.0;
        for (const Tensor* t : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_gain,
                                &b.ln2_bias, &b.w1, &b.b1, &b.w2, &b.b2}) {
            if (!t->has_grad()) continue;
            for (double g : t->grad()) sq += g * g;
        }
        return sq;
    };
    CHECK(grad_norm(p.blocks[0]) > 0.0);
    CHECK(grad_norm(p.blocks[1]) == 0.0);
    CHECK(grad_norm(p.blocks[2]) > 0.0);
}

TEST_CASE("encoder rejects mismatched gate length and oversized input") {
    EncoderConfig c = tiny_config();
    ModelParams p = make_params(c, 23, false);
    Tape tape;
    Tensor features = Tensor::zeros({4, c.input_dim});
    CHECK_THROWS_AS(encoder_forward(tape, features, p, GateVector::ones(c.num_blocks + 1)),
                    ContractError);
    Tensor too_long = Tensor::zeros({c.max_frames + 1, c.input_dim});
    CHECK_THROWS_AS(encoder_forward(tape, too_long, p, GateVector::ones(c.num_blocks)),
                    ContractError);
}

TEST_CASE("count_executed_params is exact and affine in depth") {
    EncoderConfig c = tiny_config();
    const std::int64_t d = c.model_dim, ffn = c.ffn_dim;
    const std::int64_t base =
        (c.input_dim * d + d) + c.max_frames * d + (d * c.vocab_size + c.vocab_size);
    const std::int64_t per_block = 4 * d * d + 4 * d + (d * ffn + ffn) + (ffn * d + d);
    CHECK(count_executed_params(c, 0) == base);
    for (std::int64_t n = 0; n + 2 <= c.num_blocks; ++n)
        CHECK(count_executed_params(c, n + 2) - count_executed_params(c, n + 1) ==
              count_executed_params(c, n + 1) - count_executed_params(c, n));
    CHECK(count_executed_params(c, 2) == base + 2 * per_block);

    // counted params must equal the tensors a full-depth pass touches
    ModelParams p = make_params(c, 24, false);
    std::int64_t total = 0;
    p.for_each_param([&](const std::string&, const Tensor& t) { total += t.numel(); });
    CHECK(count_executed_params(c, c.num_blocks) == total);
}

TEST_CASE("encoder forward is pure given inputs") {
    EncoderConfig c = tiny_config();
    ModelParams p = make_params(c, 25, false);
    RngStream stream = make_stream(26, "x");
    Tensor features = random_tensor({6, c.input_dim}, stream, false);
    Tape t1, t2;
    EncoderOutput a = encoder_forward(t1, features, p, GateVector::ones(c.num_blocks));
    EncoderOutput b = encoder_forward(t2, features, p, GateVector::ones(c.num_blocks));
    CHECK(a.log_probs.values() == b.log_probs.values());
}

TEST_SUITE_END();
