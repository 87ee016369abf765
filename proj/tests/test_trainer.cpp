// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dld/errors.hpp"
#include "dld/eval.hpp"
#include "dld/trainer.hpp"

using namespace dld;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("trainer");

namespace {

DatasetConfig tiny_data_config() {
    DatasetConfig c;
    c.vocab_size = 3;
    c.input_dim = 5;
    c.min_tokens = 2;
    c.max_tokens = 4;
    c.num_train = 24;
    c.num_test = 8;
    c.noise_sigma = 0.1;
    c.seed = 3;
    return c;
}

EncoderConfig tiny_encoder_config(const Dataset& ds) {
    EncoderConfig e;
    e.num_blocks = 2;
    e.model_dim = 8;
    e.ffn_dim = 12;
    e.vocab_size = ds.config.vocab_size + 1;
    e.input_dim = ds.config.input_dim;
    e.max_frames = ds.max_frames();
    return e;
}

TrainConfig quick_train_config(std::int64_t epochs) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 8;
    t.warmup_steps = 5;
    t.peak_lr = 2e-3;
    t.seed = 11;
    return t;
}

std::string file_bytes(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "dld_trainer_tests";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("lr schedule: warmup endpoints and exponential decay") {
    TrainConfig c;
    c.peak_lr = 0.5;
    c.warmup_steps = 10;
    c.decay_rate = 0.9;
    CHECK(lr_schedule(0, c) == 0.0);
    CHECK(lr_schedule(5, c) == doctest::Approx(0.25));
    CHECK(lr_schedule(10, c) == doctest::Approx(0.5));
    for (int k = 1; k < 20; ++k) {
        CHECK(lr_schedule(10 + k, c) == doctest::Approx(0.5 * std::pow(0.9, k)));
        CHECK(lr_schedule(10 + k, c) < lr_schedule(10 + k - 1, c));
    }
}

TEST_CASE("auto decay rate drops the lr 10x over the run") {
    TrainConfig c;
    c.warmup_steps = 100;
    c.decay_rate = 0.0;
    TrainConfig resolved = resolve_train_config(c, 1100);
    CHECK(lr_schedule(1100, resolved) == doctest::Approx(0.1 * resolved.peak_lr).epsilon(1e-9));
}

TEST_CASE("adam: zero gradients and zero weight decay leave params unchanged") {
    EncoderConfig e;
    e.num_blocks = 1;
    e.model_dim = 4;
    e.ffn_dim = 4;
    e.vocab_size = 3;
    e.input_dim = 3;
    e.max_frames = 4;
    RngStream stream = make_stream(1, "init");
    ModelParams params = ModelParams::init(e, stream, true);
    ModelParams before = params.clone(false);
    AdamState state = AdamState::init(params);
    TrainConfig c;
    c.weight_decay = 0.0;
    params.for_each_param([](const std::string&, Tensor& t) { (void)t.grad_data(); });
    adam_step(params, state, 0.1, c);
    bool all_equal = true;
    std::size_t idx = 0;
    params.for_each_param([&](const std::string& name, Tensor& t) {
        const Tensor* b = nullptr;
        before.for_each_param([&](const std::string& n2, Tensor& t2) {
            if (n2 == name) b = &t2;
        });
        REQUIRE(b != nullptr);
        if (t.values() != b->values()) all_equal = false;
        ++idx;
    });
    CHECK(all_equal);
}

TEST_CASE("adam first step moves a scalar by about -lr*sign(g)") {
    EncoderConfig e;
    e.num_blocks = 1;
    e.model_dim = 1;
    e.ffn_dim = 1;
    e.vocab_size = 2;
    e.input_dim = 1;
    e.max_frames = 1;
    RngStream stream = make_stream(2, "init");
    ModelParams params = ModelParams::init(e, stream, true);
    AdamState state = AdamState::init(params);
    TrainConfig c;
    c.weight_decay = 0.0;
    const double before = params.in_w.value();
    params.for_each_param([](const std::string&, Tensor& t) {
        double* g = t.grad_data();
        for (std::int64_t i = 0; i < t.numel(); ++i) g[i] = 3.7;  // constant positive gradient
    });
    adam_step(params, state, 0.01, c);
    CHECK(params.in_w.value() == doctest::Approx(before - 0.01).epsilon(1e-6));
}

TEST_CASE("trainer rejects invalid configs and mismatched datasets") {
    Dataset ds = generate_dataset(tiny_data_config());
    EncoderConfig e = tiny_encoder_config(ds);
    TrainConfig t = quick_train_config(1);
    t.p_d = 2.0;
    CHECK_THROWS_AS(train_reference(ds, e, t), ContractError);
    t = quick_train_config(1);
    EncoderConfig wrong = e;
    wrong.vocab_size = 2;
    CHECK_THROWS_AS(train_reference(ds, wrong, t), ContractError);
}

TEST_CASE("zero-epoch run produces an initialization checkpoint and empty log") {
    Dataset ds = generate_dataset(tiny_data_config());
    TrainResult result = train_reference(ds, tiny_encoder_config(ds), quick_train_config(0));
    CHECK(result.log.empty());
    CHECK(result.checkpoint.step == 0);
    CHECK(result.periodic.empty());
    CHECK(result.checkpoint.find("input.w") != nullptr);
    CHECK(result.checkpoint.find("opt.m.input.w") != nullptr);
}

TEST_CASE("training runs are bitwise deterministic") {
    Dataset ds = generate_dataset(tiny_data_config());
    EncoderConfig e = tiny_encoder_config(ds);
    TrainConfig t = quick_train_config(2);
    TrainResult a = train_reference(ds, e, t);
    TrainResult b = train_reference(ds, e, t);
    CHECK(checkpoints_equal(a.checkpoint, b.checkpoint));
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].l_ctc == b.log[i].l_ctc);
        CHECK(a.log[i].test_ter == b.log[i].test_ter);
    }
}

TEST_CASE("checkpoint save/load round-trips bitwise, optimizer state included") {
    Dataset ds = generate_dataset(tiny_data_config());
    TrainResult result = train_reference(ds, tiny_encoder_config(ds), quick_train_config(1));
    const fs::path path = temp_dir() / "ref.dldc";
    save_checkpoint(result.checkpoint, path);
    Checkpoint loaded = load_checkpoint(path);
    CHECK(checkpoints_equal(loaded, result.checkpoint));
    const fs::path again = temp_dir() / "ref2.dldc";
    save_checkpoint(loaded, again);
    CHECK(file_bytes(path) == file_bytes(again));
}

TEST_CASE("epoch log csv bytes are reproducible") {
    Dataset ds = generate_dataset(tiny_data_config());
    EncoderConfig e = tiny_encoder_config(ds);
    TrainConfig t = quick_train_config(2);
    const fs::path log1 = temp_dir() / "log1.csv";
    const fs::path log2 = temp_dir() / "log2.csv";
    write_epoch_log_csv(train_reference(ds, e, t).log, log1);
    write_epoch_log_csv(train_reference(ds, e, t).log, log2);
    CHECK(file_bytes(log1) == file_bytes(log2));
    std::ifstream is(log1);
    std::string header;
    std::getline(is, header);
    CHECK(header == "step,epoch,lr,l_kld,l_ctc,total,test_ter_full_depth");
}

TEST_CASE("dld training: reference checkpoint stays frozen, kld at step 0 with p_d=0 is exactly 0") {
    Dataset ds = generate_dataset(tiny_data_config());
    EncoderConfig e = tiny_encoder_config(ds);
    Checkpoint ref = train_reference(ds, e, quick_train_config(2)).checkpoint;
    Checkpoint ref_copy;
    {
        const fs::path path = temp_dir() / "freeze.dldc";
        save_checkpoint(ref, path);
        ref_copy = load_checkpoint(path);
    }

    TrainConfig t = quick_train_config(1);
    t.p_d = 0.0;  // full depth every step; student starts as an exact copy
    double first_step_kld = -1.0;
    TrainHooks hooks;
    hooks.after_backward = [&](std::int64_t step, const GateVector& gates, const ModelParams&) {
        if (step == 1) {
            CHECK(gates.active_count() == gates.size());
            (void)gates;
        }
    };
    TrainResult result = train_student_dld(ds, ref, t, hooks);
    // the first logged epoch averages over steps; recover step 0 exactly by
    // rerunning one batch worth: epoch log of a 1-batch dataset would do, but
    // the initialization identity is visible through the first epoch too when
    // the learning rate starts at 0 for warmup... instead check the invariant
    // directly: identical weights and all-on gates give exactly zero kld.
    {
        Tape tape;
        ModelParams student = ref.to_model_params(true);
        ModelParams frozen = ref.to_model_params(false);
        const SyntheticSample& sample = ds.train.front();
        EncoderOutput s_out = encoder_forward(tape, sample.features, student, GateVector::ones(e.num_blocks));
        EncoderOutput r_out = encoder_forward(tape, sample.features, frozen, GateVector::ones(e.num_blocks));
        first_step_kld = kld_loss_from_log(tape, r_out.log_probs, s_out.log_probs).value();
    }
    CHECK(first_step_kld == 0.0);
    CHECK(checkpoints_equal(ref, ref_copy));  // training never touched the reference
    CHECK(result.checkpoint.mode == TrainMode::DldStudent);
}

TEST_CASE("dld first-step batch kld is exactly zero with p_d=0") {
    // one-batch dataset so the first epoch log row is the first step
    DatasetConfig dc = tiny_data_config();
    dc.num_train = 4;
    dc.num_test = 2;
    dc.min_tokens = 2;
    dc.max_tokens = 2;
    dc.min_duration = 3;
    dc.max_duration = 3;  // equal frame counts -> a single bucket
    Dataset ds = generate_dataset(dc);
    EncoderConfig e = tiny_encoder_config(ds);
    Checkpoint ref = train_reference(ds, e, quick_train_config(1)).checkpoint;
    TrainConfig t = quick_train_config(1);
    t.p_d = 0.0;
    t.batch_size = 8;
    t.warmup_steps = 1;
    TrainResult result = train_student_dld(ds, ref, t);
    REQUIRE(result.log.size() == 1);
    CHECK(result.log[0].l_kld == 0.0);
}

TEST_CASE("rd training logs zero kld in every epoch") {
    Dataset ds = generate_dataset(tiny_data_config());
    EncoderConfig e = tiny_encoder_config(ds);
    TrainResult result = train_student_rd(ds, e, quick_train_config(2));
    for (const auto& row : result.log) {
        CHECK(row.l_kld == 0.0);
        CHECK(row.total == row.l_ctc);
    }
}

TEST_CASE("rd and dld draw identical gate sequences from the shared stream") {
    Dataset ds = generate_dataset(tiny_data_config());
    EncoderConfig e = tiny_encoder_config(ds);
    Checkpoint ref = train_reference(ds, e, quick_train_config(1)).checkpoint;
    TrainConfig t = quick_train_config(2);

    std::vector<GateVector> dld_gates, rd_gates;
    TrainHooks dld_hooks, rd_hooks;
    dld_hooks.after_backward = [&](std::int64_t, const GateVector& g, const ModelParams&) {
        dld_gates.push_back(g);
    };
    rd_hooks.after_backward = [&](std::int64_t, const GateVector& g, const ModelParams&) {
        rd_gates.push_back(g);
    };
    train_student_dld(ds, ref, t, dld_hooks);
    train_student_rd(ds, e, t, nullptr, rd_hooks);
    CHECK(dld_gates == rd_gates);
}

TEST_CASE("skipped blocks receive zero gradient at every step") {
    Dataset ds = generate_dataset(tiny_data_config());
    EncoderConfig e = tiny_encoder_config(ds);
    Checkpoint ref = train_reference(ds, e, quick_train_config(1)).checkpoint;
    TrainConfig t = quick_train_config(1);
    bool saw_skip = false, saw_exec = false;
    TrainHooks hooks;
    hooks.after_backward = [&](std::int64_t, const GateVector& gates, const ModelParams& params) {
        for (std::int64_t i = 0; i < gates.size(); ++i) {
            double sq = 0.0;
            const BlockParams& b = params.blocks[static_cast<std::size_t>(i)];
            for (const Tensor* w : {&b.wq, &b.wo, &b.w1, &b.w2, &b.ln1_gain, &b.ln2_bias}) {
                if (!w->has_grad()) continue;
                for (double g : w->grad()) sq += g * g;
            }
            if (gates.gates[static_cast<std::size_t>(i)]) {
                if (sq > 0.0) saw_exec = true;
            } else {
                CHECK(sq == 0.0);
                saw_skip = true;
            }
        }
    };
    train_student_dld(ds, ref, t, hooks);
    CHECK(saw_skip);
    CHECK(saw_exec);
}

TEST_CASE("logged totals satisfy the loss accounting identity") {
    Dataset ds = generate_dataset(tiny_data_config());
    EncoderConfig e = tiny_encoder_config(ds);
    Checkpoint ref = train_reference(ds, e, quick_train_config(1)).checkpoint;
    TrainResult result = train_student_dld(ds, ref, quick_train_config(2));
    for (const auto& row : result.log) CHECK(row.total == row.l_kld + row.l_ctc);
}

TEST_CASE("reference training solves a small separable task") {
    DatasetConfig dc;
    dc.vocab_size = 4;
    dc.input_dim = 8;
    dc.noise_sigma = 0.0;
    dc.num_train = 200;
    dc.num_test = 40;
    dc.min_tokens = 2;
    dc.max_tokens = 5;
    dc.seed = 21;
    Dataset ds = generate_dataset(dc);
    EncoderConfig e;
    e.num_blocks = 2;
    e.model_dim = 16;
    e.ffn_dim = 32;
    e.vocab_size = dc.vocab_size + 1;
    e.input_dim = dc.input_dim;
    e.max_frames = ds.max_frames();
    TrainConfig t;
    t.epochs = 50;
    t.batch_size = 16;
    t.peak_lr = 3e-3;
    t.warmup_steps = 50;
    t.seed = 9;
    TrainResult result = train_reference(ds, e, t);
    CHECK(result.log.back().l_ctc < 0.1);
    CHECK(result.log.back().test_ter < 0.05);
}

TEST_CASE("divergence aborts with the failing step named") {
    Dataset ds = generate_dataset(tiny_data_config());
    EncoderConfig e = tiny_encoder_config(ds);
    TrainConfig t = quick_train_config(1);
    t.peak_lr = 1e9;  // guaranteed blow-up
    t.warmup_steps = 1;
    t.clip_norm = 0.0;
    try {
        train_reference(ds, e, t);
        // a blow-up this large must either diverge or still finish; divergence
        // is the expected outcome
        WARN("expected divergence did not occur");
    } catch (const DivergenceError& err) {
        CHECK(std::string(err.what()).find("step") != std::string::npos);
    }
}

TEST_SUITE_END();
