// SPDX-License-Identifier: Apache-2.0
//
// DLDC checkpoint container: encoder config + named f64 tensors. Optimizer
// state lives in the same table under the reserved "opt." prefix.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dld/encoder.hpp"
#include "dld/tensor.hpp"

namespace dld {

enum class TrainMode : std::uint32_t { Reference = 0, DldStudent = 1, RdStudent = 2 };

TrainMode parse_train_mode(const std::string& name);
std::string to_string(TrainMode mode);

struct RngState {
    std::string name;
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;
    bool operator==(const RngState&) const = default;
};

struct Checkpoint {
    std::uint32_t version = 1;
    EncoderConfig config;
    TrainMode mode = TrainMode::Reference;
    std::uint64_t step = 0;
    std::int32_t blank = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;  // stable order; "opt.*" reserved
    std::vector<RngState> rng_states;

    const Tensor* find(const std::string& name) const;

    // Rebuilds ModelParams from the non-"opt." tensors (deep copies).
    ModelParams to_model_params(bool requires_grad) const;
};

bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dld
