// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic transcription data. Each vocabulary token owns a
// fixed feature template; a sample emits each target token for a few frames
// with additive Gaussian noise. Durations >= 2 keep every sample CTC-feasible
// regardless of adjacent repeats.
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dld/losses.hpp"
#include "dld/rng.hpp"
#include "dld/tensor.hpp"

namespace dld {

struct DatasetConfig {
    std::int64_t vocab_size = 8;  // real tokens, excluding blank
    std::int64_t input_dim = 16;
    std::int64_t min_duration = 2;  // frames per token
    std::int64_t max_duration = 4;
    std::int64_t min_tokens = 3;  // tokens per sample
    std::int64_t max_tokens = 8;
    double noise_sigma = 0.3;
    std::int64_t num_train = 2000;
    std::int64_t num_test = 400;
    std::uint64_t seed = 1;

    void validate() const;
    bool operator==(const DatasetConfig&) const = default;
};

struct SyntheticSample {
    std::uint64_t sample_id = 0;
    Tensor features;  // [T x input_dim]
    CtcTarget target;

    std::int64_t frames() const { return features.dim(0); }
};

struct Dataset {
    DatasetConfig config;
    std::vector<SyntheticSample> train;
    std::vector<SyntheticSample> test;
    Tensor templates;  // [vocab_size x input_dim], row v-1 is token v

    std::int64_t max_frames() const;
};

Dataset generate_dataset(const DatasetConfig& config);

// Batches of identical frame count (no padding), shuffled per epoch_seed.
using Batch = std::vector<const SyntheticSample*>;
std::vector<Batch> batch_iter(const std::vector<SyntheticSample>& samples, std::int64_t batch_size,
                              std::uint64_t epoch_seed);

// DLDS container.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace dld
