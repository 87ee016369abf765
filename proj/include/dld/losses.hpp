// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: per-frame forward KL against a frozen reference
// distribution, CTC over blank-augmented alignments, and their unweighted
// sum. All probability math runs in log space.
#pragma once

#include <cstdint>
#include <vector>

#include "dld/tensor.hpp"

namespace dld {

constexpr std::int32_t kBlank = 0;

struct CtcTarget {
    std::vector<std::int32_t> tokens;  // values in [1, V-1]; never blank

    std::int64_t length() const { return static_cast<std::int64_t>(tokens.size()); }
    void validate(std::int64_t vocab_size, std::int32_t blank = kBlank) const;
};

// Minimum frame count that admits a valid alignment: L + adjacent repeats.
std::int64_t ctc_min_frames(const CtcTarget& target);

// D_KL(ref || student) averaged over the T frames. The reference side must
// carry no gradient; gradient flows only into the student log-probs.
Tensor kld_loss(Tape& tape, const Tensor& ref_probs, const Tensor& student_log_probs);

// Same divergence with the reference given in log space. When both sides are
// bitwise-identical tensors the result is exactly zero, which the probability
// form cannot guarantee (log(exp(x)) need not round-trip). The trainer uses
// this entry point.
Tensor kld_loss_from_log(Tape& tape, const Tensor& ref_log_probs, const Tensor& student_log_probs);

// Negative log-probability of all alignments collapsing to `target`,
// computed by the log-space forward recursion; differentiable.
Tensor ctc_loss(Tape& tape, const Tensor& log_probs, const CtcTarget& target,
                std::int32_t blank = kBlank);

struct LossReport {
    Tensor l_kld;  // scalar; zero constant when distillation is off
    Tensor l_ctc;  // scalar
    Tensor total;  // l_kld + l_ctc, exact
};

// Unweighted sum. Pass an undefined kld tensor to disable distillation
// (total aliases l_ctc and l_kld reports 0).
LossReport total_loss(Tape& tape, const Tensor& l_kld, const Tensor& l_ctc);

// Best-path decode: per-frame argmax (ties to the lowest index), collapse
// adjacent repeats, drop blanks.
std::vector<std::int32_t> greedy_ctc_decode(const Tensor& log_probs, std::int32_t blank = kBlank);

}  // namespace dld
