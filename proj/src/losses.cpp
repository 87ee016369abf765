// SPDX-License-Identifier: Apache-2.0
#include "dld/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dld/errors.hpp"

namespace dld {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::fabs(a - b)));
}

void check_dist_pair(const Tensor& ref, const Tensor& student, const char* op) {
    if (!ref.defined() || !student.defined()) throw ContractError(std::string(op) + ": undefined operand");
    if (ref.rank() != 2 || student.rank() != 2 || ref.shape() != student.shape())
        throw ShapeError(std::string(op) + ": shapes " + shape_str(ref.shape()) + " and " +
                         shape_str(student.shape()) + " must be equal rank-2");
    if (ref.requires_grad())
        throw ContractError(std::string(op) + ": reference distribution must be frozen (no gradient)");
}

void check_rows_normalized(const Tensor& probs, const char* op) {
    const std::int64_t frames = probs.dim(0), vocab = probs.dim(1);
    for (std::int64_t t = 0; t < frames; ++t) {
        double s = 0.0;
        for (std::int64_t v = 0; v < vocab; ++v) s += probs(t, v);
        if (std::fabs(s - 1.0) > 1e-6)
            throw ContractError(std::string(op) + ": reference row " + std::to_string(t) +
                                " sums to " + std::to_string(s) + ", not a distribution");
    }
}

// Shared backward: d(loss)/d(student_log_probs)[t,v] = -p_ref[t,v] / T.
void record_kld_backward(Tape& tape, const std::vector<double>& ref_probs, const Tensor& student,
                         const Tensor& out, std::int64_t frames) {
    auto sn = student.node();
    auto on = out.node();
    tape.record({sn, on}, on, [sn, on, ref_probs, frames] {
        if (on->grad.empty()) return;
        ensure_grad(*sn);
        const double g = on->grad[0] / static_cast<double>(frames);
        for (std::size_t i = 0; i < ref_probs.size(); ++i) sn->grad[i] -= g * ref_probs[i];
    });
}

}  // namespace

void CtcTarget::validate(std::int64_t vocab_size, std::int32_t blank) const {
    if (tokens.empty()) throw ContractError("ctc target: must contain at least one token");
    for (auto t : tokens) {
        if (t == blank) throw ContractError("ctc target: token equals blank index");
        if (t < 0 || t >= vocab_size)
            throw ContractError("ctc target: token " + std::to_string(t) + " outside [0," +
                                std::to_string(vocab_size) + ")");
    }
}

std::int64_t ctc_min_frames(const CtcTarget& target) {
    std::int64_t repeats = 0;
    for (std::size_t i = 1; i < target.tokens.size(); ++i)
        if (target.tokens[i] == target.tokens[i - 1]) ++repeats;
    return target.length() + repeats;
}

Tensor kld_loss(Tape& tape, const Tensor& ref_probs, const Tensor& student_log_probs) {
    check_dist_pair(ref_probs, student_log_probs, "kld_loss");
    check_rows_normalized(ref_probs, "kld_loss");
    const std::int64_t frames = ref_probs.dim(0);
    const std::int64_t n = ref_probs.numel();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double p = ref_probs.data()[i];
        if (p > 0.0) acc += p * (std::log(p) - student_log_probs.data()[i]);
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(frames));
    if (student_log_probs.requires_grad()) {
        out.set_requires_grad(true);
        record_kld_backward(tape, ref_probs.node()->data, student_log_probs, out, frames);
    }
    return out;
}

Tensor kld_loss_from_log(Tape& tape, const Tensor& ref_log_probs, const Tensor& student_log_probs) {
    check_dist_pair(ref_log_probs, student_log_probs, "kld_loss");
    const std::int64_t frames = ref_log_probs.dim(0);
    const std::int64_t n = ref_log_probs.numel();
    std::vector<double> probs(static_cast<std::size_t>(n));
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double lp = ref_log_probs.data()[i];
        const double p = std::exp(lp);
        probs[static_cast<std::size_t>(i)] = p;
        acc += p * (lp - student_log_probs.data()[i]);
    }
    // normalization check on the implied probabilities
    for (std::int64_t t = 0; t < frames; ++t) {
        double s = 0.0;
        const std::int64_t vocab = ref_log_probs.dim(1);
        for (std::int64_t v = 0; v < vocab; ++v) s += probs[static_cast<std::size_t>(t * vocab + v)];
        if (std::fabs(s - 1.0) > 1e-6)
            throw ContractError("kld_loss: reference log-probs row " + std::to_string(t) +
                                " is not normalized");
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(frames));
    if (student_log_probs.requires_grad()) {
        out.set_requires_grad(true);
        record_kld_backward(tape, probs, student_log_probs, out, frames);
    }
    return out;
}

Tensor ctc_loss(Tape& tape, const Tensor& log_probs, const CtcTarget& target, std::int32_t blank) {
    if (!log_probs.defined() || log_probs.rank() != 2)
        throw ContractError("ctc_loss: log_probs must be a [T x V] tensor");
    const std::int64_t frames = log_probs.dim(0);
    const std::int64_t vocab = log_probs.dim(1);
    if (blank < 0 || blank >= vocab) throw ContractError("ctc_loss: blank index outside vocabulary");
    target.validate(vocab, blank);
    const std::int64_t min_frames = ctc_min_frames(target);
    if (frames < min_frames)
        throw CtcInfeasibleError("ctc_loss: target of length " + std::to_string(target.length()) +
                                 " needs at least " + std::to_string(min_frames) + " frames, got " +
                                 std::to_string(frames));

    // extended label sequence: blank, t1, blank, t2, ..., blank
    const std::int64_t ext = 2 * target.length() + 1;
    std::vector<std::int32_t> labels(static_cast<std::size_t>(ext), blank);
    for (std::int64_t s = 1; s < ext; s += 2)
        labels[static_cast<std::size_t>(s)] = target.tokens[static_cast<std::size_t>(s / 2)];
    auto skip_allowed = [&](std::int64_t s) {
        // s-2 -> s transition skipping the blank between two distinct tokens
        return s >= 2 && labels[static_cast<std::size_t>(s)] != blank &&
               labels[static_cast<std::size_t>(s)] != labels[static_cast<std::size_t>(s - 2)];
    };
    const double* lp = log_probs.data();
    auto lp_at = [&](std::int64_t t, std::int64_t s) {
        return lp[t * vocab + labels[static_cast<std::size_t>(s)]];
    };

    // forward (alpha) recursion, emission at t included
    std::vector<double> alpha(static_cast<std::size_t>(frames * ext), kNegInf);
    alpha[0] = lp_at(0, 0);
    if (ext > 1) alpha[1] = lp_at(0, 1);
    for (std::int64_t t = 1; t < frames; ++t) {
        for (std::int64_t s = 0; s < ext; ++s) {
            double a = alpha[(t - 1) * ext + s];
            if (s >= 1) a = log_add(a, alpha[(t - 1) * ext + s - 1]);
            if (skip_allowed(s)) a = log_add(a, alpha[(t - 1) * ext + s - 2]);
            alpha[t * ext + s] = a == kNegInf ? kNegInf : a + lp_at(t, s);
        }
    }
    double log_total = alpha[(frames - 1) * ext + ext - 1];
    if (ext > 1) log_total = log_add(log_total, alpha[(frames - 1) * ext + ext - 2]);
    if (!std::isfinite(log_total))
        throw CtcInfeasibleError("ctc_loss: no valid alignment has positive probability");

    Tensor out = Tensor::scalar(-log_total);
    if (log_probs.requires_grad()) {
        out.set_requires_grad(true);
        // suffix (beta) recursion, emission at t excluded; then
        // d(-log P)/d(lp[t,v]) = -exp(logsum_{s: label_s=v} alpha[t,s]+beta[t,s] - log P)
        std::vector<double> beta(static_cast<std::size_t>(frames * ext), kNegInf);
        beta[(frames - 1) * ext + ext - 1] = 0.0;
        if (ext > 1) beta[(frames - 1) * ext + ext - 2] = 0.0;
        for (std::int64_t t = frames - 2; t >= 0; --t) {
            for (std::int64_t s = 0; s < ext; ++s) {
                double b = beta[(t + 1) * ext + s] == kNegInf
                               ? kNegInf
                               : beta[(t + 1) * ext + s] + lp_at(t + 1, s);
                if (s + 1 < ext && beta[(t + 1) * ext + s + 1] != kNegInf)
                    b = log_add(b, beta[(t + 1) * ext + s + 1] + lp_at(t + 1, s + 1));
                if (s + 2 < ext && skip_allowed(s + 2) && beta[(t + 1) * ext + s + 2] != kNegInf)
                    b = log_add(b, beta[(t + 1) * ext + s + 2] + lp_at(t + 1, s + 2));
                beta[t * ext + s] = b;
            }
        }
        auto ln = log_probs.node();
        auto on = out.node();
        tape.record({ln, on}, on, [ln, on, alpha = std::move(alpha), beta = std::move(beta), labels,
                               frames, ext, vocab, log_total] {
            if (on->grad.empty()) return;
            ensure_grad(*ln);
            const double g = on->grad[0];
            std::vector<double> acc(static_cast<std::size_t>(vocab));
            for (std::int64_t t = 0; t < frames; ++t) {
                std::fill(acc.begin(), acc.end(), kNegInf);
                for (std::int64_t s = 0; s < ext; ++s) {
                    const double ab = alpha[t * ext + s] + beta[t * ext + s];
                    if (ab == kNegInf) continue;
                    auto& slot = acc[static_cast<std::size_t>(labels[static_cast<std::size_t>(s)])];
                    slot = log_add(slot, ab);
                }
                for (std::int64_t v = 0; v < vocab; ++v) {
                    if (acc[static_cast<std::size_t>(v)] == kNegInf) continue;
                    ln->grad[t * vocab + v] -=
                        g * std::exp(acc[static_cast<std::size_t>(v)] - log_total);
                }
            }
        });
    }
    return out;
}

LossReport total_loss(Tape& tape, const Tensor& l_kld, const Tensor& l_ctc) {
    if (!l_ctc.defined() || l_ctc.numel() != 1)
        throw ContractError("total_loss: ctc term must be a scalar");
    LossReport report;
    report.l_ctc = l_ctc;
    if (l_kld.defined()) {
        if (l_kld.numel() != 1) throw ContractError("total_loss: kld term must be a scalar");
        report.l_kld = l_kld;
        report.total = tape.add(l_kld, l_ctc);
    } else {
        report.l_kld = Tensor::scalar(0.0);
        report.total = l_ctc;
    }
    return report;
}

std::vector<std::int32_t> greedy_ctc_decode(const Tensor& log_probs, std::int32_t blank) {
    if (!log_probs.defined() || log_probs.rank() != 2)
        throw ContractError("greedy_ctc_decode: log_probs must be a [T x V] tensor");
    const std::int64_t frames = log_probs.dim(0);
    const std::int64_t vocab = log_probs.dim(1);
    std::vector<std::int32_t> out;
    std::int32_t prev = -1;
    for (std::int64_t t = 0; t < frames; ++t) {
        std::int64_t best = 0;
        for (std::int64_t v = 1; v < vocab; ++v)
            if (log_probs(t, v) > log_probs(t, best)) best = v;
        const auto label = static_cast<std::int32_t>(best);
        if (label != prev && label != blank) out.push_back(label);
        prev = label;
    }
    return out;
}

}  // namespace dld
