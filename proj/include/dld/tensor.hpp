// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit float tensors with reverse-mode autodiff on an explicit tape.
// Forward kernels are identical whether or not recording happens: an op is
// recorded only when some operand requires a gradient, so a frozen model's
// forward pass costs nothing on the tape and can never receive gradient.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dld/errors.hpp"

namespace dld {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

    double* data() { return node_->data.data(); }
    const double* data() const { return node_->data.data(); }
    const std::vector<double>& values() const { return node_->data; }

    double operator()(std::int64_t i) const { return node_->data[static_cast<std::size_t>(i)]; }
    double operator()(std::int64_t i, std::int64_t j) const {
        return node_->data[static_cast<std::size_t>(i * node_->shape[1] + j)];
    }

    // Scalar extraction; requires numel() == 1.
    double value() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    bool has_grad() const { return !node_->grad.empty(); }
    // Allocates (zero-filled) on first use.
    double* grad_data();
    const std::vector<double>& grad() const;
    void zero_grad();

    // Deep copy of values; gradient state is not copied.
    Tensor clone() const;

    bool all_finite() const;

    std::shared_ptr<TensorNode>& node() { return node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
};

void ensure_grad(TensorNode& node);

// Records executed ops in order; backward() replays them strictly reversed.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a custom op. `touched` must list every node the backward
    // closure reads or writes gradients of (used by clear()); `result` is the
    // op's output node, whose accumulator each backward() pass restarts.
    void record(std::vector<std::shared_ptr<TensorNode>> touched,
                std::shared_ptr<TensorNode> result, std::function<void()> backward);

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Leaf
    // gradients accumulate: a second call without clear() doubles them.
    void backward(const Tensor& loss);

    // Drops all records and zeroes gradient accumulators of touched tensors.
    // Parameter values are untouched.
    void clear();

    std::size_t size() const { return records_.size(); }

    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor transpose(const Tensor& a);
    // Same-shape add, or [m x n] + [n] row broadcast.
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul_scalar(const Tensor& a, double c);
    Tensor gelu(const Tensor& a);
    Tensor mean(const Tensor& a);
    Tensor sum(const Tensor& a);
    Tensor logsumexp(const Tensor& a, int axis);
    Tensor softmax(const Tensor& a, int axis);
    Tensor log_softmax(const Tensor& a, int axis);
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
    Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& rows);

private:
    struct Record {
        std::vector<std::shared_ptr<TensorNode>> touched;
        std::shared_ptr<TensorNode> result;
        std::function<void()> backward;
    };
    std::vector<Record> records_;
};

}  // namespace dld
