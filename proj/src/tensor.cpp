// SPDX-License-Identifier: Apache-2.0
#include "dld/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dld {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

namespace {

void validate_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (auto d : s)
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(s));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    validate_shape(shape);
    auto node = std::make_shared<TensorNode>();
    node->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node()->data.begin(), t.node()->data.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw ShapeError("from_data: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::value() const {
    if (numel() != 1) throw ContractError("value(): tensor is not scalar, shape " + shape_str(shape()));
    return node_->data[0];
}

double* Tensor::grad_data() {
    ensure_grad(*node_);
    return node_->grad.data();
}

const std::vector<double>& Tensor::grad() const {
    ensure_grad(*node_);
    return node_->grad;
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    Tensor t = Tensor::from_data(node_->shape, node_->data, node_->requires_grad);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : node_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

void ensure_grad(TensorNode& node) {
    if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

void Tape::record(std::vector<std::shared_ptr<TensorNode>> touched,
                  std::shared_ptr<TensorNode> result, std::function<void()> backward) {
    records_.push_back({std::move(touched), std::move(result), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward: loss must be a scalar tensor");
    // restart intermediate accumulators; leaves keep accumulating
    for (auto& rec : records_)
        if (rec.result) std::fill(rec.result->grad.begin(), rec.result->grad.end(), 0.0);
    ensure_grad(*loss.node());
    loss.node()->grad[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
}

void Tape::clear() {
    for (auto& rec : records_)
        for (auto& node : rec.touched)
            std::fill(node->grad.begin(), node->grad.end(), 0.0);
    records_.clear();
}

namespace {

// A recorded closure is a no-op until the result has received gradient.
const std::vector<double>* grad_or_null(const TensorNode& node) {
    return node.grad.empty() ? nullptr : &node.grad;
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor operand");
}

void check_axis(const Tensor& t, int axis, const char* op) {
    if (axis < 0 || axis >= t.rank())
        throw ContractError(std::string(op) + ": axis " + std::to_string(axis) +
                            " out of range for shape " + shape_str(t.shape()));
}

// Iterate slices along `axis` of a rank-1/2 tensor: calls fn(base, stride, len).
template <typename F>
void for_each_slice(const Shape& shape, int axis, F&& fn) {
    if (shape.size() == 1) {
        fn(std::int64_t{0}, std::int64_t{1}, shape[0]);
        return;
    }
    const std::int64_t rows = shape[0], cols = shape[1];
    if (axis == 1) {
        for (std::int64_t i = 0; i < rows; ++i) fn(i * cols, std::int64_t{1}, cols);
    } else {
        for (std::int64_t j = 0; j < cols; ++j) fn(j, cols, rows);
    }
}

void check_rank12(const Tensor& t, const char* op) {
    if (t.rank() > 2) throw ContractError(std::string(op) + ": rank-1 or rank-2 tensor required");
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c = Tensor::zeros({m, n});
    {
        const double* pa = a.data();
        const double* pb = b.data();
        double* pc = c.data();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t p = 0; p < k; ++p) {
                const double av = pa[i * k + p];
                const double* pbr = pb + p * n;
                double* pcr = pc + i * n;
                for (std::int64_t j = 0; j < n; ++j) pcr[j] += av * pbr[j];
            }
    }
    if (any_requires_grad({&a, &b})) {
        c.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), cn = c.node();
        record({an, bn, cn}, cn, [an, bn, cn, m, k, n] {
            const std::vector<double>* g = grad_or_null(*cn);
            if (!g) return;
            const double* pg = g->data();
            if (an->requires_grad) {
                ensure_grad(*an);
                double* da = an->grad.data();
                const double* pb = bn->data.data();
                // dA[i,p] += sum_j G[i,j] * B[p,j]
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* pgr = pg + i * n;
                        const double* pbr = pb + p * n;
                        for (std::int64_t j = 0; j < n; ++j) s += pgr[j] * pbr[j];
                        da[i * k + p] += s;
                    }
            }
            if (bn->requires_grad) {
                ensure_grad(*bn);
                double* db = bn->grad.data();
                const double* pa = an->data.data();
                // dB[p,j] += sum_i A[i,p] * G[i,j]
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t p = 0; p < k; ++p) {
                        const double av = pa[i * k + p];
                        const double* pgr = pg + i * n;
                        double* dbr = db + p * n;
                        for (std::int64_t j = 0; j < n; ++j) dbr[j] += av * pgr[j];
                    }
            }
        });
    }
    return c;
}

Tensor Tape::transpose(const Tensor& a) {
    check_defined(a, "transpose");
    if (a.rank() != 2) throw ContractError("transpose: rank-2 tensor required");
    const std::int64_t m = a.dim(0), n = a.dim(1);
    Tensor c = Tensor::zeros({n, m});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) c.data()[j * m + i] = a.data()[i * n + j];
    if (a.requires_grad()) {
        c.set_requires_grad(true);
        auto an = a.node(), cn = c.node();
        record({an, cn}, cn, [an, cn, m, n] {
            const std::vector<double>* g = grad_or_null(*cn);
            if (!g) return;
            ensure_grad(*an);
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t j = 0; j < n; ++j) an->grad[i * n + j] += (*g)[j * m + i];
        });
    }
    return c;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    check_defined(a, "add");
    check_defined(b, "add");
    const bool broadcast = a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1);
    if (!broadcast && a.shape() != b.shape())
        throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    Tensor c = Tensor::zeros(a.shape());
    const std::int64_t n = a.numel();
    if (broadcast) {
        const std::int64_t cols = a.dim(1);
        for (std::int64_t i = 0; i < n; ++i) c.data()[i] = a.data()[i] + b.data()[i % cols];
    } else {
        for (std::int64_t i = 0; i < n; ++i) c.data()[i] = a.data()[i] + b.data()[i];
    }
    if (any_requires_grad({&a, &b})) {
        c.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), cn = c.node();
        record({an, bn, cn}, cn, [an, bn, cn, n, broadcast] {
            const std::vector<double>* g = grad_or_null(*cn);
            if (!g) return;
            if (an->requires_grad) {
                ensure_grad(*an);
                for (std::int64_t i = 0; i < n; ++i) an->grad[i] += (*g)[i];
            }
            if (bn->requires_grad) {
                ensure_grad(*bn);
                if (broadcast) {
                    const std::int64_t cols = static_cast<std::int64_t>(bn->data.size());
                    for (std::int64_t i = 0; i < n; ++i) bn->grad[i % cols] += (*g)[i];
                } else {
                    for (std::int64_t i = 0; i < n; ++i) bn->grad[i] += (*g)[i];
                }
            }
        });
    }
    return c;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    check_defined(a, "sub");
    check_defined(b, "sub");
    if (a.shape() != b.shape())
        throw ShapeError("sub: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    Tensor c = Tensor::zeros(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) c.data()[i] = a.data()[i] - b.data()[i];
    if (any_requires_grad({&a, &b})) {
        c.set_requires_grad(true);
        auto an = a.node(), bn = b.node(), cn = c.node();
        record({an, bn, cn}, cn, [an, bn, cn, n] {
            const std::vector<double>* g = grad_or_null(*cn);
            if (!g) return;
            if (an->requires_grad) {
                ensure_grad(*an);
                for (std::int64_t i = 0; i < n; ++i) an->grad[i] += (*g)[i];
            }
            if (bn->requires_grad) {
                ensure_grad(*bn);
                for (std::int64_t i = 0; i < n; ++i) bn->grad[i] -= (*g)[i];
            }
        });
    }
    return c;
}

Tensor Tape::mul_scalar(const Tensor& a, double c) {
    check_defined(a, "mul_scalar");
    Tensor out = Tensor::zeros(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto an = a.node(), on = out.node();
        record({an, on}, on, [an, on, n, c] {
            const std::vector<double>* g = grad_or_null(*on);
            if (!g) return;
            ensure_grad(*an);
            for (std::int64_t i = 0; i < n; ++i) an->grad[i] += c * (*g)[i];
        });
    }
    return out;
}

Tensor Tape::gelu(const Tensor& a) {
    check_defined(a, "gelu");
    Tensor out = Tensor::zeros(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const double x = a.data()[i];
        out.data()[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto an = a.node(), on = out.node();
        record({an, on}, on, [an, on, n] {
            const std::vector<double>* g = grad_or_null(*on);
            if (!g) return;
            ensure_grad(*an);
            for (std::int64_t i = 0; i < n; ++i) {
                const double x = an->data[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                an->grad[i] += (cdf + x * pdf) * (*g)[i];
            }
        });
    }
    return out;
}

Tensor Tape::mean(const Tensor& a) {
    check_defined(a, "mean");
    const std::int64_t n = a.numel();
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += a.data()[i];
    Tensor out = Tensor::scalar(s / static_cast<double>(n));
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto an = a.node(), on = out.node();
        record({an, on}, on, [an, on, n] {
            const std::vector<double>* g = grad_or_null(*on);
            if (!g) return;
            ensure_grad(*an);
            const double gv = (*g)[0] / static_cast<double>(n);
            for (std::int64_t i = 0; i < n; ++i) an->grad[i] += gv;
        });
    }
    return out;
}

Tensor Tape::sum(const Tensor& a) {
    check_defined(a, "sum");
    const std::int64_t n = a.numel();
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += a.data()[i];
    Tensor out = Tensor::scalar(s);
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto an = a.node(), on = out.node();
        record({an, on}, on, [an, on, n] {
            const std::vector<double>* g = grad_or_null(*on);
            if (!g) return;
            ensure_grad(*an);
            for (std::int64_t i = 0; i < n; ++i) an->grad[i] += (*g)[0];
        });
    }
    return out;
}

Tensor Tape::logsumexp(const Tensor& a, int axis) {
    check_defined(a, "logsumexp");
    check_rank12(a, "logsumexp");
    check_axis(a, axis, "logsumexp");
    Shape out_shape;
    if (a.rank() == 1)
        out_shape = {1};
    else
        out_shape = {axis == 1 ? a.dim(0) : a.dim(1)};
    Tensor out = Tensor::zeros(out_shape);
    std::int64_t slice = 0;
    for_each_slice(a.shape(), axis, [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
        double mx = a.data()[base];
        for (std::int64_t t = 1; t < len; ++t) mx = std::max(mx, a.data()[base + t * stride]);
        double s = 0.0;
        for (std::int64_t t = 0; t < len; ++t) s += std::exp(a.data()[base + t * stride] - mx);
        out.data()[slice++] = mx + std::log(s);
    });
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto an = a.node(), on = out.node();
        const Shape in_shape = a.shape();
        record({an, on}, on, [an, on, in_shape, axis] {
            const std::vector<double>* g = grad_or_null(*on);
            if (!g) return;
            ensure_grad(*an);
            std::int64_t slice = 0;
            for_each_slice(in_shape, axis, [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
                const double lse = on->data[slice];
                const double gv = (*g)[slice];
                ++slice;
                for (std::int64_t t = 0; t < len; ++t) {
                    const std::int64_t idx = base + t * stride;
                    an->grad[idx] += gv * std::exp(an->data[idx] - lse);
                }
            });
        });
    }
    return out;
}

namespace {

// Shared forward for softmax/log_softmax: per-slice max subtraction.
void softmax_slices(const Tensor& a, int axis, Tensor& out, bool log_space) {
    for_each_slice(a.shape(), axis, [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
        double mx = a.data()[base];
        for (std::int64_t t = 1; t < len; ++t) mx = std::max(mx, a.data()[base + t * stride]);
        double s = 0.0;
        for (std::int64_t t = 0; t < len; ++t) s += std::exp(a.data()[base + t * stride] - mx);
        if (log_space) {
            const double lse = mx + std::log(s);
            for (std::int64_t t = 0; t < len; ++t) {
                const std::int64_t idx = base + t * stride;
                out.data()[idx] = a.data()[idx] - lse;
            }
        } else {
            const double inv = 1.0 / s;
            for (std::int64_t t = 0; t < len; ++t) {
                const std::int64_t idx = base + t * stride;
                out.data()[idx] = std::exp(a.data()[idx] - mx) * inv;
            }
        }
    });
}

}  // namespace

Tensor Tape::softmax(const Tensor& a, int axis) {
    check_defined(a, "softmax");
    check_rank12(a, "softmax");
    check_axis(a, axis, "softmax");
    Tensor out = Tensor::zeros(a.shape());
    softmax_slices(a, axis, out, false);
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto an = a.node(), on = out.node();
        const Shape in_shape = a.shape();
        record({an, on}, on, [an, on, in_shape, axis] {
            const std::vector<double>* g = grad_or_null(*on);
            if (!g) return;
            ensure_grad(*an);
            // dx = s * (g - <g, s>) per slice
            for_each_slice(in_shape, axis, [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
                double dot = 0.0;
                for (std::int64_t t = 0; t < len; ++t) {
                    const std::int64_t idx = base + t * stride;
                    dot += (*g)[idx] * on->data[idx];
                }
                for (std::int64_t t = 0; t < len; ++t) {
                    const std::int64_t idx = base + t * stride;
                    an->grad[idx] += on->data[idx] * ((*g)[idx] - dot);
                }
            });
        });
    }
    return out;
}

Tensor Tape::log_softmax(const Tensor& a, int axis) {
    check_defined(a, "log_softmax");
    check_rank12(a, "log_softmax");
    check_axis(a, axis, "log_softmax");
    Tensor out = Tensor::zeros(a.shape());
    softmax_slices(a, axis, out, true);
    if (a.requires_grad()) {
        out.set_requires_grad(true);
        auto an = a.node(), on = out.node();
        const Shape in_shape = a.shape();
        record({an, on}, on, [an, on, in_shape, axis] {
            const std::vector<double>* g = grad_or_null(*on);
            if (!g) return;
            ensure_grad(*an);
            // dx = g - softmax * sum(g) per slice
            for_each_slice(in_shape, axis, [&](std::int64_t base, std::int64_t stride, std::int64_t len) {
                double gsum = 0.0;
                for (std::int64_t t = 0; t < len; ++t) gsum += (*g)[base + t * stride];
                for (std::int64_t t = 0; t < len; ++t) {
                    const std::int64_t idx = base + t * stride;
                    an->grad[idx] += (*g)[idx] - std::exp(on->data[idx]) * gsum;
                }
            });
        });
    }
    return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    check_defined(x, "layer_norm");
    check_defined(gain, "layer_norm");
    check_defined(bias, "layer_norm");
    check_rank12(x, "layer_norm");
    if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
    const std::int64_t cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
    const std::int64_t rows = x.rank() == 2 ? x.dim(0) : 1;
    if (gain.rank() != 1 || gain.dim(0) != cols || bias.rank() != 1 || bias.dim(0) != cols)
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " must match last dimension of " +
                         shape_str(x.shape()));
    Tensor out = Tensor::zeros(x.shape());
    // xhat kept for backward
    std::vector<double> xhat(static_cast<std::size_t>(x.numel()));
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    for (std::int64_t i = 0; i < rows; ++i) {
        const double* px = x.data() + i * cols;
        double mu = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) mu += px[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            const double d = px[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (std::int64_t j = 0; j < cols; ++j) {
            const double xh = (px[j] - mu) * is;
            xhat[static_cast<std::size_t>(i * cols + j)] = xh;
            out.data()[i * cols + j] = gain.data()[j] * xh + bias.data()[j];
        }
    }
    if (any_requires_grad({&x, &gain, &bias})) {
        out.set_requires_grad(true);
        auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
        record({xn, gn, bn, on}, on,
               [xn, gn, bn, on, rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                   const std::vector<double>* g = grad_or_null(*on);
                   if (!g) return;
                   if (gn->requires_grad) ensure_grad(*gn);
                   if (bn->requires_grad) ensure_grad(*bn);
                   if (xn->requires_grad) ensure_grad(*xn);
                   for (std::int64_t i = 0; i < rows; ++i) {
                       const double* gr = g->data() + i * cols;
                       const double* xh = xhat.data() + i * cols;
                       if (gn->requires_grad)
                           for (std::int64_t j = 0; j < cols; ++j) gn->grad[j] += gr[j] * xh[j];
                       if (bn->requires_grad)
                           for (std::int64_t j = 0; j < cols; ++j) bn->grad[j] += gr[j];
                       if (xn->requires_grad) {
                           // dx = (1/s) * (gh - mean(gh) - xhat * mean(gh*xhat)),  gh = g*gain
                           double m1 = 0.0, m2 = 0.0;
                           for (std::int64_t j = 0; j < cols; ++j) {
                               const double gh = gr[j] * gn->data[j];
                               m1 += gh;
                               m2 += gh * xh[j];
                           }
                           m1 /= static_cast<double>(cols);
                           m2 /= static_cast<double>(cols);
                           const double is = inv_std[static_cast<std::size_t>(i)];
                           for (std::int64_t j = 0; j < cols; ++j) {
                               const double gh = gr[j] * gn->data[j];
                               xn->grad[i * cols + j] += is * (gh - m1 - xh[j] * m2);
                           }
                       }
                   }
               });
    }
    return out;
}

Tensor Tape::gather_rows(const Tensor& x, const std::vector<std::int64_t>& rows) {
    check_defined(x, "gather_rows");
    if (x.rank() != 2) throw ContractError("gather_rows: rank-2 tensor required");
    const std::int64_t nrows = x.dim(0), cols = x.dim(1);
    if (rows.empty()) throw ContractError("gather_rows: empty index list");
    for (auto r : rows)
        if (r < 0 || r >= nrows)
            throw ContractError("gather_rows: index " + std::to_string(r) + " out of range [0," +
                                std::to_string(nrows) + ")");
    Tensor out = Tensor::zeros({static_cast<std::int64_t>(rows.size()), cols});
    for (std::size_t k = 0; k < rows.size(); ++k)
        std::copy_n(x.data() + rows[k] * cols, cols, out.data() + static_cast<std::int64_t>(k) * cols);
    if (x.requires_grad()) {
        out.set_requires_grad(true);
        auto xn = x.node(), on = out.node();
        record({xn, on}, on, [xn, on, rows, cols] {
            const std::vector<double>* g = grad_or_null(*on);
            if (!g) return;
            ensure_grad(*xn);
            for (std::size_t k = 0; k < rows.size(); ++k) {
                const double* gr = g->data() + static_cast<std::int64_t>(k) * cols;
                double* dst = xn->grad.data() + rows[k] * cols;
                for (std::int64_t j = 0; j < cols; ++j) dst[j] += gr[j];
            }
        });
    }
    return out;
}

}  // namespace dld
