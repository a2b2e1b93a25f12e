// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <utility>
#include <vector>

#include "moelab/common.hpp"

namespace moelab {

/// Exact operation ledger. Only matrix products and Hadamard products accrue
/// counts; activations, softmax, gating arithmetic and data movement do not.
/// flops() = multiplies + adds, the convention under which the analytic
/// layer cost formulas in costs.hpp hold as integer identities.
class OpCounter {
public:
    u64 multiplies = 0;
    u64 adds = 0;
    bool enabled = true;

    void count_matmul(i64 m, i64 p, i64 n) {
        if (!enabled) return;
        multiplies += static_cast<u64>(m) * static_cast<u64>(p) * static_cast<u64>(n);
        adds += static_cast<u64>(m) * static_cast<u64>(p) * static_cast<u64>(n - 1);
    }

    void count_hadamard(i64 numel) {
        if (enabled) multiplies += static_cast<u64>(numel);
    }

    u64 flops() const { return multiplies + adds; }

    void reset() {
        multiplies = 0;
        adds = 0;
    }
};

namespace detail {

struct TensorNode {
    std::vector<i64> shape;
    std::vector<double> value;
    std::vector<double> grad; // sized lazily, only when requires_grad
    bool requires_grad = false;

    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::size_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

} // namespace detail

/// Disables graph recording in its scope (pure inference, oracles).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Dense row-major tensor of 64-bit reals, rank 1..3, with an optional
/// gradient slot. Value semantics over a shared node; forward operations in
/// ops.hpp record a fresh tape per pass.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<i64> shape, bool requires_grad = false) {
        check_shape(shape);
        auto node = std::make_shared<detail::TensorNode>();
        const std::size_t n = numel_of(shape);
        node->shape = std::move(shape);
        node->value.assign(n, 0.0);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor full(std::vector<i64> shape, double fill, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.node_->value.begin(), t.node_->value.end(), fill);
        return t;
    }

    static Tensor from_data(std::vector<i64> shape, std::vector<double> data,
                            bool requires_grad = false) {
        check_shape(shape);
        if (numel_of(shape) != data.size())
            throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                             std::to_string(data.size()) + " values");
        auto node = std::make_shared<detail::TensorNode>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<i64>& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->numel(); }

    i64 rows() const {
        require_rank2("rows");
        return node_->shape[0];
    }
    i64 cols() const {
        require_rank2("cols");
        return node_->shape[1];
    }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    double* data() { return node_->value.data(); }
    const double* data() const { return node_->value.data(); }

    double item() const {
        if (numel() != 1)
            throw InvariantError("item: tensor " + shape_str(shape()) + " is not a scalar");
        return node_->value[0];
    }

    double at(i64 r, i64 c) const {
        require_rank2("at");
        return node_->value[static_cast<std::size_t>(r * cols() + c)];
    }
    double& at(i64 r, i64 c) {
        require_rank2("at");
        return node_->value[static_cast<std::size_t>(r * cols() + c)];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) {
        node_->requires_grad = v;
        if (v) node_->ensure_grad();
    }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const {
        if (!has_grad()) throw InvariantError("grad: no gradient present");
        return node_->grad;
    }

    void zero_grad() {
        if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    /// Deep copy of the values as an untracked leaf.
    Tensor clone_detached(bool requires_grad = false) const {
        return from_data(node_->shape, node_->value, requires_grad);
    }

    /// Same storage viewed under a different shape (no data movement).
    Tensor reshaped(std::vector<i64> new_shape) const;

    bool same_shape(const Tensor& other) const { return node_->shape == other.node_->shape; }

    detail::TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

    static Tensor adopt(std::shared_ptr<detail::TensorNode> node) { return Tensor(std::move(node)); }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

    static std::size_t numel_of(const std::vector<i64>& shape) {
        std::size_t n = 1;
        for (const i64 s : shape) n *= static_cast<std::size_t>(s);
        return n;
    }

    static void check_shape(const std::vector<i64>& shape) {
        if (shape.empty() || shape.size() > 3)
            throw ShapeError("tensor rank must be 1..3, got " + shape_str(shape));
        for (const i64 s : shape)
            if (s <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
    }

    void require_rank2(const char* op) const {
        if (rank() != 2)
            throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(shape()));
    }

    std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

/// Builds the result of a recorded operation. `backward_fn` receives the
/// output node and accumulates into the parents' grads.
inline Tensor make_op_result(std::vector<i64> shape, std::vector<double> value,
                             std::vector<Tensor> parents,
                             std::function<void(TensorNode&)> backward_fn) {
    bool needs = false;
    if (grad_mode())
        for (const Tensor& p : parents)
            if (p.requires_grad()) needs = true;

    Tensor out = Tensor::from_data(std::move(shape), std::move(value), false);
    if (needs) {
        out.node()->requires_grad = true;
        out.node()->parents.reserve(parents.size());
        for (const Tensor& p : parents) out.node()->parents.push_back(p.node_ptr());
        out.node()->backward_fn = std::move(backward_fn);
    }
    return out;
}

} // namespace detail

inline Tensor Tensor::reshaped(std::vector<i64> new_shape) const {
    check_shape(new_shape);
    if (numel_of(new_shape) != numel())
        throw ShapeError("reshape: " + shape_str(shape()) + " -> " + shape_str(new_shape));
    const Tensor self = *this;
    std::vector<i64> shape_copy = new_shape;
    return detail::make_op_result(std::move(new_shape), node_->value, {self},
                                  [](detail::TensorNode& out) {
                                      detail::TensorNode& p = *out.parents[0];
                                      if (!p.requires_grad) return;
                                      p.ensure_grad();
                                      for (std::size_t i = 0; i < out.grad.size(); ++i)
                                          p.grad[i] += out.grad[i];
                                  });
}

/// Reverse-mode sweep from a scalar loss. Every requires_grad tensor reachable
/// through the recorded tape accumulates d(loss)/d(tensor); repeated calls
/// without zero_grad() keep accumulating.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw InvariantError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Post-order DFS; the reversed order is a valid topological order.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> visited;
    std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            detail::TensorNode* child = node->parents[next_child].get();
            ++next_child;
            if (child->requires_grad && visited.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior grads are scratch space for this sweep; only leaves accumulate
    // across repeated calls.
    for (detail::TensorNode* node : order) {
        if (node->backward_fn)
            node->grad.assign(node->value.size(), 0.0);
        else
            node->ensure_grad();
    }
    loss.node()->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

} // namespace moelab
