#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pvdm/tensor/tensor.hpp"

namespace pvdm {

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording for the lifetime of the guard (inference paths).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> inputs;
    // Receives the node whose `grad` is populated; accumulates into inputs.
    std::function<void(Node<T>&)> backward_fn;

    Tensor<T>& grad_buffer() {
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }

    void accumulate(Tensor<T> g) {
        if (!requires_grad) return;
        if (grad.shape() != value.shape()) {
            grad = std::move(g);
            if (grad.shape() != value.shape()) grad.reshape_inplace(value.shape());
        } else {
            T* dst = grad.data();
            const T* src = g.data();
            for (int64_t i = 0; i < grad.numel(); ++i) dst[i] += src[i];
        }
    }
};

/// Handle to a node of the computation graph. Copies alias the same node.
template <typename T>
class Var {
public:
    Var() = default;

    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    static Var constant(Tensor<T> value) { return Var(std::move(value), false); }
    static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    bool has_grad() const { return node_->grad.shape() == node_->value.shape(); }
    void zero_grad() { node_->grad = Tensor<T>(); }
    const Shape& shape() const { return node_->value.shape(); }
    int64_t dim(int axis) const { return node_->value.dim(axis); }
    int rank() const { return node_->value.rank(); }
    int64_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    const Node<T>* id() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

    T item() const {
        if (numel() != 1) throw std::logic_error("item() on non-scalar of shape " + shape_str(shape()));
        return node_->value[0];
    }

    /// Same value, cut from the graph.
    Var detach() const { return Var(node_->value, false); }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Builds the result node of an op. Records the backward closure only when
/// grad mode is on and some input requires a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward_fn) {
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    Var<T> out(std::move(value), needs);
    if (needs) {
        auto& node = *out.node();
        node.inputs.reserve(inputs.size());
        for (auto& in : inputs) node.inputs.push_back(in.node());
        node.backward_fn = std::move(backward_fn);
    }
    return out;
}

/// Reverse-mode sweep from `root`. `seed` defaults to ones (scalar losses).
template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
    if (!root.requires_grad()) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    // Iterative post-order DFS; graphs here can be thousands of nodes deep.
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    Node<T>& r = *root.node();
    if (seed) {
        r.accumulate(*seed);
    } else {
        Tensor<T> ones(r.value.shape(), T(1));
        r.accumulate(ones);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->grad.shape() == n->value.shape()) n->backward_fn(*n);
    }
    // Free intermediate gradients; leaves keep theirs.
    for (Node<T>* n : order) {
        if (n->backward_fn) n->grad = Tensor<T>();
    }
}

}  // namespace pvdm
