#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sdfn/error.hpp"

namespace sdfn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    // Recorded operation; empty for leaves.
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Dense row-major array of doubles with an optional autodiff history.
/// Copies share storage (handle semantics); use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        for (auto d : shape)
            if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        node_->value.assign(shape_size(shape), fill);
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        for (auto d : shape)
            if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        if (shape_size(shape) != data.size())
            throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, v, requires_grad); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->value.size(); }

    std::span<double> data() { return node_->value; }
    std::span<const double> data() const { return node_->value; }
    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    /// Gradient buffer; allocated (zeroed) on first access.
    std::span<double> grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    std::span<const double> grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool is_leaf() const { return node_->is_leaf(); }

    double item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    Tensor clone() const {
        Tensor t(shape(), node_->value, false);
        return t;
    }

    /// Leaf view of the same values with no history.
    Tensor detach() const { return Tensor(shape(), node_->value, false); }

    Tensor reshape(Shape shape) const;

    /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
    /// calls; interior gradients are recomputed from zero on every call.
    void backward() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds the result node of an operation. History is recorded only when
/// grad mode is on and some input participates in differentiation.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool track = false;
    if (grad_enabled())
        for (const auto& in : inputs) track = track || in.requires_grad();
    if (track) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

/// Gradient sink for input i of `self`, or nullptr when that input is not differentiable.
inline double* input_grad(Node& self, std::size_t i) {
    auto& in = *self.inputs[i];
    if (!in.requires_grad) return nullptr;
    in.ensure_grad();
    return in.grad.data();
}

}  // namespace detail

inline Tensor Tensor::reshape(Shape new_shape) const {
    if (shape_size(new_shape) != size())
        throw ShapeError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
    return detail::make_result(std::move(new_shape), node_->value, {*this}, [](detail::Node& self) {
        if (double* g = detail::input_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

inline void Tensor::backward() const {
    if (!node_) throw Error("backward() on an undefined tensor");
    if (size() != 1) throw ShapeError("backward() requires a scalar loss, got " + shape_str(shape()));
    if (node_->is_leaf()) throw Error("backward() on an empty tape: the loss has no recorded operations");

    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            detail::Node* child = n->inputs[next++].get();
            if (child->requires_grad && !child->is_leaf() && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (auto* n : order) n->grad.assign(n->value.size(), 0.0);
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) (*it)->backward(**it);
}

}  // namespace sdfn
