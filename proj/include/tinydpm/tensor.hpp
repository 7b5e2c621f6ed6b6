#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tinydpm/errors.hpp"
#include "tinydpm/rng.hpp"

namespace tinydpm {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline void check_shape_valid(const Shape& s, const char* who) {
    if (s.empty()) throw ShapeError(std::string(who) + ": empty shape");
    for (int d : s)
        if (d < 1) throw ShapeError(std::string(who) + ": non-positive dim in " + shape_str(s));
}

namespace detail {

// Autodiff is recorded eagerly: every grad-tracked op links its output node
// to the parent nodes and stores a closure that maps the output gradient to
// parent gradient contributions. Node ids are creation-ordered, so visiting
// reachable nodes by descending id is a valid reverse topological order.
template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool is_leaf = true;
    uint64_t id = 0;
    uint64_t visit = 0;  // epoch stamp used by backward()
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

inline uint64_t next_node_id() {
    static std::atomic<uint64_t> counter{0};
    return ++counter;
}

// Global switch mirroring the usual no-grad idiom: while off, ops run
// eagerly and record no graph.
inline bool& grad_mode() {
    static thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense row-major n-d array of a single scalar type, optionally attached to
// the autodiff graph. Copying a TensorT copies the handle, not the buffer.
template <class T>
class TensorT {
public:
    using Scalar = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    TensorT() = default;

    explicit TensorT(const Shape& shape, T fill = T(0)) {
        check_shape_valid(shape, "Tensor");
        node_ = std::make_shared<detail::Node<T>>();
        node_->shape = shape;
        node_->value.assign(static_cast<size_t>(shape_numel(shape)), fill);
        node_->id = detail::next_node_id();
    }

    static TensorT zeros(const Shape& shape) { return TensorT(shape, T(0)); }
    static TensorT full(const Shape& shape, T v) { return TensorT(shape, v); }

    static TensorT from_data(const Shape& shape, std::vector<T> data) {
        check_shape_valid(shape, "Tensor");
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("Tensor::from_data: " + shape_str(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(data.size()));
        TensorT t;
        t.node_ = std::make_shared<detail::Node<T>>();
        t.node_->shape = shape;
        t.node_->value = std::move(data);
        t.node_->id = detail::next_node_id();
        return t;
    }

    static TensorT scalar(T v) { return TensorT(Shape{1}, v); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

    std::vector<T>& data() { return node_->value; }
    const std::vector<T>& data() const { return node_->value; }
    T* raw() { return node_->value.data(); }
    const T* raw() const { return node_->value.data(); }

    T item() const {
        if (numel() != 1) throw ShapeError("item(): tensor is not scalar, shape " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }

    TensorT& set_requires_grad(bool on) {
        if (on && !node_->is_leaf)
            throw UsageError("set_requires_grad: only leaf tensors can be marked");
        node_->requires_grad = on;
        return *this;
    }

    bool is_leaf() const { return node_->is_leaf; }

    // Gradient accumulated by backward(); zeros if never touched.
    std::vector<T> grad() const {
        if (node_->grad.empty()) return std::vector<T>(node_->value.size(), T(0));
        return node_->grad;
    }

    TensorT grad_tensor() const { return TensorT::from_data(shape(), grad()); }

    void zero_grad() { node_->grad.clear(); }

    // New leaf sharing nothing with the graph; data is copied.
    TensorT detach() const {
        TensorT t = TensorT::from_data(shape(), data());
        return t;
    }

    bool all_finite() const {
        for (T v : node_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    NodePtr node() const { return node_; }

    // Used by op implementations to stitch results into the graph.
    static TensorT make_result(const Shape& shape, std::vector<T> value,
                               std::vector<NodePtr> parents,
                               std::function<void(detail::Node<T>&)> backward_fn) {
        TensorT t = TensorT::from_data(shape, std::move(value));
        bool track = detail::grad_mode();
        bool any = false;
        if (track)
            for (auto& p : parents)
                if (p->requires_grad) { any = true; break; }
        if (any) {
            t.node_->requires_grad = true;
            t.node_->is_leaf = false;
            t.node_->parents = std::move(parents);
            t.node_->backward_fn = std::move(backward_fn);
        }
        return t;
    }

private:
    NodePtr node_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// Reverse-mode sweep from a scalar output. Interior gradients are scratch
// and reset on every call; leaf gradients accumulate across calls until
// zero_grad. The graph stays alive while tensor handles reference it, so a
// sweep may be repeated.
template <class T>
void backward(const TensorT<T>& output) {
    if (output.numel() != 1)
        throw UsageError("backward: output must be scalar, shape " + shape_str(output.shape()));
    auto root = output.node();
    if (!root->requires_grad)
        throw UsageError("backward: output does not require grad (detached or no tracked inputs)");

    // Collect reachable nodes; descending id is reverse topological order
    // because parents are always created before children.
    static thread_local uint64_t epoch = 0;
    ++epoch;
    std::vector<detail::Node<T>*> nodes;
    std::vector<detail::Node<T>*> stack{root.get()};
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        if (n->visit == epoch) continue;
        n->visit = epoch;
        nodes.push_back(n);
        if (!n->is_leaf) n->grad.clear();
        for (auto& p : n->parents)
            if (p->requires_grad) stack.push_back(p.get());
    }
    std::sort(nodes.begin(), nodes.end(),
              [](auto* a, auto* b) { return a->id > b->id; });

    root->ensure_grad()[0] += T(1);
    for (auto* n : nodes)
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
}

// Draws i.i.d. standard normal samples into a fresh tensor; consumes the
// rng stream in row-major element order.
template <class T = float>
TensorT<T> randn(Rng& rng, const Shape& shape) {
    check_shape_valid(shape, "randn");
    TensorT<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(rng.next_normal());
    return t;
}

}  // namespace tinydpm
