#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ddipnet/errors.hpp"

namespace ddipnet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

enum class Mode { train, eval };

namespace detail {
inline std::uint64_t next_node_seq() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}
}  // namespace detail

// One vertex of the dynamic differentiation graph. Nodes are created in
// topological order, so `seq` doubles as the graph's insertion order.
template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::uint64_t seq = detail::next_node_seq();
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the grads of `inputs`.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    bool is_leaf() const { return !backward_fn; }
};

/// Shared handle onto a dense row-major tensor that may participate in a
/// reverse-mode graph. Copies alias the same storage.
template <class T>
class BasicTensor {
   public:
    using value_type = T;
    using NodePtr = std::shared_ptr<Node<T>>;

    BasicTensor() = default;

    static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
        for (auto d : shape)
            if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        if (ddipnet::numel(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        auto node = std::make_shared<Node<T>>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        return BasicTensor(std::move(node));
    }

    static BasicTensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = ddipnet::numel(shape);
        return from_data(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
        const auto n = ddipnet::numel(shape);
        return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static BasicTensor scalar(T value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    // Builds an op result. The backward closure is kept only when some input
    // requires a gradient.
    static BasicTensor make_result(Shape shape, std::vector<T> data,
                                   std::vector<NodePtr> inputs,
                                   std::function<void(Node<T>&)> backward_fn) {
        auto out = from_data(std::move(shape), std::move(data));
        bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const NodePtr& n) { return n && n->requires_grad; });
        if (needs) {
            out.node_->requires_grad = true;
            out.node_->inputs = std::move(inputs);
            out.node_->backward_fn = std::move(backward_fn);
        }
        return out;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node().shape; }
    std::size_t rank() const { return node().shape.size(); }
    std::size_t dim(std::size_t i) const { return node().shape.at(i); }
    std::size_t numel() const { return node().data.size(); }

    std::span<const T> data() const { return node().data; }
    // Direct write access, meant for leaves (optimizers, checkpoint loading).
    std::span<T> mutable_data() { return node().data; }

    bool has_grad() const { return node().grad.size() == node().data.size(); }
    std::span<const T> grad() const { return node().grad; }
    void zero_grad() { node().grad.clear(); }

    bool requires_grad() const { return node().requires_grad; }
    void set_requires_grad(bool on) {
        if (!node().is_leaf()) throw ContractError("requires_grad can only be toggled on leaves");
        node().requires_grad = on;
    }

    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node().data[0];
    }

    bool all_finite() const {
        return std::all_of(node().data.begin(), node().data.end(),
                           [](T v) { return std::isfinite(v); });
    }

    /// Fresh leaf holding a copy of the values.
    BasicTensor detach(bool requires_grad = false) const {
        return from_data(shape(), node().data, requires_grad);
    }

    /// Propagates d(this)/d(leaf) into every reachable leaf that requires a
    /// gradient. Leaf gradients accumulate across calls; interior gradients
    /// are recomputed each call.
    void backward() const {
        if (numel() != 1)
            throw ContractError("backward() needs a scalar root, got shape " + shape_str(shape()));
        if (!requires_grad()) throw ContractError("backward() root is not connected to any parameter");

        std::vector<Node<T>*> order;
        std::vector<Node<T>*> stack{node_.get()};
        std::unordered_set<const Node<T>*> seen;
        while (!stack.empty()) {
            Node<T>* n = stack.back();
            stack.pop_back();
            if (!seen.insert(n).second) continue;
            order.push_back(n);
            for (auto& in : n->inputs)
                if (in && in->requires_grad) stack.push_back(in.get());
        }
        std::sort(order.begin(), order.end(),
                  [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });
        for (auto* n : order)
            if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto* n : order)
            if (!n->is_leaf()) n->backward_fn(*n);
    }

    const NodePtr& node_ptr() const { return node_; }

   private:
    explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

    Node<T>& node() const {
        if (!node_) throw ContractError("use of an undefined tensor");
        return *node_;
    }

    NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Value-converting copy, used to run the same function at another precision.
template <class To, class From>
BasicTensor<To> cast_tensor(const BasicTensor<From>& t, bool requires_grad = false) {
    std::vector<To> v(t.data().begin(), t.data().end());
    return BasicTensor<To>::from_data(t.shape(), std::move(v), requires_grad);
}

}  // namespace ddipnet
