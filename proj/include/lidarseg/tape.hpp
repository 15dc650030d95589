#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "lidarseg/tensor.hpp"

namespace lidarseg::tensorcore {

/// Handle to a node recorded on a Tape.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order; backward()
/// walks them in reverse and lets each node push its gradient to its inputs.
/// Node values are never modified after recording, only gradient buffers.
template <typename T>
class Tape {
public:
    /// Called during backward with the tape and the id of the node being
    /// processed; reads grad(self) and accumulates into inputs via grad_ptr().
    using BackwardFn = std::function<void(Tape&, Var self)>;

    Var leaf(Tensor<T> value, bool requires_grad = false);
    Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn backward);

    const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    /// Gradient accumulated so far; a zero tensor if nothing reached the node.
    Tensor<T> grad(Var v) const;

    /// Mutable gradient storage for v, allocated on first use. Returns nullptr
    /// when v does not require a gradient.
    T* grad_ptr(Var v);

    /// Seeds d(root)/d(root) = 1 and propagates. root must hold one value.
    void backward(Var root);

    /// With gradients disabled, record() keeps values only.
    void set_grad_enabled(bool enabled) noexcept { grad_enabled_ = enabled; }
    bool grad_enabled() const noexcept { return grad_enabled_; }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        std::vector<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };
    // deque: references returned by value() survive later records
    std::deque<Node> nodes_;
    bool grad_enabled_ = true;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace lidarseg::tensorcore
