#include "lidarseg/tape.hpp"

#include <algorithm>

#include "lidarseg/error.hpp"

namespace lidarseg::tensorcore {

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad && grad_enabled_, {}});
    return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn backward) {
    bool needs = false;
    if (grad_enabled_) {
        for (auto in : inputs) {
            if (in.id >= nodes_.size()) throw UsageError("tape input refers to an unknown node");
            needs = needs || nodes_[in.id].requires_grad;
        }
    }
    Node node{std::move(value), {}, needs, {}};
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
    const Node& node = nodes_.at(v.id);
    if (node.grad.empty()) return Tensor<T>(node.value.shape());
    return Tensor<T>(node.value.shape(), node.grad);
}

template <typename T>
T* Tape<T>::grad_ptr(Var v) {
    Node& node = nodes_.at(v.id);
    if (!node.requires_grad) return nullptr;
    if (node.grad.empty()) node.grad.assign(node.value.size(), T{0});
    return node.grad.data();
}

template <typename T>
void Tape<T>::backward(Var root) {
    if (nodes_.at(root.id).value.size() != 1)
        throw UsageError("backward() needs a scalar output, got shape " + shape_string(nodes_[root.id].value.shape()));
    T* seed = grad_ptr(root);
    if (!seed) return;
    seed[0] += T{1};
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (node.backward && !node.grad.empty()) node.backward(*this, Var{i});
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace lidarseg::tensorcore
