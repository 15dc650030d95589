#include "lidarseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lidarseg/error.hpp"

namespace lidarseg::tensorcore {
namespace {

template <typename T>
double evaluate(const MultiGraph<T>& graph, const std::vector<Tensor<T>>& inputs) {
    Tape<T> tape;
    tape.set_grad_enabled(false);
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    const Var out = graph(tape, leaves);
    if (tape.value(out).size() != 1) throw UsageError("grad_check: graph output must be scalar");
    return static_cast<double>(tape.value(out)[0]);
}

}  // namespace

template <typename T>
GradCheckResult grad_check(const MultiGraph<T>& graph, const std::vector<Tensor<T>>& inputs, double tolerance,
                           const std::vector<std::pair<std::size_t, std::size_t>>& coords, GradCheckOptions options) {
    Tape<T> tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    const Var out = graph(tape, leaves);
    if (tape.value(out).size() != 1)
        throw UsageError("grad_check: graph output must be scalar, got shape " + shape_string(tape.value(out).shape()));
    tape.backward(out);

    std::vector<Tensor<T>> analytic;
    for (auto leaf : leaves) analytic.push_back(tape.grad(leaf));

    std::vector<std::pair<std::size_t, std::size_t>> todo = coords;
    if (todo.empty())
        for (std::size_t i = 0; i < inputs.size(); ++i)
            for (std::size_t j = 0; j < inputs[i].size(); ++j) todo.emplace_back(i, j);

    GradCheckResult result;
    std::vector<Tensor<T>> probe = inputs;
    for (auto [ti, ei] : todo) {
        if (ti >= inputs.size() || ei >= inputs[ti].size()) throw UsageError("grad_check: coordinate out of range");
        const T original = probe[ti][ei];
        probe[ti][ei] = static_cast<T>(original + options.step);
        const double up = evaluate(graph, probe);
        probe[ti][ei] = static_cast<T>(original - options.step);
        const double down = evaluate(graph, probe);
        probe[ti][ei] = original;

        const double numeric = (up - down) / (2.0 * options.step);
        const double a = analytic[ti][ei];
        const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
        const double rel = std::abs(a - numeric) / denom;
        ++result.checked;
        if (result.checked == 1 || rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_tensor = ti;
            result.worst_index = ei;
            result.worst_analytic = a;
            result.worst_numeric = numeric;
        }
    }
    result.passed = result.max_rel_error < tolerance;
    return result;
}

template <typename T>
GradCheckResult grad_check(const Graph<T>& graph, const Tensor<T>& input, double tolerance, GradCheckOptions options) {
    MultiGraph<T> multi = [&graph](Tape<T>& tape, const std::vector<Var>& in) { return graph(tape, in.at(0)); };
    return grad_check<T>(multi, std::vector<Tensor<T>>{input}, tolerance, {}, options);
}

template GradCheckResult grad_check<float>(const MultiGraph<float>&, const std::vector<Tensor<float>>&, double,
                                           const std::vector<std::pair<std::size_t, std::size_t>>&, GradCheckOptions);
template GradCheckResult grad_check<double>(const MultiGraph<double>&, const std::vector<Tensor<double>>&, double,
                                            const std::vector<std::pair<std::size_t, std::size_t>>&, GradCheckOptions);
template GradCheckResult grad_check<float>(const Graph<float>&, const Tensor<float>&, double, GradCheckOptions);
template GradCheckResult grad_check<double>(const Graph<double>&, const Tensor<double>&, double, GradCheckOptions);

}  // namespace lidarseg::tensorcore
