#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "lidarseg/tape.hpp"

namespace lidarseg::tensorcore {

struct GradCheckOptions {
    double step = 1e-4;
    /// Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
    double abs_floor = 1e-6;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    bool passed = true;
};

/// A scalar-valued graph over a set of leaf inputs.
template <typename T>
using MultiGraph = std::function<Var(Tape<T>&, const std::vector<Var>& inputs)>;

template <typename T>
using Graph = std::function<Var(Tape<T>&, Var input)>;

/// Compares reverse-mode gradients with central differences on the listed
/// (tensor, element) coordinates; an empty list checks every element.
template <typename T>
GradCheckResult grad_check(const MultiGraph<T>& graph, const std::vector<Tensor<T>>& inputs, double tolerance,
                           const std::vector<std::pair<std::size_t, std::size_t>>& coords = {},
                           GradCheckOptions options = {});

template <typename T>
GradCheckResult grad_check(const Graph<T>& graph, const Tensor<T>& input, double tolerance,
                           GradCheckOptions options = {});

extern template GradCheckResult grad_check<float>(const MultiGraph<float>&, const std::vector<Tensor<float>>&, double,
                                                  const std::vector<std::pair<std::size_t, std::size_t>>&,
                                                  GradCheckOptions);
extern template GradCheckResult grad_check<double>(const MultiGraph<double>&, const std::vector<Tensor<double>>&,
                                                   double, const std::vector<std::pair<std::size_t, std::size_t>>&,
                                                   GradCheckOptions);
extern template GradCheckResult grad_check<float>(const Graph<float>&, const Tensor<float>&, double, GradCheckOptions);
extern template GradCheckResult grad_check<double>(const Graph<double>&, const Tensor<double>&, double,
                                                   GradCheckOptions);

}  // namespace lidarseg::tensorcore
