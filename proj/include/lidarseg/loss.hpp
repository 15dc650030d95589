#pragma once

#include <cstddef>
#include <optional>

#include "lidarseg/projection.hpp"
#include "lidarseg/tape.hpp"

namespace lidarseg::training {

using tensorcore::Tensor;
using tensorcore::Var;

/// Weights of the class, human-velocity and background-velocity terms.
/// Defaults are the published values (1e5, 1, 1001).
struct LossWeights {
    double lambda_c = 1e5;
    double lambda_h = 1.0;
    double lambda_b = 1001.0;

    void validate() const;
    /// Exchanges lambda_h and lambda_b.
    LossWeights swapped() const { return {lambda_c, lambda_b, lambda_h}; }
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Unweighted mean terms plus the weighted total. A term whose pixel count
/// is zero is reported as 0 and left out of the total.
struct LossBreakdown {
    double total = 0.0;
    double ce = 0.0;
    double vel_human = 0.0;
    double vel_background = 0.0;
    std::size_t valid_pixels = 0;
    std::size_t human_pixels = 0;
    std::size_t background_pixels = 0;
};

/// Masked joint loss: weighted mean cross-entropy over non-defected pixels,
/// plus weighted mean squared velocity error over human and background
/// pixels. velocity may be null (no velocity head), which drops both
/// velocity terms.
template <typename T>
LossBreakdown total_loss(const Tensor<T>& labels, const Tensor<T>* velocity, const projection::FrameTruth& truth,
                         const LossWeights& weights);

/// Same loss recorded on a tape so it can be differentiated.
template <typename T>
Var total_loss(tensorcore::Tape<T>& tape, Var labels, std::optional<Var> velocity,
               const projection::FrameTruth& truth, const LossWeights& weights, LossBreakdown* breakdown = nullptr);

}  // namespace lidarseg::training
