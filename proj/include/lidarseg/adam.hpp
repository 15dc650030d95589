#pragma once

#include <cstdint>

#include "lidarseg/tensor.hpp"

namespace lidarseg::tensorcore {

/// Adam moments plus hyper-parameters. Hyper-parameters are kept in single
/// precision so that a saved state reloads bit-for-bit.
struct AdamState {
    TensorMap<float> first_moment;
    TensorMap<float> second_moment;
    std::uint64_t step = 0;
    float learning_rate = 3e-5f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;

    /// Zero moments shaped like params.
    static AdamState for_params(const TensorMap<float>& params, float learning_rate = 3e-5f);

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update. The effective step size is
/// learning_rate * lr_scale (used by decay schedules).
void adam_step(TensorMap<float>& params, const TensorMap<float>& grads, AdamState& state, double lr_scale = 1.0);

}  // namespace lidarseg::tensorcore
