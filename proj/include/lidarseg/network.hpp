#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lidarseg/projection.hpp"
#include "lidarseg/tape.hpp"

namespace lidarseg::network {

using tensorcore::Tensor;
using tensorcore::TensorMap;
using tensorcore::Var;

struct NetworkConfig {
    int frames = 4;
    int height = 32;
    int width = 128;
    int base_channels = 64;
    int classes = 2;
    int velocity_dims = 2;
    bool velocity_head_enabled = true;
    bool temporal_propagation_enabled = true;
    bool label_feedback_enabled = true;
    /// Slope of the hidden activation for negative inputs; 0 is plain ReLU.
    double relu_leak = 0.0;

    void validate() const;

    // A single frame leaves no temporal branch at all, whatever the flags say.
    bool has_encoder() const { return frames > 1; }
    bool has_velocity_head() const { return frames > 1 && velocity_head_enabled; }
    bool propagates() const { return frames > 1 && temporal_propagation_enabled; }
    bool feeds_back() const { return has_velocity_head() && label_feedback_enabled; }
    /// Width of the concatenated per-frame encoder features (n·C/8).
    int temporal_channels() const { return has_encoder() ? frames * base_channels / 8 : 0; }

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct LayerSpec {
    std::string name;
    int kernel = 3;
    int in_channels = 0;
    int out_channels = 0;

    std::size_t weight_count() const {
        return static_cast<std::size_t>(kernel) * kernel * in_channels * out_channels;
    }
    std::size_t scalar_count() const { return weight_count() + static_cast<std::size_t>(out_channels); }
};

/// Every convolution of the model in construction order. Names follow
/// seg.down{1..3}.conv{1,2}, seg.mid.conv{1,2}, seg.up{3..1}.conv{1,2},
/// seg.head, vel.enc.stage{1..4}, vel.dec.conv{1..3}, vel.head.
std::vector<LayerSpec> layer_table(const NetworkConfig& config);

/// Closed-form scalar count of build(config, seed).
std::size_t param_count(const NetworkConfig& config);

using ModelParams = TensorMap<float>;

/// Fan-in scaled uniform weights (±sqrt(6 / fan_in)), zero biases.
ModelParams build(const NetworkConfig& config, std::uint64_t seed);

/// Throws FormatError naming missing, extra or misshapen parameters.
void check_compatible(const ModelParams& params, const NetworkConfig& config);

std::size_t scalar_count(const ModelParams& params);

/// Range image as an h×w×1 tensor: r / max_range, defected pixels 0.
Tensor<float> normalize(const projection::RangeImage& image);

template <typename T>
struct ForwardResult {
    Var labels;                   // h×w×2 probabilities
    std::optional<Var> velocity;  // h×w×2, linear
    std::map<std::string, Var> params;
};

/// Records the model on the tape. window holds n normalized frames ordered
/// oldest to newest; the last one feeds the segmentation branch.
template <typename T>
ForwardResult<T> forward(tensorcore::Tape<T>& tape, const TensorMap<T>& params, const NetworkConfig& config,
                         std::span<const Tensor<T>> window, bool params_require_grad = true);

/// Gradients of every parameter after tape.backward(); zeros for parameters
/// the graph did not use.
template <typename T>
TensorMap<T> collect_gradients(const tensorcore::Tape<T>& tape, const ForwardResult<T>& result,
                               const TensorMap<T>& params);

struct Prediction {
    Tensor<float> labels;
    std::optional<Tensor<float>> velocity;
};

/// Inference without gradient bookkeeping.
Prediction predict(const ModelParams& params, const NetworkConfig& config, std::span<const Tensor<float>> window);

}  // namespace lidarseg::network
