#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lidarseg/tape.hpp"

namespace lidarseg::tensorcore {

enum class PadMode {
    /// Columns wrap around (azimuth is periodic); rows are zero padded.
    CircularWZeroH,
};

/// Same-size 2D convolution. input h×w×c_in, kernel k×k×c_in×c_out with
/// k ∈ {1, 3}, bias c_out.
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var kernel, Var bias, PadMode pad = PadMode::CircularWZeroH);

/// max(x, 0); a nonzero negative_slope gives the leaky variant.
template <typename T>
Var relu(Tape<T>& tape, Var input, T negative_slope = T{0});

/// Max pooling with pool size [1 2]: halves the width.
template <typename T>
Var maxpool_w(Tape<T>& tape, Var input);

/// Nearest-neighbour column replication.
template <typename T>
Var upsample_w(Tape<T>& tape, Var input, std::size_t factor);

/// Per-pixel softmax over the channel axis.
template <typename T>
Var softmax_pixels(Tape<T>& tape, Var input);

template <typename T>
Var concat_channels(Tape<T>& tape, std::span<const Var> inputs);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

/// Sum of all elements, as a 1-element tensor.
template <typename T>
Var sum(Tape<T>& tape, Var input);

/// Mean per-pixel cross-entropy of probabilities h×w×k against integer
/// targets (one per pixel); log clamped at 1e-12.
template <typename T>
Var mean_cross_entropy(Tape<T>& tape, Var probs, std::span<const std::uint8_t> targets);

}  // namespace lidarseg::tensorcore
