#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidarseg/adam.hpp"
#include "lidarseg/datagen.hpp"
#include "lidarseg/loss.hpp"
#include "lidarseg/network.hpp"

namespace lidarseg::training {

using network::ModelParams;
using network::NetworkConfig;

struct TrainConfig {
    float learning_rate = 3e-5f;
    /// Inverse-time decay per step: lr_t = lr / (1 + decay * t).
    double decay = 3e-5;
    int batch_size = 1;
    int steps_per_epoch = 250;
    int epochs = 30;
    std::uint64_t seed = 0;
    LossWeights weights;
    /// Train with lambda_h and lambda_b exchanged.
    bool swap_velocity_weights = false;
    /// Write ckpt_epoch_NNNN every k epochs; 0 disables.
    int checkpoint_every = 0;
    /// Start the segmentation head at the training set's class prior
    /// (bias logit log(p / (1 - p)) for the human class).
    bool prior_head_bias = true;

    /// epochs may be 0 (the run returns the initialization).
    void validate() const;
    LossWeights effective_weights() const { return swap_velocity_weights ? weights.swapped() : weights; }
    double learning_rate_at(std::uint64_t step) const {
        return static_cast<double>(learning_rate) / (1.0 + decay * static_cast<double>(step));
    }
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// One line of metrics.csv, averaged over an epoch.
struct MetricsRow {
    int epoch = 0;
    std::uint64_t step = 0;  // optimizer steps completed
    double learning_rate = 0.0;
    double loss_total = 0.0;
    double loss_ce = 0.0;
    double loss_vh = 0.0;
    double loss_vb = 0.0;
    std::optional<double> train_iou;
    std::optional<double> val_iou;
};

std::string metrics_header();
std::string metrics_line(const MetricsRow& row);

struct TrainOptions {
    /// Checkpoints and metrics.csv are written here; empty keeps everything in memory.
    std::filesystem::path out_dir;
    /// Used to pick ckpt_best by pooled human IoU after each epoch.
    const std::vector<datagen::SequenceSample>* validation = nullptr;
    /// Continue from this checkpoint (parameters plus Adam state).
    std::optional<std::filesystem::path> resume_from;
    /// Stop once this many optimizer steps have been taken in total.
    std::optional<std::uint64_t> stop_after_step;
    std::function<void(const MetricsRow&)> on_epoch;
};

struct TrainResult {
    ModelParams params;
    tensorcore::AdamState adam;
    std::vector<MetricsRow> metrics;
    std::size_t skipped_samples = 0;
    std::optional<double> best_val_iou;
    int best_epoch = -1;
};

/// Fraction of human pixels among the non-defected pixels of every frame
/// that can be a window target; empty when one class is absent.
std::optional<double> human_fraction(const std::vector<datagen::SequenceSample>& data, int frames);

/// Network weights drawn from cfg.seed, before any data is seen.
ModelParams initial_params(const NetworkConfig& net, const TrainConfig& cfg);

/// Parameters at step 0 of a run on `data`: the above, with the head bias
/// set from human_fraction when cfg.prior_head_bias is on.
ModelParams initial_params(const NetworkConfig& net, const TrainConfig& cfg,
                           const std::vector<datagen::SequenceSample>& data);

/// Samples one window of n consecutive frames per batch element per step,
/// supervises its last frame and applies Adam. Deterministic for fixed
/// inputs; resuming from a checkpoint reproduces the uninterrupted run.
TrainResult train(const std::vector<datagen::SequenceSample>& data, const NetworkConfig& net, const TrainConfig& cfg,
                  const TrainOptions& options = {});

}  // namespace lidarseg::training

namespace lidarseg::network {

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

}  // namespace lidarseg::network
