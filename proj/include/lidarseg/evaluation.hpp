#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lidarseg/datagen.hpp"
#include "lidarseg/network.hpp"

namespace lidarseg::evaluation {

using network::ModelParams;
using network::NetworkConfig;
using tensorcore::Tensor;

/// Pixel counts with human as the positive class.
struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// TP / (TP + FP + FN); empty when the denominator is zero.
std::optional<double> iou_from_counts(const ConfusionCounts& c);

/// Ground-truth range interval [lower, upper).
struct RangeBucket {
    double lower = 0.0;
    double upper = std::numeric_limits<double>::infinity();

    void validate() const;
    bool contains(double range) const { return range >= lower && range < upper; }
    std::string label() const;  // "0-4", "8-inf"
    friend bool operator==(const RangeBucket&, const RangeBucket&) = default;
};

/// The four reporting ranges: 0-inf, 0-4, 4-8, 8-inf.
std::vector<RangeBucket> default_buckets();

/// Parses "0:4,4:8,8:inf".
std::vector<RangeBucket> parse_buckets(const std::string& spec);

/// Per-pixel argmax (ties go to background); defected pixels get the defect code.
std::vector<std::uint8_t> argmax_labels(const Tensor<float>& probs, const projection::RangeImage& ranges);

struct IouResult {
    std::optional<double> iou;
    ConfusionCounts counts;
};

/// Counts pixels that are non-defected and whose ground-truth range lies in the bucket.
IouResult iou(std::span<const std::uint8_t> predicted, const projection::LabelMap& truth, const RangeBucket& bucket,
              const projection::RangeImage& ranges);
IouResult iou(const Tensor<float>& probs, const projection::LabelMap& truth, const RangeBucket& bucket,
              const projection::RangeImage& ranges);

struct BucketReport {
    RangeBucket bucket;
    ConfusionCounts counts;
    std::optional<double> iou;
};

struct EvalReport {
    std::vector<BucketReport> buckets;
    ConfusionCounts overall;
    std::optional<double> overall_iou;
    /// Mean ‖v̂ − v‖ (m/s); empty without a velocity head or without pixels.
    std::optional<double> velocity_error_human;
    std::optional<double> velocity_error_background;
    /// Same error for a predictor that always answers (0, 0).
    std::optional<double> zero_velocity_error_human;
    std::optional<double> zero_velocity_error_background;
    std::uint64_t human_pixels = 0;
    std::uint64_t background_pixels = 0;
    std::size_t windows = 0;
    double ms_per_window = 0.0;
};

struct EvalOptions {
    /// First frame index evaluated as a window target; negative means n − 1.
    int first_target_frame = -1;
    int window_stride = 1;
};

/// Dataset-level evaluation: counts are pooled over every window before dividing.
EvalReport evaluate(const ModelParams& params, const NetworkConfig& config,
                    const std::vector<datagen::SequenceSample>& split, const std::vector<RangeBucket>& buckets,
                    const EvalOptions& options = {});

/// Evaluation of a fixed label answer for every window (used by the baselines).
EvalReport evaluate_constant(const std::vector<datagen::SequenceSample>& split, const std::vector<RangeBucket>& buckets,
                             std::uint8_t label, int first_target_frame);

/// Comma-separated report: one row per bucket, then velocity summary rows.
std::string report_csv(const EvalReport& report);

/// "n/a" for an undefined value.
std::string format_optional(const std::optional<double>& v, int precision = 4);

struct RuntimeStats {
    double median_ms = 0.0;
    double p90_ms = 0.0;
    int warmup = 0;
    std::vector<double> samples_ms;
};

/// Times `repetitions` forwards (after 3 untimed warm-ups) on a random window.
RuntimeStats measure_runtime(const ModelParams& params, const NetworkConfig& config, int repetitions);

/// Error category codes of the exported 2D image.
enum ErrorCategory : std::uint8_t { kTruePositive = 0, kTrueNegative = 1, kFalsePositive = 2, kFalseNegative = 3 };

struct ExportSummary {
    std::filesystem::path labels_file;
    std::filesystem::path velocity_file;
    std::filesystem::path points_file;
    std::filesystem::path errors_file;
    std::filesystem::path errors_image;
    ConfusionCounts counts;
    std::size_t points = 0;
};

/// Runs the model on `window` (n frames, last one is the target) and writes
/// pred.rlbl, pred.rvel (only with a velocity head), points.txt
/// ("x y z label" per valid pixel), errors.rlbl (codes 0-3, 255 = defected)
/// and errors.ppm.
ExportSummary export_prediction(const ModelParams& params, const NetworkConfig& config,
                                std::span<const datagen::Frame> window, const std::filesystem::path& out_dir);

}  // namespace lidarseg::evaluation
