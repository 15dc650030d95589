#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lidarseg/evaluation.hpp"
#include "lidarseg/training.hpp"

namespace lidarseg::evaluation {

struct AblationProtocol {
    /// frames and the two component flags are overridden per cell.
    NetworkConfig base;
    training::TrainConfig train;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    int table_frames = 4;
    std::vector<int> frame_sweep{1, 2, 4, 8, 16};
    std::vector<RangeBucket> buckets = default_buckets();
    /// Every cell is scored on the same target frames: those with index
    /// >= max(frame_sweep) - 1.
    bool run_component_table = true;
    bool run_frame_table = true;

    void validate() const;
};

/// One trained and evaluated (config, seed) pair.
struct AblationRun {
    NetworkConfig config;
    std::uint64_t seed = 0;
    EvalReport report;
};

/// Per-seed values of one table cell with their mean and max - min spread.
struct CellStats {
    std::vector<std::optional<double>> values;
    std::optional<double> mean;
    double spread = 0.0;
};

CellStats summarize(const std::vector<std::optional<double>>& values);

struct AblationTable {
    std::string title;
    std::vector<std::string> columns;
    std::vector<NetworkConfig> column_configs;
    std::vector<std::string> rows;          // bucket labels, then velocity rows
    std::vector<std::vector<CellStats>> cells;  // [row][column]
};

struct AblationResult {
    std::optional<AblationTable> components;  // velocity head × propagation at table_frames
    std::optional<AblationTable> frames;      // frame sweep
    std::vector<AblationRun> runs;
};

using AblationProgress = std::function<void(const AblationRun&)>;

/// Trains and evaluates every needed (config, seed) once; cells shared by
/// the two tables reuse the same run.
AblationResult ablate(const std::vector<datagen::SequenceSample>& train_split,
                      const std::vector<datagen::SequenceSample>& test_split, const AblationProtocol& protocol,
                      const AblationProgress& progress = {});

/// Rows of "row,column,mean,spread,seed values..." preceded by a title comment.
std::string table_csv(const AblationTable& table);

/// Human-readable table with mean ± spread in percent.
std::string table_text(const AblationTable& table);

/// Overall IoU against frame count, with per-seed points and the mean line.
std::string frames_plot_svg(const AblationTable& frames_table);

}  // namespace lidarseg::evaluation
