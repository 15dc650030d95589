#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidarseg/datagen.hpp"

namespace lidarseg::datagen {

void to_json(nlohmann::json& j, const SceneConfig& c);
void from_json(const nlohmann::json& j, SceneConfig& c);

struct SplitCounts {
    int train = 0;
    int val = 0;
    int test = 0;
    int total() const { return train + val + test; }
};

/// Scales the 900/100/108 train/val/test proportions to `count` sequences.
SplitCounts default_split(int count);

/// Writes frame_NNNN.{rimg,rlbl,rvel} plus manifest.json into dir.
void write_sequence(const std::filesystem::path& dir, const SequenceSample& sample, const SceneConfig& config);
SequenceSample read_sequence(const std::filesystem::path& dir);

struct DatasetManifest {
    SceneConfig config;
    std::uint64_t seed = 0;
    std::vector<std::string> train, val, test;  // sequence directory names
};

/// Generates count sequences under root; sequence k uses mix_seed(seed, k).
DatasetManifest generate_dataset(const SceneConfig& config, const SplitCounts& split, std::uint64_t seed,
                                 const std::filesystem::path& root);

DatasetManifest read_manifest(const std::filesystem::path& root);

/// Loads every sequence of the named split ("train", "val" or "test").
std::vector<SequenceSample> load_split(const std::filesystem::path& root, const std::string& split);

/// In-memory equivalent of generate_dataset for experiments that skip the disk.
std::vector<SequenceSample> generate_samples(const SceneConfig& config, int count, std::uint64_t seed,
                                             int first_index = 0);

}  // namespace lidarseg::datagen
