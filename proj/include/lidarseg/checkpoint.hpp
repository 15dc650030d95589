#pragma once

#include <filesystem>

#include "lidarseg/adam.hpp"
#include "lidarseg/tensor.hpp"

namespace lidarseg::tensorcore {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// "LSQW" record file: magic, u16 version, then (u16 name length, name,
/// u8 rank, u32 dims..., f32 payload) records, all little-endian.
void write_tensor_records(const std::filesystem::path& path, const TensorMap<float>& tensors);

/// Reads the whole file before returning; any defect throws FormatError and
/// nothing is returned.
TensorMap<float> read_tensor_records(const std::filesystem::path& path);

/// Path of the optimizer-state file stored next to a checkpoint.
std::filesystem::path adam_state_path(const std::filesystem::path& checkpoint);

void save_checkpoint(const TensorMap<float>& params, const AdamState& state, const std::filesystem::path& path);
TensorMap<float> load_params(const std::filesystem::path& path);
AdamState load_adam_state(const std::filesystem::path& checkpoint);

}  // namespace lidarseg::tensorcore
