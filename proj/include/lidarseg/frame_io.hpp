#pragma once

#include <filesystem>

#include "lidarseg/projection.hpp"

namespace lidarseg::projection {

inline constexpr std::uint16_t kFrameFormatVersion = 1;

// Each file: 4-byte magic ("RIMG" / "RLBL" / "RVEL"), u16 version, u16 h,
// u16 w, f32 theta_min, f32 theta_max, f32 max_range, then the payload.
// Everything little-endian.

void write_range_image(const std::filesystem::path& path, const RangeImage& image);
RangeImage read_range_image(const std::filesystem::path& path);

void write_label_map(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_map(const std::filesystem::path& path);

void write_velocity_map(const std::filesystem::path& path, const VelocityMap& velocity);
VelocityMap read_velocity_map(const std::filesystem::path& path);

}  // namespace lidarseg::projection
