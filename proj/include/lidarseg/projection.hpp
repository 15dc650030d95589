#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace lidarseg::projection {

using Vec3 = std::array<double, 3>;

/// Equiangular spherical sensor. Rows run from the top elevation down,
/// columns run clockwise starting just left of the rear (azimuth π).
struct SensorModel {
    int rows = 32;
    int cols = 128;
    float theta_min = -0.535f;  // radians
    float theta_max = 0.186f;
    float max_range = 100.0f;  // meters

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
    std::size_t pixels() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }

    friend bool operator==(const SensorModel&, const SensorModel&) = default;
};

/// Range value reserved for pixels without a return.
inline constexpr float kDefectRange = 0.0f;

/// Label codes shared by truth, predictions and the RLBL file.
enum Label : std::uint8_t { kBackground = 0, kHuman = 1, kDefected = 255 };

struct RangeImage {
    SensorModel sensor;
    std::vector<float> ranges;  // rows × cols, row-major

    RangeImage() = default;
    explicit RangeImage(const SensorModel& s) : sensor(s), ranges(s.pixels(), kDefectRange) {}

    float at(int row, int col) const { return ranges[static_cast<std::size_t>(row) * sensor.cols + col]; }
    float& at(int row, int col) { return ranges[static_cast<std::size_t>(row) * sensor.cols + col]; }
    bool defected(std::size_t i) const { return ranges[i] == kDefectRange; }
    std::size_t valid_count() const;

    friend bool operator==(const RangeImage&, const RangeImage&) = default;
};

/// Per-pixel class map (values from Label).
struct LabelMap {
    SensorModel sensor;
    std::vector<std::uint8_t> labels;

    friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Per-pixel planar velocity (vx, vy) in m/s, interleaved.
struct VelocityMap {
    SensorModel sensor;
    std::vector<float> velocity;  // rows × cols × 2

    friend bool operator==(const VelocityMap&, const VelocityMap&) = default;
};

struct FrameTruth {
    LabelMap labels;
    VelocityMap velocity;

    friend bool operator==(const FrameTruth&, const FrameTruth&) = default;
};

double pixel_azimuth(const SensorModel& sensor, int col);
double pixel_elevation(const SensorModel& sensor, int row);

/// Unit ray through the centre of pixel (row, col); x forward, z up.
Vec3 pixel_to_ray(const SensorModel& sensor, int row, int col);

struct PixelIndex {
    int row;
    int col;
};

/// Pixel bin of a direction/point, or false when it falls outside the
/// vertical field of view.
bool bin_point(const SensorModel& sensor, const Vec3& p, PixelIndex& out);

struct Projection {
    RangeImage image;
    /// Index into the input point list of the point that won each pixel, -1 if none.
    std::vector<std::int64_t> winner;
};

/// Z-buffered spherical projection; the nearest point per pixel wins.
/// Points outside the vertical field of view or beyond max range are dropped.
Projection project_points(const SensorModel& sensor, const std::vector<Vec3>& points);

/// One point per non-defected pixel, in row-major pixel order.
std::vector<Vec3> backproject(const RangeImage& image);

/// Pixel indices that backproject() emits, in the same order.
std::vector<std::size_t> valid_pixels(const RangeImage& image);

}  // namespace lidarseg::projection
