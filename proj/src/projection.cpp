#include "lidarseg/projection.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "lidarseg/error.hpp"

namespace lidarseg::projection {

void SensorModel::validate() const {
    if (rows < 2) throw ConfigError("sensor needs at least 2 rows, got " + std::to_string(rows));
    if (cols < 4) throw ConfigError("sensor needs at least 4 columns, got " + std::to_string(cols));
    if (!(theta_min < theta_max)) throw ConfigError("sensor theta_min must be below theta_max");
    if (!(max_range > 0.0f)) throw ConfigError("sensor max_range must be positive");
}

std::size_t RangeImage::valid_count() const {
    std::size_t n = 0;
    for (float r : ranges) n += r != kDefectRange;
    return n;
}

double pixel_azimuth(const SensorModel& s, int col) {
    return std::numbers::pi - 2.0 * std::numbers::pi * (col + 0.5) / s.cols;
}

double pixel_elevation(const SensorModel& s, int row) {
    const double tmax = s.theta_max, tmin = s.theta_min;
    return tmax - (tmax - tmin) * (row + 0.5) / s.rows;
}

Vec3 pixel_to_ray(const SensorModel& s, int row, int col) {
    if (row < 0 || row >= s.rows || col < 0 || col >= s.cols)
        throw UsageError("pixel (" + std::to_string(row) + ", " + std::to_string(col) + ") outside " +
                         std::to_string(s.rows) + "x" + std::to_string(s.cols) + " sensor");
    const double phi = pixel_azimuth(s, col);
    const double theta = pixel_elevation(s, row);
    return {std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi), std::sin(theta)};
}

bool bin_point(const SensorModel& s, const Vec3& p, PixelIndex& out) {
    const double planar = std::hypot(p[0], p[1]);
    const double theta = std::atan2(p[2], planar);
    const double phi = std::atan2(p[1], p[0]);
    const double tmax = s.theta_max, tmin = s.theta_min;
    if (theta > tmax || theta < tmin) return false;
    int row = static_cast<int>(std::floor((tmax - theta) / (tmax - tmin) * s.rows));
    if (row == s.rows) row = s.rows - 1;  // theta == theta_min exactly
    const double u = (std::numbers::pi - phi) / (2.0 * std::numbers::pi) * s.cols;
    long col = static_cast<long>(std::floor(u)) % s.cols;
    if (col < 0) col += s.cols;
    out = {row, static_cast<int>(col)};
    return true;
}

Projection project_points(const SensorModel& s, const std::vector<Vec3>& points) {
    s.validate();
    Projection out{RangeImage(s), std::vector<std::int64_t>(s.pixels(), -1)};
    std::vector<double> best(s.pixels(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        if (!(r > 0.0) || !std::isfinite(r)) continue;
        const float rf = static_cast<float>(r);
        if (rf > s.max_range || rf == kDefectRange) continue;
        PixelIndex px;
        if (!bin_point(s, p, px)) continue;
        const std::size_t idx = static_cast<std::size_t>(px.row) * s.cols + px.col;
        if (r < best[idx]) {
            best[idx] = r;
            out.image.ranges[idx] = rf;
            out.winner[idx] = static_cast<std::int64_t>(i);
        }
    }
    return out;
}

std::vector<std::size_t> valid_pixels(const RangeImage& image) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < image.ranges.size(); ++i)
        if (!image.defected(i)) idx.push_back(i);
    return idx;
}

std::vector<Vec3> backproject(const RangeImage& image) {
    std::vector<Vec3> pts;
    const auto& s = image.sensor;
    for (std::size_t i : valid_pixels(image)) {
        const auto d = pixel_to_ray(s, static_cast<int>(i / s.cols), static_cast<int>(i % s.cols));
        const double r = image.ranges[i];
        pts.push_back({r * d[0], r * d[1], r * d[2]});
    }
    return pts;
}

}  // namespace lidarseg::projection
