#include "lidarseg/frame_io.hpp"

#include "binary_io.hpp"

namespace lidarseg::projection {
namespace {

void write_header(detail::ByteWriter& w, std::string_view magic, const SensorModel& s) {
    if (s.rows <= 0 || s.cols <= 0 || s.rows > 0xFFFF || s.cols > 0xFFFF)
        throw UsageError("sensor size does not fit the frame header");
    w.bytes(magic);
    w.u16(kFrameFormatVersion);
    w.u16(static_cast<std::uint16_t>(s.rows));
    w.u16(static_cast<std::uint16_t>(s.cols));
    w.f32(s.theta_min);
    w.f32(s.theta_max);
    w.f32(s.max_range);
}

SensorModel read_header(detail::ByteReader& r, std::string_view magic, const std::string& path) {
    if (r.remaining() < 4 || r.bytes(4) != magic)
        throw FormatError(path + ": bad magic, expected " + std::string(magic));
    const auto version = r.u16();
    if (version != kFrameFormatVersion)
        throw FormatError(path + ": unsupported " + std::string(magic) + " version " + std::to_string(version));
    SensorModel s;
    s.rows = r.u16();
    s.cols = r.u16();
    s.theta_min = r.f32();
    s.theta_max = r.f32();
    s.max_range = r.f32();
    try {
        s.validate();
    } catch (const ConfigError& e) {
        throw FormatError(path + ": invalid sensor header (" + e.what() + ")");
    }
    return s;
}

void require_end(const detail::ByteReader& r, const std::string& path) {
    if (!r.at_end()) throw FormatError(path + ": trailing bytes after payload");
}

}  // namespace

void write_range_image(const std::filesystem::path& path, const RangeImage& image) {
    if (image.ranges.size() != image.sensor.pixels()) throw UsageError("range image size does not match its sensor");
    detail::ByteWriter w;
    write_header(w, "RIMG", image.sensor);
    for (float v : image.ranges) w.f32(v);
    detail::write_file(path.string(), w.buffer());
}

RangeImage read_range_image(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path.string());
    detail::ByteReader r(bytes, path.string());
    RangeImage img(read_header(r, "RIMG", path.string()));
    for (auto& v : img.ranges) v = r.f32();
    require_end(r, path.string());
    return img;
}

void write_label_map(const std::filesystem::path& path, const LabelMap& labels) {
    if (labels.labels.size() != labels.sensor.pixels()) throw UsageError("label map size does not match its sensor");
    detail::ByteWriter w;
    write_header(w, "RLBL", labels.sensor);
    for (auto v : labels.labels) w.u8(v);
    detail::write_file(path.string(), w.buffer());
}

LabelMap read_label_map(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path.string());
    detail::ByteReader r(bytes, path.string());
    LabelMap m;
    m.sensor = read_header(r, "RLBL", path.string());
    m.labels.resize(m.sensor.pixels());
    for (auto& v : m.labels) v = r.u8();
    require_end(r, path.string());
    return m;
}

void write_velocity_map(const std::filesystem::path& path, const VelocityMap& velocity) {
    if (velocity.velocity.size() != 2 * velocity.sensor.pixels())
        throw UsageError("velocity map size does not match its sensor");
    detail::ByteWriter w;
    write_header(w, "RVEL", velocity.sensor);
    for (float v : velocity.velocity) w.f32(v);
    detail::write_file(path.string(), w.buffer());
}

VelocityMap read_velocity_map(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path.string());
    detail::ByteReader r(bytes, path.string());
    VelocityMap m;
    m.sensor = read_header(r, "RVEL", path.string());
    m.velocity.resize(2 * m.sensor.pixels());
    for (auto& v : m.velocity) v = r.f32();
    require_end(r, path.string());
    return m;
}

}  // namespace lidarseg::projection
