#include "lidarseg/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "lidarseg/error.hpp"
#include "lidarseg/frame_io.hpp"

namespace lidarseg::datagen {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json interval_json(const Interval& r) { return json::array({r.min, r.max}); }
json interval_json(const CountInterval& r) { return json::array({r.min, r.max}); }

void read_interval(const json& j, const char* key, Interval& r) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 2) throw ConfigError(std::string("scene config: '") + key + "' must be [min, max]");
    r = {a[0].get<double>(), a[1].get<double>()};
}

void read_interval(const json& j, const char* key, CountInterval& r) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 2) throw ConfigError(std::string("scene config: '") + key + "' must be [min, max]");
    r = {a[0].get<int>(), a[1].get<int>()};
}

template <typename V>
void read_value(const json& j, const char* key, V& v) {
    if (j.contains(key)) v = j.at(key).get<V>();
}

std::string frame_stem(std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu", k);
    return buf;
}

std::string sequence_name(int k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "seq_%05d", k);
    return buf;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << '\n';
}

json box_json(const Box& b) {
    return json{{"min", b.min}, {"max", b.max}};
}

Box box_from_json(const json& j) {
    Box b;
    b.min = j.at("min").get<Vec3>();
    b.max = j.at("max").get<Vec3>();
    return b;
}

}  // namespace

void to_json(json& j, const SceneConfig& c) {
    j = json{
        {"sensor",
         {{"rows", c.sensor.rows},
          {"cols", c.sensor.cols},
          {"theta_min", c.sensor.theta_min},
          {"theta_max", c.sensor.theta_max},
          {"max_range", c.sensor.max_range}}},
        {"room_half_extents", {c.room_half_x, c.room_half_y}},
        {"room_height", c.room_height},
        {"sensor_height", c.sensor_height},
        {"obstacles", json::array()},
        {"pillar_count", interval_json(c.pillar_count)},
        {"pillar_half_size", interval_json(c.pillar_half_size)},
        {"pillar_height", interval_json(c.pillar_height)},
        {"human_count", interval_json(c.human_count)},
        {"human_speed", interval_json(c.human_speed)},
        {"human_radius", interval_json(c.human_radius)},
        {"human_height", interval_json(c.human_height)},
        {"sensor_speed", interval_json(c.sensor_speed)},
        {"sensor_yaw_rate", interval_json(c.sensor_yaw_rate)},
        {"sensor_initial_yaw", interval_json(c.sensor_initial_yaw)},
        {"sensor_start_radius", c.sensor_start_radius},
        {"min_spawn_distance", c.min_spawn_distance},
        {"frames", c.frames},
        {"frame_interval", c.frame_interval},
        {"dropout", c.dropout},
        {"seed", c.seed},
    };
    for (const auto& b : c.obstacles) j["obstacles"].push_back(box_json(b));
}

void from_json(const json& j, SceneConfig& c) {
    try {
        if (j.contains("sensor")) {
            const auto& s = j.at("sensor");
            read_value(s, "rows", c.sensor.rows);
            read_value(s, "cols", c.sensor.cols);
            read_value(s, "theta_min", c.sensor.theta_min);
            read_value(s, "theta_max", c.sensor.theta_max);
            read_value(s, "max_range", c.sensor.max_range);
        }
        if (j.contains("room_half_extents")) {
            const auto& a = j.at("room_half_extents");
            c.room_half_x = a.at(0).get<double>();
            c.room_half_y = a.at(1).get<double>();
        }
        read_value(j, "room_height", c.room_height);
        read_value(j, "sensor_height", c.sensor_height);
        if (j.contains("obstacles")) {
            c.obstacles.clear();
            for (const auto& b : j.at("obstacles")) c.obstacles.push_back(box_from_json(b));
        }
        read_interval(j, "pillar_count", c.pillar_count);
        read_interval(j, "pillar_half_size", c.pillar_half_size);
        read_interval(j, "pillar_height", c.pillar_height);
        read_interval(j, "human_count", c.human_count);
        read_interval(j, "human_speed", c.human_speed);
        read_interval(j, "human_radius", c.human_radius);
        read_interval(j, "human_height", c.human_height);
        read_interval(j, "sensor_speed", c.sensor_speed);
        read_interval(j, "sensor_yaw_rate", c.sensor_yaw_rate);
        read_interval(j, "sensor_initial_yaw", c.sensor_initial_yaw);
        read_value(j, "sensor_start_radius", c.sensor_start_radius);
        read_value(j, "min_spawn_distance", c.min_spawn_distance);
        read_value(j, "frames", c.frames);
        read_value(j, "frame_interval", c.frame_interval);
        read_value(j, "dropout", c.dropout);
        read_value(j, "seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scene config: ") + e.what());
    }
}

SplitCounts default_split(int count) {
    if (count < 0) throw ConfigError("sequence count must be nonnegative");
    SplitCounts s;
    s.train = static_cast<int>(std::lround(count * 900.0 / 1108.0));
    s.val = static_cast<int>(std::lround(count * 100.0 / 1108.0));
    if (s.train + s.val > count) s.val = count - s.train;
    s.test = count - s.train - s.val;
    return s;
}

void write_sequence(const fs::path& dir, const SequenceSample& sample, const SceneConfig& config) {
    fs::create_directories(dir);
    json poses = json::array();
    for (std::size_t k = 0; k < sample.frames.size(); ++k) {
        const auto& f = sample.frames[k];
        const auto stem = frame_stem(k);
        projection::write_range_image(dir / (stem + ".rimg"), f.range);
        projection::write_label_map(dir / (stem + ".rlbl"), f.truth.labels);
        projection::write_velocity_map(dir / (stem + ".rvel"), f.truth.velocity);
        const auto& p = sample.poses.at(k);
        const auto& v = sample.sensor_velocity.at(k);
        const auto local = to_sensor_frame(v, p.yaw);
        json actors = json::array();
        for (const auto& a : sample.actors.at(k))
            actors.push_back({{"x", a.body.x},
                              {"y", a.body.y},
                              {"radius", a.body.radius},
                              {"height", a.body.height},
                              {"vx", a.vx},
                              {"vy", a.vy}});
        poses.push_back({{"frame", k},
                         {"x", p.x},
                         {"y", p.y},
                         {"yaw", p.yaw},
                         {"velocity_world", v},
                         {"velocity_sensor", local},
                         {"actors", std::move(actors)}});
    }
    json obstacles = json::array();
    for (const auto& b : sample.obstacles) obstacles.push_back(box_json(b));
    write_json(dir / "manifest.json", json{{"seed", sample.seed},
                                           {"frames", sample.frames.size()},
                                           {"scene", config},
                                           {"obstacles", std::move(obstacles)},
                                           {"poses", std::move(poses)}});
}

SequenceSample read_sequence(const fs::path& dir) {
    const json m = read_json(dir / "manifest.json");
    SequenceSample s;
    try {
        s.seed = m.at("seed").get<std::uint64_t>();
        const auto frames = m.at("frames").get<std::size_t>();
        for (const auto& b : m.at("obstacles")) s.obstacles.push_back(box_from_json(b));
        const auto& poses = m.at("poses");
        if (poses.size() != frames) throw FormatError(dir.string() + ": pose count does not match frame count");
        for (std::size_t k = 0; k < frames; ++k) {
            const auto stem = frame_stem(k);
            Frame f;
            f.range = projection::read_range_image(dir / (stem + ".rimg"));
            f.truth.labels = projection::read_label_map(dir / (stem + ".rlbl"));
            f.truth.velocity = projection::read_velocity_map(dir / (stem + ".rvel"));
            if (!(f.truth.labels.sensor == f.range.sensor) || !(f.truth.velocity.sensor == f.range.sensor))
                throw FormatError(dir.string() + "/" + stem + ": frame files disagree on the sensor header");
            if (k == 0) s.sensor = f.range.sensor;
            if (!(f.range.sensor == s.sensor)) throw FormatError(dir.string() + ": frames use different sensors");
            s.frames.push_back(std::move(f));
            const auto& p = poses[k];
            s.poses.push_back(Pose{p.at("x").get<double>(), p.at("y").get<double>(), p.at("yaw").get<double>()});
            s.sensor_velocity.push_back(p.at("velocity_world").get<std::array<double, 2>>());
            std::vector<ActorState> actors;
            for (const auto& a : p.at("actors")) {
                ActorState st;
                st.body.x = a.at("x").get<double>();
                st.body.y = a.at("y").get<double>();
                st.body.radius = a.at("radius").get<double>();
                st.body.height = a.at("height").get<double>();
                st.vx = a.at("vx").get<double>();
                st.vy = a.at("vy").get<double>();
                actors.push_back(st);
            }
            s.actors.push_back(std::move(actors));
        }
    } catch (const json::exception& e) {
        throw FormatError(dir.string() + "/manifest.json: " + e.what());
    }
    return s;
}

std::vector<SequenceSample> generate_samples(const SceneConfig& config, int count, std::uint64_t seed,
                                             int first_index) {
    std::vector<SequenceSample> out;
    out.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int k = 0; k < count; ++k)
        out.push_back(generate_sequence(config, mix_seed(seed, static_cast<std::uint64_t>(first_index + k))));
    return out;
}

DatasetManifest generate_dataset(const SceneConfig& config, const SplitCounts& split, std::uint64_t seed,
                                 const fs::path& root) {
    config.validate();
    if (split.train < 0 || split.val < 0 || split.test < 0) throw ConfigError("split counts must be nonnegative");
    fs::create_directories(root);
    DatasetManifest manifest{config, seed, {}, {}, {}};
    for (int k = 0; k < split.total(); ++k) {
        const auto name = sequence_name(k);
        const auto sample = generate_sequence(config, mix_seed(seed, static_cast<std::uint64_t>(k)));
        write_sequence(root / name, sample, config);
        if (k < split.train)
            manifest.train.push_back(name);
        else if (k < split.train + split.val)
            manifest.val.push_back(name);
        else
            manifest.test.push_back(name);
    }
    write_json(root / "manifest.json", json{{"seed", seed},
                                            {"scene", config},
                                            {"splits", {{"train", manifest.train},
                                                        {"val", manifest.val},
                                                        {"test", manifest.test}}}});
    return manifest;
}

DatasetManifest read_manifest(const fs::path& root) {
    const json m = read_json(root / "manifest.json");
    DatasetManifest out;
    try {
        out.seed = m.at("seed").get<std::uint64_t>();
        out.config = m.at("scene").get<SceneConfig>();
        const auto& s = m.at("splits");
        out.train = s.at("train").get<std::vector<std::string>>();
        out.val = s.at("val").get<std::vector<std::string>>();
        out.test = s.at("test").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw FormatError((root / "manifest.json").string() + ": " + e.what());
    }
    return out;
}

std::vector<SequenceSample> load_split(const fs::path& root, const std::string& split) {
    const auto m = read_manifest(root);
    const std::vector<std::string>* names = nullptr;
    if (split == "train")
        names = &m.train;
    else if (split == "val")
        names = &m.val;
    else if (split == "test")
        names = &m.test;
    else
        throw UsageError("unknown split '" + split + "' (expected train, val or test)");
    std::vector<SequenceSample> out;
    for (const auto& n : *names) out.push_back(read_sequence(root / n));
    return out;
}

}  // namespace lidarseg::datagen
