#include "lidarseg/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "lidarseg/error.hpp"

namespace lidarseg::datagen {
namespace {

constexpr double kHitEpsilon = 1e-9;

void check_interval(const Interval& r, const char* name) {
    if (!(r.min <= r.max) || !std::isfinite(r.min) || !std::isfinite(r.max))
        throw ConfigError(std::string("scene config: empty or invalid range '") + name + "'");
}

void check_nonnegative(const Interval& r, const char* name) {
    check_interval(r, name);
    if (r.min < 0.0) throw ConfigError(std::string("scene config: range '") + name + "' must be nonnegative");
}

void check_count(const CountInterval& r, const char* name) {
    if (r.min < 0 || r.min > r.max)
        throw ConfigError(std::string("scene config: empty or negative count range '") + name + "'");
}

double draw(std::mt19937_64& rng, const Interval& r) { return r.min + (r.max - r.min) * unit_uniform(rng); }

int draw(std::mt19937_64& rng, const CountInterval& r) {
    const auto span = static_cast<std::uint64_t>(r.max - r.min) + 1;
    return r.min + static_cast<int>(rng() % span);
}

void consider(std::optional<double>& best, double t) {
    if (t > kHitEpsilon && (!best || t < *best)) best = t;
}

// Moves x by v·dt inside [lo, hi], mirroring at the bounds.
void reflect_step(double& x, double& v, double dt, double lo, double hi) {
    x += v * dt;
    for (int guard = 0; guard < 8 && (x < lo || x > hi); ++guard) {
        if (x > hi) {
            x = 2.0 * hi - x;
            v = -v;
        } else if (x < lo) {
            x = 2.0 * lo - x;
            v = -v;
        }
    }
    x = std::clamp(x, lo, hi);
}

}  // namespace

void SceneConfig::validate() const {
    sensor.validate();
    if (!(room_half_x > 0.0 && room_half_y > 0.0 && room_height > 0.0))
        throw ConfigError("scene config: room extents must be positive");
    if (!(sensor_height > 0.0 && sensor_height < room_height))
        throw ConfigError("scene config: sensor height must lie between floor and ceiling");
    check_count(pillar_count, "pillar_count");
    check_nonnegative(pillar_half_size, "pillar_half_size");
    check_nonnegative(pillar_height, "pillar_height");
    check_count(human_count, "human_count");
    check_nonnegative(human_speed, "human_speed");
    check_nonnegative(human_radius, "human_radius");
    check_nonnegative(human_height, "human_height");
    check_nonnegative(sensor_speed, "sensor_speed");
    check_interval(sensor_yaw_rate, "sensor_yaw_rate");
    check_interval(sensor_initial_yaw, "sensor_initial_yaw");
    if (human_count.max > 0 && human_height.min < 2.0 * human_radius.max)
        throw ConfigError("scene config: human height must be at least twice the radius");
    if (human_count.max > 0 && human_radius.min <= 0.0)
        throw ConfigError("scene config: human radius must be positive");
    if (frames < 1) throw ConfigError("scene config: frames must be at least 1");
    if (!(frame_interval > 0.0)) throw ConfigError("scene config: frame interval must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("scene config: dropout must lie in [0, 1)");
    if (sensor_start_radius < 0.0 || min_spawn_distance < 0.0)
        throw ConfigError("scene config: distances must be nonnegative");
    const double travel = sensor_speed.max * frame_interval * frames + sensor_start_radius;
    if (travel >= std::min(room_half_x, room_half_y))
        throw ConfigError("scene config: the sensor path can leave the room");
    const double margin = std::max(human_radius.max, pillar_half_size.max);
    if ((human_count.max > 0 || pillar_count.max > 0) &&
        (room_half_x <= margin || room_half_y <= margin))
        throw ConfigError("scene config: room too small for its actors");
}

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
    // splitmix64 finaliser over base + golden-ratio stride
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::array<double, 2> to_sensor_frame(std::array<double, 2> v, double yaw) {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return {c * v[0] + s * v[1], -s * v[0] + c * v[1]};
}

std::optional<double> ray_capsule_intersect(const Vec3& o, const Vec3& d, const Capsule& cap) {
    const double r = cap.radius;
    const double z0 = cap.base + r;
    const double z1 = cap.base + cap.height - r;
    std::optional<double> best;

    // cylinder body
    const double px = o[0] - cap.x, py = o[1] - cap.y;
    const double a = d[0] * d[0] + d[1] * d[1];
    if (a > 1e-18) {
        const double b = px * d[0] + py * d[1];
        const double c = px * px + py * py - r * r;
        const double disc = b * b - a * c;
        if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / a, (-b + sq) / a}) {
                const double z = o[2] + t * d[2];
                if (z >= z0 && z <= z1) consider(best, t);
            }
        }
    }
    // hemispherical caps
    for (int cap_index = 0; cap_index < 2; ++cap_index) {
        const double cz = cap_index == 0 ? z0 : z1;
        const double qx = px, qy = py, qz = o[2] - cz;
        const double b = qx * d[0] + qy * d[1] + qz * d[2];
        const double c = qx * qx + qy * qy + qz * qz - r * r;
        const double disc = b * b - c;
        if (disc < 0.0) continue;
        const double sq = std::sqrt(disc);
        for (double t : {-b - sq, -b + sq}) {
            const double z = o[2] + t * d[2];
            if ((cap_index == 0 && z <= z0) || (cap_index == 1 && z >= z1)) consider(best, t);
        }
    }
    return best;
}

std::optional<double> ray_box_intersect(const Vec3& o, const Vec3& d, const Box& box) {
    double tmin = -std::numeric_limits<double>::infinity();
    double tmax = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
        if (d[k] == 0.0) {
            if (o[k] < box.min[k] || o[k] > box.max[k]) return std::nullopt;
            continue;
        }
        double t0 = (box.min[k] - o[k]) / d[k];
        double t1 = (box.max[k] - o[k]) / d[k];
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
    }
    if (tmax < tmin) return std::nullopt;
    if (tmin > kHitEpsilon) return tmin;
    if (tmax > kHitEpsilon) return tmax;
    return std::nullopt;
}

std::optional<double> ray_room_intersect(const Vec3& o, const Vec3& d, double hx, double hy, double height) {
    const Vec3 lo{-hx, -hy, 0.0};
    const Vec3 hi{hx, hy, height};
    std::optional<double> best;
    for (int k = 0; k < 3; ++k) {
        if (d[k] > 0.0) consider(best, (hi[k] - o[k]) / d[k]);
        if (d[k] < 0.0) consider(best, (lo[k] - o[k]) / d[k]);
    }
    return best;
}

Frame render_frame(const SceneState& scene, const Pose& pose, std::array<double, 2> sensor_velocity,
                   const projection::SensorModel& sensor) {
    using namespace projection;
    sensor.validate();
    Frame f;
    f.range = RangeImage(sensor);
    f.truth.labels = LabelMap{sensor, std::vector<std::uint8_t>(sensor.pixels(), kDefected)};
    f.truth.velocity = VelocityMap{sensor, std::vector<float>(2 * sensor.pixels(), 0.0f)};

    const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
    const Vec3 origin{pose.x, pose.y, scene.sensor_height};
    const auto background_velocity = to_sensor_frame({-sensor_velocity[0], -sensor_velocity[1]}, pose.yaw);
    std::vector<std::array<double, 2>> actor_velocity;
    for (const auto& a : scene.actors)
        actor_velocity.push_back(to_sensor_frame({a.vx - sensor_velocity[0], a.vy - sensor_velocity[1]}, pose.yaw));

    for (int row = 0; row < sensor.rows; ++row) {
        for (int col = 0; col < sensor.cols; ++col) {
            const Vec3 local = pixel_to_ray(sensor, row, col);
            const Vec3 dir{c * local[0] - s * local[1], s * local[0] + c * local[1], local[2]};
            std::optional<double> best =
                ray_room_intersect(origin, dir, scene.room_half_x, scene.room_half_y, scene.room_height);
            int hit_actor = -1;
            for (const auto& box : scene.obstacles) {
                auto t = ray_box_intersect(origin, dir, box);
                if (t && (!best || *t < *best)) best = t;
            }
            for (std::size_t i = 0; i < scene.actors.size(); ++i) {
                auto t = ray_capsule_intersect(origin, dir, scene.actors[i].body);
                if (t && (!best || *t < *best)) {
                    best = t;
                    hit_actor = static_cast<int>(i);
                }
            }
            if (!best) continue;
            const float range = static_cast<float>(*best);
            if (range > sensor.max_range || range == kDefectRange) continue;
            const std::size_t idx = static_cast<std::size_t>(row) * sensor.cols + col;
            f.range.ranges[idx] = range;
            const auto& v = hit_actor >= 0 ? actor_velocity[static_cast<std::size_t>(hit_actor)] : background_velocity;
            f.truth.labels.labels[idx] = hit_actor >= 0 ? kHuman : kBackground;
            f.truth.velocity.velocity[2 * idx] = static_cast<float>(v[0]);
            f.truth.velocity.velocity[2 * idx + 1] = static_cast<float>(v[1]);
        }
    }
    return f;
}

void apply_dropout(Frame& frame, double p, std::mt19937_64& rng) {
    using namespace projection;
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
    if (p == 0.0) return;
    for (std::size_t i = 0; i < frame.range.ranges.size(); ++i) {
        if (frame.range.defected(i)) continue;
        if (unit_uniform(rng) < p) {
            frame.range.ranges[i] = kDefectRange;
            frame.truth.labels.labels[i] = kDefected;
            frame.truth.velocity.velocity[2 * i] = 0.0f;
            frame.truth.velocity.velocity[2 * i + 1] = 0.0f;
        }
    }
}

SequenceSample generate_sequence(const SceneConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(mix_seed(seed, 0));
    std::mt19937_64 dropout_rng(mix_seed(seed, 1));

    SequenceSample out;
    out.sensor = config.sensor;
    out.seed = seed;

    // sensor trajectory: constant world velocity, constant yaw rate
    const double start_angle = draw(rng, Interval{-std::numbers::pi, std::numbers::pi});
    const double start_dist = config.sensor_start_radius * std::sqrt(unit_uniform(rng));
    const double sx0 = start_dist * std::cos(start_angle);
    const double sy0 = start_dist * std::sin(start_angle);
    const double yaw0 = draw(rng, config.sensor_initial_yaw);
    const double speed = draw(rng, config.sensor_speed);
    const double yaw_rate = draw(rng, config.sensor_yaw_rate);
    const std::array<double, 2> sensor_v{speed * std::cos(yaw0), speed * std::sin(yaw0)};

    SceneState scene;
    scene.room_half_x = config.room_half_x;
    scene.room_half_y = config.room_half_y;
    scene.room_height = config.room_height;
    scene.sensor_height = config.sensor_height;
    scene.obstacles = config.obstacles;

    auto far_enough = [&](double x, double y, double clearance) {
        return std::hypot(x - sx0, y - sy0) >= config.min_spawn_distance + clearance;
    };
    constexpr int kMaxAttempts = 1000;

    const int pillars = draw(rng, config.pillar_count);
    for (int i = 0; i < pillars; ++i) {
        const double half = draw(rng, config.pillar_half_size);
        const double height = draw(rng, config.pillar_height);
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            const double x = draw(rng, Interval{-config.room_half_x + half, config.room_half_x - half});
            const double y = draw(rng, Interval{-config.room_half_y + half, config.room_half_y - half});
            if (!far_enough(x, y, half * std::numbers::sqrt2)) continue;
            scene.obstacles.push_back(Box{{x - half, y - half, 0.0}, {x + half, y + half, height}});
            break;
        }
    }

    const int humans = draw(rng, config.human_count);
    for (int i = 0; i < humans; ++i) {
        ActorState a;
        a.body.radius = draw(rng, config.human_radius);
        a.body.height = draw(rng, config.human_height);
        const double v = draw(rng, config.human_speed);
        const double heading = draw(rng, Interval{-std::numbers::pi, std::numbers::pi});
        a.vx = v * std::cos(heading);
        a.vy = v * std::sin(heading);
        const double r = a.body.radius;
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            a.body.x = draw(rng, Interval{-config.room_half_x + r, config.room_half_x - r});
            a.body.y = draw(rng, Interval{-config.room_half_y + r, config.room_half_y - r});
            if (far_enough(a.body.x, a.body.y, r)) break;
        }
        scene.actors.push_back(a);
    }
    out.obstacles = scene.obstacles;

    for (int k = 0; k < config.frames; ++k) {
        const double t = k * config.frame_interval;
        const Pose pose{sx0 + sensor_v[0] * t, sy0 + sensor_v[1] * t, yaw0 + yaw_rate * t};
        Frame frame = render_frame(scene, pose, sensor_v, config.sensor);
        apply_dropout(frame, config.dropout, dropout_rng);
        out.frames.push_back(std::move(frame));
        out.poses.push_back(pose);
        out.sensor_velocity.push_back(sensor_v);
        out.actors.push_back(scene.actors);

        for (auto& a : scene.actors) {
            const double r = a.body.radius;
            reflect_step(a.body.x, a.vx, config.frame_interval, -config.room_half_x + r, config.room_half_x - r);
            reflect_step(a.body.y, a.vy, config.frame_interval, -config.room_half_y + r, config.room_half_y - r);
        }
    }
    return out;
}

}  // namespace lidarseg::datagen
