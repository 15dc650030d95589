#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "lidarseg/projection.hpp"

namespace lidarseg::datagen {

using projection::Vec3;

struct Interval {
    double min = 0.0;
    double max = 0.0;
    friend bool operator==(const Interval&, const Interval&) = default;
};

struct CountInterval {
    int min = 0;
    int max = 0;
    friend bool operator==(const CountInterval&, const CountInterval&) = default;
};

/// Axis-aligned box in world coordinates (floor at z = 0).
struct Box {
    Vec3 min{};
    Vec3 max{};
    friend bool operator==(const Box&, const Box&) = default;
};

/// Vertical capsule standing on z = base: a cylinder of the given radius
/// between base + radius and base + height - radius, capped by hemispheres.
struct Capsule {
    double x = 0.0;
    double y = 0.0;
    double radius = 0.25;
    double height = 1.7;
    double base = 0.0;
    friend bool operator==(const Capsule&, const Capsule&) = default;
};

struct SceneConfig {
    projection::SensorModel sensor;
    double room_half_x = 12.0;
    double room_half_y = 8.0;
    double room_height = 3.5;
    double sensor_height = 1.0;
    std::vector<Box> obstacles;
    // Static human-sized boxes placed at random per sequence; background class.
    CountInterval pillar_count{2, 6};
    Interval pillar_half_size{0.2, 0.3};
    Interval pillar_height{1.5, 2.0};
    CountInterval human_count{2, 6};
    Interval human_speed{0.5, 1.8};
    Interval human_radius{0.2, 0.3};
    Interval human_height{1.5, 1.9};
    Interval sensor_speed{0.0, 0.5};
    Interval sensor_yaw_rate{-0.1, 0.1};
    Interval sensor_initial_yaw{-3.141592653589793, 3.141592653589793};
    double sensor_start_radius = 1.0;
    double min_spawn_distance = 1.5;
    int frames = 32;
    double frame_interval = 0.1;
    double dropout = 0.02;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

struct ActorState {
    Capsule body;
    double vx = 0.0;  // world frame, m/s
    double vy = 0.0;
    friend bool operator==(const ActorState&, const ActorState&) = default;
};

struct Pose {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;
    friend bool operator==(const Pose&, const Pose&) = default;
};

/// Everything render_frame needs to know about the world at one instant.
struct SceneState {
    double room_half_x = 12.0;
    double room_half_y = 8.0;
    double room_height = 3.5;
    double sensor_height = 1.0;
    std::vector<Box> obstacles;
    std::vector<ActorState> actors;
};

struct Frame {
    projection::RangeImage range;
    projection::FrameTruth truth;
    friend bool operator==(const Frame&, const Frame&) = default;
};

struct SequenceSample {
    projection::SensorModel sensor;
    std::vector<Frame> frames;
    std::vector<Pose> poses;
    std::vector<std::array<double, 2>> sensor_velocity;  // world frame, per frame
    std::vector<std::vector<ActorState>> actors;          // per frame
    std::vector<Box> obstacles;                           // including generated pillars
    std::uint64_t seed = 0;

    friend bool operator==(const SequenceSample&, const SequenceSample&) = default;
};

/// World-frame planar vector expressed in the frame of a sensor with the given yaw.
std::array<double, 2> to_sensor_frame(std::array<double, 2> v, double yaw);

/// Smallest positive hit distance of a unit-direction ray with the capsule.
std::optional<double> ray_capsule_intersect(const Vec3& origin, const Vec3& direction, const Capsule& capsule);

/// Smallest positive hit distance with a solid box (entry, or exit if the origin is inside).
std::optional<double> ray_box_intersect(const Vec3& origin, const Vec3& direction, const Box& box);

/// Distance to the room shell when the origin is inside the room.
std::optional<double> ray_room_intersect(const Vec3& origin, const Vec3& direction, double half_x, double half_y,
                                         double height);

/// Ray-casts one frame from the given sensor pose.
Frame render_frame(const SceneState& scene, const Pose& pose, std::array<double, 2> sensor_velocity,
                   const projection::SensorModel& sensor);

/// Independently knocks out each valid pixel with probability p.
void apply_dropout(Frame& frame, double p, std::mt19937_64& rng);

/// Pure function of (config, seed).
SequenceSample generate_sequence(const SceneConfig& config, std::uint64_t seed);

/// Uniform double in [0, 1) from 53 random bits; platform independent.
double unit_uniform(std::mt19937_64& rng);

/// Seed derivation used for per-sequence and per-step streams.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index);

}  // namespace lidarseg::datagen
