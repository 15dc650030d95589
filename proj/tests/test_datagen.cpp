#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "lidarseg/dataset.hpp"
#include "lidarseg/error.hpp"
#include "oracles.hpp"

using namespace lidarseg;
using namespace lidarseg::datagen;
using projection::kBackground;
using projection::kDefected;
using projection::kHuman;

namespace {

SceneConfig empty_scene() {
    SceneConfig c;
    c.human_count = {0, 0};
    c.pillar_count = {0, 0};
    c.frames = 3;
    c.dropout = 0.0;
    return c;
}

Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 d{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    for (auto& v : d) v /= len;
    return d;
}

}  // namespace

TEST_CASE("ray_capsule_intersect: head-on body hit and miss") {
    const Capsule cap{5.0, 0.0, 0.3, 2.0, 0.0};
    const auto t = ray_capsule_intersect({0.0, 0.0, 1.0}, {1.0, 0.0, 0.0}, cap);
    REQUIRE(t);
    CHECK(*t == doctest::Approx(4.7).epsilon(1e-12));
    CHECK_FALSE(ray_capsule_intersect({0.0, 0.0, 1.0}, {-1.0, 0.0, 0.0}, cap));
    // above the top cap
    CHECK_FALSE(ray_capsule_intersect({0.0, 0.0, 2.5}, {1.0, 0.0, 0.0}, cap));
    // straight down onto the top cap
    const auto top = ray_capsule_intersect({5.0, 0.0, 3.0}, {0.0, 0.0, -1.0}, cap);
    REQUIRE(top);
    CHECK(*top == doctest::Approx(1.0));
}

TEST_CASE("ray_capsule_intersect agrees with sphere marching") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int hits = 0;
    for (int k = 0; k < 2000; ++k) {
        const Capsule cap{4.0 * u(rng) - 2.0, 4.0 * u(rng) - 2.0, 0.2 + 0.2 * u(rng), 1.2 + 0.8 * u(rng), 0.0};
        Vec3 o;
        do {
            o = {8.0 * u(rng) - 4.0, 8.0 * u(rng) - 4.0, 3.0 * u(rng) - 0.5};
        } while (oracle::sdf_capsule(o, cap) < 0.01);
        // aim near the capsule half the time so hits are common
        Vec3 d = random_unit(rng);
        if (k % 2 == 0) {
            const Vec3 target{cap.x + 0.5 * (u(rng) - 0.5), cap.y + 0.5 * (u(rng) - 0.5), cap.height * u(rng)};
            d = {target[0] - o[0], target[1] - o[1], target[2] - o[2]};
            const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
            for (auto& v : d) v /= len;
        }
        const auto a = ray_capsule_intersect(o, d, cap);
        const auto m = oracle::march_capsule(o, d, cap);
        REQUIRE(a.has_value() == m.has_value());
        if (a) {
            ++hits;
            CHECK(std::abs(*a - *m) < 1e-4);
        }
    }
    CHECK(hits > 500);
}

TEST_CASE("ray_box_intersect and ray_room_intersect") {
    const Box b{{2.0, -1.0, 0.0}, {3.0, 1.0, 2.0}};
    const auto t = ray_box_intersect({0.0, 0.0, 1.0}, {1.0, 0.0, 0.0}, b);
    REQUIRE(t);
    CHECK(*t == doctest::Approx(2.0));
    CHECK_FALSE(ray_box_intersect({0.0, 0.0, 1.0}, {0.0, 1.0, 0.0}, b));
    const auto w = ray_room_intersect({0.0, 0.0, 1.0}, {1.0, 0.0, 0.0}, 6.0, 4.0, 3.0);
    REQUIRE(w);
    CHECK(*w == doctest::Approx(6.0));
    const auto floor = ray_room_intersect({0.0, 0.0, 1.0}, {0.0, 0.0, -1.0}, 6.0, 4.0, 3.0);
    REQUIRE(floor);
    CHECK(*floor == doctest::Approx(1.0));
}

TEST_CASE("render_frame: room beyond max range is all defected") {
    SceneState scene;
    scene.room_half_x = scene.room_half_y = 500.0;
    scene.room_height = 400.0;
    scene.sensor_height = 200.0;
    projection::SensorModel s;
    const auto f = render_frame(scene, Pose{}, {0.0, 0.0}, s);
    CHECK(f.range.valid_count() == 0);
    for (auto l : f.truth.labels.labels) CHECK(l == kDefected);
}

TEST_CASE("render_frame: static capsule dead ahead") {
    SceneState scene;
    scene.room_half_x = scene.room_half_y = 20.0;
    ActorState a;
    a.body = {4.0, 0.0, 0.3, 1.8, 0.0};
    scene.actors.push_back(a);
    projection::SensorModel s;
    s.cols = 127;  // odd width puts a column centre exactly forward
    const auto f = render_frame(scene, Pose{}, {0.0, 0.0}, s);
    const int col = (s.cols - 1) / 2;
    int humans = 0;
    for (int row = 0; row < s.rows; ++row) {
        const std::size_t i = static_cast<std::size_t>(row) * s.cols + col;
        if (f.truth.labels.labels[i] != kHuman) continue;
        ++humans;
        CHECK(f.truth.velocity.velocity[2 * i] == 0.0f);
        CHECK(f.truth.velocity.velocity[2 * i + 1] == 0.0f);
        if (std::abs(projection::pixel_elevation(s, row)) < 0.02)
            CHECK(f.range.ranges[i] == doctest::Approx(3.7).epsilon(1e-3));
    }
    CHECK(humans > 0);
}

TEST_CASE("render_frame matches the sphere-marching renderer") {
    SceneConfig c;
    c.dropout = 0.0;
    c.frames = 1;
    c.sensor.cols = 64;
    c.sensor.rows = 16;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto sample = generate_sequence(c, seed);
        SceneState scene;
        scene.room_half_x = c.room_half_x;
        scene.room_half_y = c.room_half_y;
        scene.room_height = c.room_height;
        scene.sensor_height = c.sensor_height;
        scene.obstacles = sample.obstacles;
        scene.actors = sample.actors[0];
        const auto ref = oracle::march_frame(scene, sample.poses[0], c.sensor);
        const auto& got = sample.frames[0].range.ranges;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK((got[i] == 0.0f) == (ref[i] == 0.0f));
            CHECK(std::abs(got[i] - ref[i]) < 1e-3);
        }
    }
}

TEST_CASE("generator: no humans and a stationary sensor give zero background velocity") {
    auto c = empty_scene();
    c.sensor_speed = {0.0, 0.0};
    c.sensor_yaw_rate = {0.0, 0.0};
    const auto s = generate_sequence(c, 3);
    for (const auto& f : s.frames) {
        for (std::size_t i = 0; i < f.truth.labels.labels.size(); ++i) {
            CHECK(f.truth.labels.labels[i] != kHuman);
            CHECK(f.truth.velocity.velocity[2 * i] == 0.0f);
            CHECK(f.truth.velocity.velocity[2 * i + 1] == 0.0f);
        }
    }
    // static scene, static sensor, no dropout: identical frames
    CHECK(s.frames[0] == s.frames[1]);
    CHECK(s.frames[1] == s.frames[2]);
}

TEST_CASE("generator: sensor moving at (1, 0) with yaw 0") {
    auto c = empty_scene();
    c.sensor_speed = {1.0, 1.0};
    c.sensor_initial_yaw = {0.0, 0.0};
    c.sensor_yaw_rate = {0.0, 0.0};
    c.dropout = 0.1;
    const auto s = generate_sequence(c, 4);
    for (const auto& f : s.frames)
        for (std::size_t i = 0; i < f.truth.labels.labels.size(); ++i) {
            if (f.truth.labels.labels[i] == kDefected) continue;
            CHECK(f.truth.velocity.velocity[2 * i] == -1.0f);
            CHECK(f.truth.velocity.velocity[2 * i + 1] == 0.0f);
        }
}

TEST_CASE("generator invariants on random scenes") {
    SceneConfig c;
    c.frames = 6;
    for (std::uint64_t seed = 10; seed < 14; ++seed) {
        const auto s = generate_sequence(c, seed);
        CHECK(s == generate_sequence(c, seed));
        REQUIRE(s.frames.size() == 6);
        for (std::size_t k = 0; k < s.frames.size(); ++k) {
            const auto& f = s.frames[k];
            CHECK(f.range.sensor == c.sensor);
            const auto bg = to_sensor_frame({-s.sensor_velocity[k][0], -s.sensor_velocity[k][1]}, s.poses[k].yaw);
            for (std::size_t i = 0; i < f.range.ranges.size(); ++i) {
                const auto l = f.truth.labels.labels[i];
                CHECK((l == kDefected) == f.range.defected(i));
                if (l == kDefected) continue;
                CHECK(f.range.ranges[i] > 0.0f);
                CHECK(f.range.ranges[i] <= c.sensor.max_range);
                const float vx = f.truth.velocity.velocity[2 * i], vy = f.truth.velocity.velocity[2 * i + 1];
                if (l == kBackground) {
                    CHECK(vx == static_cast<float>(bg[0]));
                    CHECK(vy == static_cast<float>(bg[1]));
                } else {
                    bool found = false;
                    for (const auto& a : s.actors[k]) {
                        const auto rel = to_sensor_frame({a.vx - s.sensor_velocity[k][0], a.vy - s.sensor_velocity[k][1]},
                                                         s.poses[k].yaw);
                        found = found || (vx == static_cast<float>(rel[0]) && vy == static_cast<float>(rel[1]));
                    }
                    CHECK(found);
                }
            }
            for (const auto& a : s.actors[k]) {
                const double speed = std::hypot(a.vx, a.vy);
                CHECK(speed >= c.human_speed.min - 1e-12);
                CHECK(speed <= c.human_speed.max + 1e-12);
                CHECK(std::abs(a.body.x) <= c.room_half_x - a.body.radius + 1e-9);
                CHECK(std::abs(a.body.y) <= c.room_half_y - a.body.radius + 1e-9);
            }
        }
    }
    CHECK_FALSE(generate_sequence(c, 1) == generate_sequence(c, 2));
}

TEST_CASE("apply_dropout") {
    auto c = empty_scene();
    c.frames = 1;
    const auto base = generate_sequence(c, 5).frames[0];
    std::mt19937_64 rng(6);
    auto same = base;
    apply_dropout(same, 0.0, rng);
    CHECK(same == base);
    CHECK_THROWS_AS(apply_dropout(same, 1.0, rng), ConfigError);

    // p = 0.5 on all-valid 32x128 frames
    Frame full;
    projection::SensorModel s;
    full.range = projection::RangeImage(s);
    std::fill(full.range.ranges.begin(), full.range.ranges.end(), 5.0f);
    full.truth.labels = {s, std::vector<std::uint8_t>(s.pixels(), kBackground)};
    full.truth.velocity = {s, std::vector<float>(2 * s.pixels(), 0.0f)};
    std::size_t dropped = 0;
    for (int k = 0; k < 100; ++k) {
        auto f = full;
        apply_dropout(f, 0.5, rng);
        dropped += s.pixels() - f.range.valid_count();
        for (std::size_t i = 0; i < s.pixels(); ++i) CHECK((f.truth.labels.labels[i] == kDefected) == f.range.defected(i));
    }
    const double frac = static_cast<double>(dropped) / (100.0 * static_cast<double>(s.pixels()));
    CHECK(frac >= 0.45);
    CHECK(frac <= 0.55);

    // never revives a defected pixel
    auto once = base;
    apply_dropout(once, 0.3, rng);
    auto twice = once;
    apply_dropout(twice, 0.3, rng);
    for (std::size_t i = 0; i < once.range.ranges.size(); ++i)
        if (once.range.defected(i)) CHECK(twice.range.defected(i));
}

TEST_CASE("scene config validation") {
    SceneConfig c;
    CHECK_NOTHROW(c.validate());
    c.frames = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.human_speed = {2.0, 1.0};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.human_count = {-1, 2};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("dataset files round trip") {
    SceneConfig c;
    c.frames = 3;
    c.sensor.cols = 32;
    c.sensor.rows = 8;
    const auto root = std::filesystem::temp_directory_path() / "lidarseg_dataset_test";
    std::filesystem::remove_all(root);
    const auto m = generate_dataset(c, {3, 1, 2}, 77, root);
    CHECK(m.train.size() == 3);
    CHECK(m.val.size() == 1);
    CHECK(m.test.size() == 2);
    const auto again = read_manifest(root);
    CHECK(again.config == c);
    CHECK(again.test == m.test);
    const auto test = load_split(root, "test");
    REQUIRE(test.size() == 2);
    const auto mem = generate_samples(c, 6, 77);
    CHECK(test[0] == mem[4]);
    CHECK(test[1] == mem[5]);
    CHECK_THROWS_AS(load_split(root, "bogus"), UsageError);

    const auto split = default_split(100);
    CHECK(split.total() == 100);
    CHECK(split.train > split.test);
    CHECK(split.test >= split.val);
}
