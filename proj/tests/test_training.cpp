#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "lidarseg/checkpoint.hpp"
#include "lidarseg/dataset.hpp"
#include "lidarseg/error.hpp"
#include "lidarseg/ops.hpp"
#include "lidarseg/training.hpp"
#include "oracles.hpp"

using namespace lidarseg;
using namespace lidarseg::training;
namespace fs = std::filesystem;

namespace {

const Tensor<double>* const kNoVel = nullptr;

Tensor<double> as_tensor(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    return Tensor<double>({rows, cols, 2}, v);
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("lidarseg_training_" + name);
    fs::remove_all(p);
    return p;
}

datagen::SceneConfig tiny_scene() {
    datagen::SceneConfig s;
    s.sensor.rows = 8;
    s.sensor.cols = 32;
    s.frames = 4;
    s.room_half_x = 6.0;
    s.room_half_y = 5.0;
    return s;
}

NetworkConfig tiny_net(int frames = 2) {
    NetworkConfig n;
    n.frames = frames;
    n.height = 8;
    n.width = 32;
    n.base_channels = 8;
    return n;
}

TrainConfig quick(int epochs = 2, int steps = 3) {
    TrainConfig c;
    c.learning_rate = 1e-3f;
    c.epochs = epochs;
    c.steps_per_epoch = steps;
    c.seed = 11;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("loss matches the scalar-loop oracle") {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 100; ++k) {
        const double human_p = k % 5 == 0 ? 0.0 : 0.3;  // some frames have no humans
        const auto f = oracle::random_frame(rng, 4, 8, human_p, k % 2 ? 0.2 : 0.0);
        const LossWeights w{std::uniform_real_distribution<double>(0.1, 10)(rng), 1.0, 1001.0};
        const auto labels = as_tensor(f.probs, 4, 8), vel = as_tensor(f.vel, 4, 8);
        const double expect = oracle::loss(f.probs, &f.vel, f.frame.truth, w);
        const auto b = total_loss(labels, &vel, f.frame.truth, w);
        CHECK(b.total == doctest::Approx(expect).epsilon(1e-6));

        tensorcore::Tape<double> tape;
        LossBreakdown tb;
        const auto v = total_loss(tape, tape.leaf(labels), tape.leaf(vel), f.frame.truth, w, &tb);
        CHECK(tape.value(v)[0] == doctest::Approx(expect).epsilon(1e-6));
        CHECK(tb.total == doctest::Approx(b.total).epsilon(1e-12));
        if (human_p == 0.0) CHECK(b.human_pixels == 0);
    }
}

TEST_CASE("loss: trivial anchors") {
    std::mt19937_64 rng(2);
    auto f = oracle::random_frame(rng, 4, 8, 0.3, 0.1);
    const auto& lab = f.frame.truth.labels.labels;
    std::vector<double> exact_vel(f.frame.truth.velocity.velocity.begin(), f.frame.truth.velocity.velocity.end());
    std::vector<double> onehot(lab.size() * 2, 0.0), uniform(lab.size() * 2, 0.5);
    for (std::size_t i = 0; i < lab.size(); ++i) onehot[2 * i + (lab[i] == 1 ? 1 : 0)] = 1.0;
    const auto vel = as_tensor(exact_vel, 4, 8);

    const auto perfect = total_loss(as_tensor(onehot, 4, 8), &vel, f.frame.truth, LossWeights{});
    CHECK(perfect.total == 0.0);

    const auto half = total_loss(as_tensor(uniform, 4, 8), &vel, f.frame.truth, LossWeights{1.0, 1.0, 1001.0});
    CHECK(half.total == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("loss: zero velocity weights leave the masked cross-entropy") {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 20; ++k) {
        const auto f = oracle::random_frame(rng, 4, 8, 0.3, 0.2);
        const auto labels = as_tensor(f.probs, 4, 8), vel = as_tensor(f.vel, 4, 8);
        const LossWeights w{2.5, 0.0, 0.0};
        CHECK(total_loss(labels, &vel, f.frame.truth, w).total ==
              doctest::Approx(oracle::loss(f.probs, nullptr, f.frame.truth, w)).epsilon(1e-12));
        CHECK(total_loss(labels, kNoVel, f.frame.truth, LossWeights{2.5, 1.0, 1001.0}).total ==
              doctest::Approx(oracle::loss(f.probs, nullptr, f.frame.truth, w)).epsilon(1e-12));
    }
}

TEST_CASE("loss: predictions at defected pixels never matter") {
    std::mt19937_64 rng(4);
    auto f = oracle::random_frame(rng, 4, 8, 0.3, 0.3);
    const double before = total_loss(as_tensor(f.probs, 4, 8), kNoVel, f.frame.truth, LossWeights{}).total;
    auto vel = f.vel;
    const auto vbefore = as_tensor(vel, 4, 8);
    const double before_v = total_loss(as_tensor(f.probs, 4, 8), &vbefore, f.frame.truth, LossWeights{}).total;
    for (std::size_t i = 0; i < f.frame.truth.labels.labels.size(); ++i) {
        if (f.frame.truth.labels.labels[i] != projection::kDefected) continue;
        f.probs[2 * i] = 0.9;
        f.probs[2 * i + 1] = 0.1;
        vel[2 * i] = 100.0;
        vel[2 * i + 1] = -100.0;
    }
    const auto vafter = as_tensor(vel, 4, 8);
    CHECK(total_loss(as_tensor(f.probs, 4, 8), kNoVel, f.frame.truth, LossWeights{}).total == before);
    CHECK(total_loss(as_tensor(f.probs, 4, 8), &vafter, f.frame.truth, LossWeights{}).total == before_v);
}

TEST_CASE("loss: errors") {
    std::mt19937_64 rng(5);
    auto f = oracle::random_frame(rng, 4, 8, 0.3, 0.0);
    auto probs = f.probs;
    probs[6] = std::numeric_limits<double>::quiet_NaN();
    try {
        total_loss(as_tensor(probs, 4, 8), kNoVel, f.frame.truth, LossWeights{});
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("pred_labels") != std::string::npos);
    }
    auto vel = f.vel;
    vel[3] = std::numeric_limits<double>::quiet_NaN();
    const auto vt = as_tensor(vel, 4, 8);
    try {
        total_loss(as_tensor(f.probs, 4, 8), &vt, f.frame.truth, LossWeights{});
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("pred_vel") != std::string::npos);
    }
    CHECK_THROWS_AS(total_loss(Tensor<double>({4, 4, 2}), kNoVel, f.frame.truth, LossWeights{}), ConfigError);
    CHECK_THROWS_AS(LossWeights({-1.0, 1.0, 1.0}).validate(), ConfigError);
}

TEST_CASE("loss weights swap") {
    const LossWeights w;
    CHECK(w.lambda_c == 1e5);
    CHECK(w.lambda_h == 1.0);
    CHECK(w.lambda_b == 1001.0);
    CHECK(w.swapped() == LossWeights{1e5, 1001.0, 1.0});
    TrainConfig c;
    c.swap_velocity_weights = true;
    CHECK(c.effective_weights() == w.swapped());
}

TEST_CASE("train config validation and schedule") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.learning_rate_at(0) == doctest::Approx(3e-5));
    CHECK(c.learning_rate_at(1000) == doctest::Approx(3e-5 / (1.0 + 3e-5 * 1000)));
    c.learning_rate = 0.0f;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.steps_per_epoch = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.epochs = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config JSON round trip and unknown keys") {
    TrainConfig c = quick();
    c.swap_velocity_weights = true;
    c.weights.lambda_b = 7.0;
    nlohmann::json j = c;
    CHECK(j.get<TrainConfig>() == c);
    NetworkConfig n = tiny_net(3);
    n.label_feedback_enabled = false;
    nlohmann::json jn = n;
    CHECK(jn.get<NetworkConfig>() == n);
    jn["bogus"] = 1;
    CHECK_THROWS_AS(jn.get<NetworkConfig>(), ConfigError);
    j["learning_rat"] = 1;
    CHECK_THROWS_AS(j.get<TrainConfig>(), ConfigError);
}

TEST_CASE("metrics line format") {
    CHECK(metrics_header() == "epoch,step,lr,loss_total,loss_ce,loss_vh,loss_vb,train_iou,val_iou");
    MetricsRow r{3, 750, 1e-3, 1.5, 0.5, 0.25, 0.125, 0.5, std::nullopt};
    const auto line = metrics_line(r);
    CHECK(line.rfind("3,750,", 0) == 0);
    CHECK(std::count(line.begin(), line.end(), ',') == 8);
}

TEST_CASE("zero epochs return the initialization") {
    const auto data = datagen::generate_samples(tiny_scene(), 2, 5);
    const auto net = tiny_net();
    const auto cfg = quick(0);
    const auto dir = scratch("zero");
    TrainOptions opt;
    opt.out_dir = dir;
    const auto r = train(data, net, cfg, opt);
    CHECK(r.params == initial_params(net, cfg, data));
    CHECK(tensorcore::load_params(dir / "ckpt_last.lsqw") == initial_params(net, cfg, data));
    CHECK(r.adam.step == 0);
    fs::remove_all(dir);
}

TEST_CASE("the head bias starts at the class prior") {
    const auto data = datagen::generate_samples(tiny_scene(), 3, 12);
    const auto net = tiny_net(2);
    auto cfg = quick();
    std::uint64_t human = 0, valid = 0;
    for (const auto& s : data)
        for (std::size_t t = 1; t < s.frames.size(); ++t)
            for (auto l : s.frames[t].truth.labels.labels)
                if (l != projection::kDefected) {
                    ++valid;
                    human += l == projection::kHuman;
                }
    REQUIRE(human > 0);
    const double p = static_cast<double>(human) / static_cast<double>(valid);
    CHECK(human_fraction(data, 2).value() == doctest::Approx(p).epsilon(1e-15));
    const auto init = initial_params(net, cfg, data);
    CHECK(init.at("seg.head.bias")[0] == 0.0f);
    CHECK(init.at("seg.head.bias")[1] == static_cast<float>(std::log(p / (1.0 - p))));
    // with equal logits otherwise, the bias alone sets the predicted prior
    const double q = 1.0 / (1.0 + std::exp(-static_cast<double>(init.at("seg.head.bias")[1])));
    CHECK(q == doctest::Approx(p).epsilon(1e-6));
    auto rest = init;
    rest.at("seg.head.bias") = initial_params(net, cfg).at("seg.head.bias");
    CHECK(rest == initial_params(net, cfg));

    cfg.prior_head_bias = false;
    CHECK(initial_params(net, cfg, data) == initial_params(net, cfg));
    auto empty = tiny_scene();
    empty.human_count = {0, 0};
    CHECK_FALSE(human_fraction(datagen::generate_samples(empty, 1, 13), 2).has_value());
}

TEST_CASE("training is deterministic and writes its artifacts") {
    const auto data = datagen::generate_samples(tiny_scene(), 3, 6);
    const auto val = datagen::generate_samples(tiny_scene(), 1, 60);
    const auto net = tiny_net();
    auto cfg = quick(2, 3);
    cfg.checkpoint_every = 1;
    const auto a = scratch("det_a"), b = scratch("det_b");
    TrainOptions oa;
    oa.out_dir = a;
    oa.validation = &val;
    TrainOptions ob = oa;
    ob.out_dir = b;
    const auto ra = train(data, net, cfg, oa);
    const auto rb = train(data, net, cfg, ob);
    CHECK(ra.params == rb.params);
    CHECK(ra.adam.step == 6);
    CHECK(ra.metrics.size() == 2);
    CHECK(ra.metrics[1].val_iou.has_value());
    for (const char* f : {"ckpt_last.lsqw", "ckpt_last.lsqw.adam", "ckpt_best.lsqw", "best.json",
                          "ckpt_epoch_0001.lsqw", "ckpt_epoch_0002.lsqw", "metrics.csv"}) {
        REQUIRE(fs::exists(a / f));
        CHECK(slurp(a / f) == slurp(b / f));
    }
    CHECK_FALSE(ra.params == initial_params(net, cfg, data));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("resume from a mid-run checkpoint matches the uninterrupted run bitwise") {
    const auto data = datagen::generate_samples(tiny_scene(), 3, 7);
    const auto net = tiny_net();
    auto cfg = quick(2, 4);
    cfg.batch_size = 2;
    const auto full = train(data, net, cfg);

    const auto dir = scratch("resume");
    TrainOptions first;
    first.out_dir = dir;
    first.stop_after_step = 3;
    const auto part = train(data, net, cfg, first);
    CHECK(part.adam.step == 3);
    TrainOptions second;
    second.out_dir = dir;
    second.resume_from = dir / "ckpt_last.lsqw";
    const auto resumed = train(data, net, cfg, second);
    CHECK(resumed.params == full.params);
    CHECK(resumed.adam.step == full.adam.step);
    CHECK(resumed.adam.first_moment == full.adam.first_moment);
    CHECK(resumed.adam.second_moment == full.adam.second_moment);

    auto other = cfg;
    other.learning_rate = 5e-4f;
    CHECK_THROWS_AS(train(data, net, other, second), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("short samples are skipped and reported") {
    auto short_scene = tiny_scene();
    short_scene.frames = 2;
    auto data = datagen::generate_samples(tiny_scene(), 2, 8);
    data.push_back(datagen::generate_samples(short_scene, 1, 9)[0]);
    const auto dir = scratch("skip");
    TrainOptions opt;
    opt.out_dir = dir;
    const auto r = train(data, tiny_net(3), quick(1, 1), opt);
    CHECK(r.skipped_samples == 1);
    CHECK(slurp(dir / "metrics.csv").find("# warning: skipped 1 of 3") != std::string::npos);

    const std::vector<datagen::SequenceSample> only_short(1, data.back());
    CHECK_THROWS_AS(train(only_short, tiny_net(3), quick(1, 1)), TrainingError);
    fs::remove_all(dir);
}

TEST_CASE("a static background-only sample is fitted quickly") {
    auto scene = tiny_scene();
    scene.human_count = {0, 0};
    scene.sensor_speed = {0.0, 0.0};
    scene.sensor_yaw_rate = {0.0, 0.0};
    auto sample = datagen::generate_samples(scene, 1, 10);
    sample[0].frames.assign(2, sample[0].frames[0]);
    auto cfg = quick(1, 200);
    cfg.learning_rate = 1e-2f;
    const auto r = train(sample, tiny_net(), cfg);
    const auto& f = sample[0].frames[0];
    const std::vector<Tensor<float>> window{network::normalize(f.range), network::normalize(f.range)};
    const auto pred = network::predict(r.params, tiny_net(), window);
    const auto b = total_loss(pred.labels, static_cast<const Tensor<float>*>(nullptr), f.truth, LossWeights{1.0, 0, 0});
    CHECK(b.ce < 1e-2);
}
