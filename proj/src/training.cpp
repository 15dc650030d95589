#include "lidarseg/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "lidarseg/checkpoint.hpp"
#include "lidarseg/error.hpp"
#include "lidarseg/evaluation.hpp"

namespace lidarseg {
namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& known, const char* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
}

template <typename V>
void read_value(const json& j, const char* key, V& v) {
    if (!j.contains(key)) return;
    try {
        v = j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

}  // namespace

namespace network {

void to_json(json& j, const NetworkConfig& c) {
    j = json{{"frames", c.frames},
             {"height", c.height},
             {"width", c.width},
             {"base_channels", c.base_channels},
             {"classes", c.classes},
             {"velocity_dims", c.velocity_dims},
             {"velocity_head", c.velocity_head_enabled},
             {"temporal_propagation", c.temporal_propagation_enabled},
             {"label_feedback", c.label_feedback_enabled},
             {"relu_leak", c.relu_leak}};
}

void from_json(const json& j, NetworkConfig& c) {
    reject_unknown_keys(j,
                        {"frames", "height", "width", "base_channels", "classes", "velocity_dims", "velocity_head",
                         "temporal_propagation", "label_feedback", "relu_leak"},
                        "network config");
    read_value(j, "frames", c.frames);
    read_value(j, "height", c.height);
    read_value(j, "width", c.width);
    read_value(j, "base_channels", c.base_channels);
    read_value(j, "classes", c.classes);
    read_value(j, "velocity_dims", c.velocity_dims);
    read_value(j, "velocity_head", c.velocity_head_enabled);
    read_value(j, "temporal_propagation", c.temporal_propagation_enabled);
    read_value(j, "label_feedback", c.label_feedback_enabled);
    read_value(j, "relu_leak", c.relu_leak);
    c.validate();
}

}  // namespace network

namespace training {
namespace fs = std::filesystem;
using datagen::SequenceSample;
using tensorcore::AdamState;
using tensorcore::Tensor;
using tensorcore::TensorMap;

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0f) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
    if (!(decay >= 0.0) || !std::isfinite(decay)) throw ConfigError("decay must be non-negative");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (steps_per_epoch < 1) throw ConfigError("steps per epoch must be at least 1");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
    weights.validate();
}

void to_json(json& j, const LossWeights& w) {
    j = json{{"lambda_c", w.lambda_c}, {"lambda_h", w.lambda_h}, {"lambda_b", w.lambda_b}};
}

void from_json(const json& j, LossWeights& w) {
    reject_unknown_keys(j, {"lambda_c", "lambda_h", "lambda_b"}, "loss weights");
    read_value(j, "lambda_c", w.lambda_c);
    read_value(j, "lambda_h", w.lambda_h);
    read_value(j, "lambda_b", w.lambda_b);
    w.validate();
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"learning_rate", c.learning_rate},
             {"decay", c.decay},
             {"batch_size", c.batch_size},
             {"steps_per_epoch", c.steps_per_epoch},
             {"epochs", c.epochs},
             {"seed", c.seed},
             {"weights", c.weights},
             {"swap_velocity_weights", c.swap_velocity_weights},
             {"checkpoint_every", c.checkpoint_every},
             {"prior_head_bias", c.prior_head_bias}};
}

void from_json(const json& j, TrainConfig& c) {
    reject_unknown_keys(j,
                        {"learning_rate", "decay", "batch_size", "steps_per_epoch", "epochs", "seed", "weights",
                         "swap_velocity_weights", "checkpoint_every", "prior_head_bias"},
                        "train config");
    read_value(j, "learning_rate", c.learning_rate);
    read_value(j, "decay", c.decay);
    read_value(j, "batch_size", c.batch_size);
    read_value(j, "steps_per_epoch", c.steps_per_epoch);
    read_value(j, "epochs", c.epochs);
    read_value(j, "seed", c.seed);
    if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
    read_value(j, "swap_velocity_weights", c.swap_velocity_weights);
    read_value(j, "checkpoint_every", c.checkpoint_every);
    read_value(j, "prior_head_bias", c.prior_head_bias);
    c.validate();
}

std::string metrics_header() { return "epoch,step,lr,loss_total,loss_ce,loss_vh,loss_vb,train_iou,val_iou"; }

std::string metrics_line(const MetricsRow& r) {
    std::ostringstream os;
    os << r.epoch << ',' << r.step << ',' << std::setprecision(9) << r.learning_rate << ',' << r.loss_total << ','
       << r.loss_ce << ',' << r.loss_vh << ',' << r.loss_vb << ',' << evaluation::format_optional(r.train_iou, 6)
       << ',' << evaluation::format_optional(r.val_iou, 6);
    return os.str();
}

std::optional<double> human_fraction(const std::vector<SequenceSample>& data, int frames) {
    std::uint64_t human = 0, valid = 0;
    for (const auto& s : data) {
        if (s.frames.size() < static_cast<std::size_t>(frames)) continue;
        for (std::size_t t = static_cast<std::size_t>(frames) - 1; t < s.frames.size(); ++t)
            for (auto l : s.frames[t].truth.labels.labels) {
                if (l == projection::kDefected) continue;
                ++valid;
                human += l == projection::kHuman;
            }
    }
    if (human == 0 || human == valid) return std::nullopt;
    return static_cast<double>(human) / static_cast<double>(valid);
}

ModelParams initial_params(const NetworkConfig& net, const TrainConfig& cfg) { return network::build(net, cfg.seed); }

ModelParams initial_params(const NetworkConfig& net, const TrainConfig& cfg, const std::vector<SequenceSample>& data) {
    auto params = initial_params(net, cfg);
    if (!cfg.prior_head_bias) return params;
    if (const auto p = human_fraction(data, net.frames)) {
        auto& bias = params.at("seg.head.bias");
        bias[projection::kBackground] = 0.0f;
        bias[projection::kHuman] = static_cast<float>(std::log(*p / (1.0 - *p)));
    }
    return params;
}

namespace {

constexpr std::uint64_t kWindowStream = 0x77696E646F77;  // "window"

struct EpochAccumulator {
    double total = 0.0, ce = 0.0, vh = 0.0, vb = 0.0;
    std::uint64_t windows = 0;
    evaluation::ConfusionCounts counts;

    void add(const LossBreakdown& b) {
        total += b.total;
        ce += b.ce;
        vh += b.vel_human;
        vb += b.vel_background;
        ++windows;
    }
};

std::string epoch_name(int epoch) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "ckpt_epoch_%04d.lsqw", epoch);
    return buf;
}

void write_best_marker(const fs::path& path, int epoch, double iou) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << json{{"epoch", epoch}, {"val_iou", iou}}.dump() << '\n';
}

}  // namespace

TrainResult train(const std::vector<SequenceSample>& data, const NetworkConfig& net, const TrainConfig& cfg,
                  const TrainOptions& options) {
    net.validate();
    cfg.validate();
    const LossWeights weights = cfg.effective_weights();
    const auto n = static_cast<std::size_t>(net.frames);

    TrainResult result;
    std::vector<std::size_t> eligible;
    for (std::size_t s = 0; s < data.size(); ++s) {
        if (data[s].frames.size() < n) {
            ++result.skipped_samples;
            continue;
        }
        if (data[s].sensor.rows != net.height || data[s].sensor.cols != net.width)
            throw ConfigError("training sample " + std::to_string(s) + " is " + std::to_string(data[s].sensor.rows) +
                              "x" + std::to_string(data[s].sensor.cols) + ", network expects " +
                              std::to_string(net.height) + "x" + std::to_string(net.width));
        eligible.push_back(s);
    }
    if (eligible.empty()) throw TrainingError("training set has no sample with at least " + std::to_string(n) + " frames");

    if (options.resume_from) {
        result.params = tensorcore::load_params(*options.resume_from);
        network::check_compatible(result.params, net);
        result.adam = tensorcore::load_adam_state(*options.resume_from);
        if (result.adam.learning_rate != cfg.learning_rate)
            throw ConfigError("resume: checkpoint was trained with a different learning rate");
    } else {
        result.params = initial_params(net, cfg, data);
        result.adam = AdamState::for_params(result.params, cfg.learning_rate);
    }

    const bool to_disk = !options.out_dir.empty();
    std::ofstream metrics;
    if (to_disk) {
        std::error_code ec;
        fs::create_directories(options.out_dir, ec);
        if (ec) throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());
        const auto path = options.out_dir / "metrics.csv";
        const bool append = options.resume_from && fs::exists(path);
        metrics.open(path, append ? std::ios::app : std::ios::trunc);
        if (!metrics) throw IoError("cannot write " + path.string());
        if (!append) metrics << metrics_header() << '\n';
        if (result.skipped_samples)
            metrics << "# warning: skipped " << result.skipped_samples << " of " << data.size()
                    << " samples shorter than " << n << " frames\n";
        metrics.flush();
        const auto marker = options.out_dir / "best.json";
        if (options.resume_from && fs::exists(marker)) {
            std::ifstream in(marker);
            const auto j = json::parse(in);
            result.best_epoch = j.at("epoch").get<int>();
            result.best_val_iou = j.at("val_iou").get<double>();
        }
    }

    // Inputs are normalized once; windows are views into this cache.
    std::vector<std::vector<Tensor<float>>> inputs(data.size());
    for (auto s : eligible)
        for (const auto& f : data[s].frames) inputs[s].push_back(network::normalize(f.range));

    const auto spe = static_cast<std::uint64_t>(cfg.steps_per_epoch);
    const std::uint64_t total_steps = static_cast<std::uint64_t>(cfg.epochs) * spe;
    const std::uint64_t last_step = options.stop_after_step ? std::min(*options.stop_after_step, total_steps) : total_steps;

    auto save_last = [&] {
        if (to_disk) tensorcore::save_checkpoint(result.params, result.adam, options.out_dir / "ckpt_last.lsqw");
    };

    EpochAccumulator acc;
    while (result.adam.step < last_step) {
        const std::uint64_t step = result.adam.step;
        std::mt19937_64 rng(datagen::mix_seed(datagen::mix_seed(cfg.seed, kWindowStream), step));
        TensorMap<float> grads;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto s = eligible[static_cast<std::size_t>(datagen::unit_uniform(rng) * eligible.size())];
            const auto starts = data[s].frames.size() - n + 1;
            const auto start = static_cast<std::size_t>(datagen::unit_uniform(rng) * static_cast<double>(starts));
            const std::span<const Tensor<float>> window(inputs[s].data() + start, n);
            const auto& target = data[s].frames[start + n - 1];

            tensorcore::Tape<float> tape;
            const auto fwd = network::forward<float>(tape, result.params, net, window, true);
            LossBreakdown breakdown;
            const Var loss = total_loss(tape, fwd.labels, fwd.velocity, target.truth, weights, &breakdown);
            if (!std::isfinite(breakdown.total))
                throw TrainingError("non-finite loss at step " + std::to_string(step));
            tape.backward(loss);
            auto g = network::collect_gradients(tape, fwd, result.params);
            if (grads.empty()) {
                grads = std::move(g);
            } else {
                for (auto& [name, t] : grads) {
                    auto dst = t.data();
                    const auto src = g.at(name).data();
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
                }
            }
            acc.add(breakdown);
            const auto labels = evaluation::argmax_labels(tape.value(fwd.labels), target.range);
            acc.counts += evaluation::iou(labels, target.truth.labels, evaluation::RangeBucket{}, target.range).counts;
        }
        if (cfg.batch_size > 1) {
            const float inv = 1.0f / static_cast<float>(cfg.batch_size);
            for (auto& [name, t] : grads)
                for (auto& v : t.data()) v *= inv;
        }
        const double scale = cfg.learning_rate_at(step) / static_cast<double>(cfg.learning_rate);
        tensorcore::adam_step(result.params, grads, result.adam, scale);

        if (result.adam.step % spe != 0) continue;
        const int epoch = static_cast<int>(result.adam.step / spe);
        const double w = acc.windows ? static_cast<double>(acc.windows) : 1.0;
        MetricsRow row{epoch,        result.adam.step, cfg.learning_rate_at(result.adam.step),
                       acc.total / w, acc.ce / w,      acc.vh / w,
                       acc.vb / w,   evaluation::iou_from_counts(acc.counts), std::nullopt};
        acc = {};
        if (options.validation && !options.validation->empty()) {
            const auto report = evaluation::evaluate(result.params, net, *options.validation, {});
            row.val_iou = report.overall_iou;
            const double v = report.overall_iou.value_or(0.0);
            if (!result.best_val_iou || v > *result.best_val_iou) {
                result.best_val_iou = v;
                result.best_epoch = epoch;
                if (to_disk) {
                    tensorcore::save_checkpoint(result.params, result.adam, options.out_dir / "ckpt_best.lsqw");
                    write_best_marker(options.out_dir / "best.json", epoch, v);
                }
            }
        }
        if (to_disk) {
            metrics << metrics_line(row) << '\n';
            metrics.flush();
            save_last();
            if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
                tensorcore::save_checkpoint(result.params, result.adam, options.out_dir / epoch_name(epoch));
        }
        if (options.on_epoch) options.on_epoch(row);
        result.metrics.push_back(row);
    }
    save_last();
    return result;
}

}  // namespace training
}  // namespace lidarseg
