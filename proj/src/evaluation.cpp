#include "lidarseg/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "lidarseg/error.hpp"

namespace lidarseg::evaluation {
using projection::kBackground;
using projection::kDefected;
using projection::kHuman;

std::optional<double> iou_from_counts(const ConfusionCounts& c) {
    const auto denom = c.tp + c.fp + c.fn;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

void RangeBucket::validate() const {
    if (!(lower >= 0.0) || !(lower < upper)) throw ConfigError("range bucket needs 0 <= lower < upper");
}

std::string RangeBucket::label() const {
    auto fmt = [](double v) {
        if (std::isinf(v)) return std::string("inf");
        std::ostringstream os;
        os << v;
        return os.str();
    };
    return fmt(lower) + "-" + fmt(upper);
}

std::vector<RangeBucket> default_buckets() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {{0.0, inf}, {0.0, 4.0}, {4.0, 8.0}, {8.0, inf}};
}

std::vector<RangeBucket> parse_buckets(const std::string& spec) {
    std::vector<RangeBucket> out;
    std::istringstream in(spec);
    std::string item;
    auto number = [&spec](const std::string& s) {
        if (s == "inf" || s == "Inf" || s == "INF") return std::numeric_limits<double>::infinity();
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw UsageError("cannot parse bucket list '" + spec + "'");
        }
    };
    while (std::getline(in, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw UsageError("bucket '" + item + "' is not of the form lower:upper");
        RangeBucket b{number(item.substr(0, colon)), number(item.substr(colon + 1))};
        b.validate();
        out.push_back(b);
    }
    if (out.empty()) throw UsageError("empty bucket list");
    return out;
}

std::vector<std::uint8_t> argmax_labels(const Tensor<float>& probs, const projection::RangeImage& ranges) {
    if (probs.rank() != 3 || probs.dim(2) != 2 || probs.dim(0) * probs.dim(1) != ranges.ranges.size())
        throw UsageError("argmax_labels: probability map " + tensorcore::shape_string(probs.shape()) +
                         " does not match the range image");
    std::vector<std::uint8_t> out(ranges.ranges.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = ranges.defected(i) ? kDefected : (probs[2 * i + 1] > probs[2 * i] ? kHuman : kBackground);
    return out;
}

IouResult iou(std::span<const std::uint8_t> predicted, const projection::LabelMap& truth, const RangeBucket& bucket,
              const projection::RangeImage& ranges) {
    const std::size_t n = truth.labels.size();
    if (predicted.size() != n || ranges.ranges.size() != n)
        throw UsageError("iou: prediction, truth and range image sizes differ (" + std::to_string(predicted.size()) +
                         ", " + std::to_string(n) + ", " + std::to_string(ranges.ranges.size()) + ")");
    IouResult r;
    for (std::size_t i = 0; i < n; ++i) {
        const auto t = truth.labels[i];
        if (t == kDefected || ranges.defected(i) || !bucket.contains(ranges.ranges[i])) continue;
        const bool pred_human = predicted[i] == kHuman;
        const bool true_human = t == kHuman;
        if (pred_human && true_human)
            ++r.counts.tp;
        else if (pred_human)
            ++r.counts.fp;
        else if (true_human)
            ++r.counts.fn;
        else
            ++r.counts.tn;
    }
    r.iou = iou_from_counts(r.counts);
    return r;
}

IouResult iou(const Tensor<float>& probs, const projection::LabelMap& truth, const RangeBucket& bucket,
              const projection::RangeImage& ranges) {
    const auto labels = argmax_labels(probs, ranges);
    return iou(labels, truth, bucket, ranges);
}

namespace {

struct VelocityAccumulator {
    double human = 0.0, background = 0.0, zero_human = 0.0, zero_background = 0.0;
    std::uint64_t n_human = 0, n_background = 0;
    bool has_prediction = false;

    void add(const datagen::Frame& f, const Tensor<float>* velocity) {
        const auto& lab = f.truth.labels.labels;
        const auto& v = f.truth.velocity.velocity;
        for (std::size_t i = 0; i < lab.size(); ++i) {
            if (lab[i] == kDefected) continue;
            const double zero = std::hypot(v[2 * i], v[2 * i + 1]);
            double err = 0.0;
            if (velocity) err = std::hypot((*velocity)[2 * i] - v[2 * i], (*velocity)[2 * i + 1] - v[2 * i + 1]);
            if (lab[i] == kHuman) {
                ++n_human;
                human += err;
                zero_human += zero;
            } else {
                ++n_background;
                background += err;
                zero_background += zero;
            }
        }
    }

    void write(EvalReport& r) const {
        auto mean = [](double s, std::uint64_t n) -> std::optional<double> {
            if (n == 0) return std::nullopt;
            return s / static_cast<double>(n);
        };
        r.human_pixels = n_human;
        r.background_pixels = n_background;
        r.zero_velocity_error_human = mean(zero_human, n_human);
        r.zero_velocity_error_background = mean(zero_background, n_background);
        if (has_prediction) {
            r.velocity_error_human = mean(human, n_human);
            r.velocity_error_background = mean(background, n_background);
        }
    }
};

int resolve_first_target(int requested, int frames) { return requested < 0 ? frames - 1 : std::max(requested, frames - 1); }

void add_counts(EvalReport& report, std::span<const std::uint8_t> labels, const datagen::Frame& f) {
    report.overall += iou(labels, f.truth.labels, RangeBucket{}, f.range).counts;
    for (auto& b : report.buckets) b.counts += iou(labels, f.truth.labels, b.bucket, f.range).counts;
}

void finish(EvalReport& report) {
    report.overall_iou = iou_from_counts(report.overall);
    for (auto& b : report.buckets) b.iou = iou_from_counts(b.counts);
}

}  // namespace

EvalReport evaluate(const ModelParams& params, const NetworkConfig& config,
                    const std::vector<datagen::SequenceSample>& split, const std::vector<RangeBucket>& buckets,
                    const EvalOptions& options) {
    network::check_compatible(params, config);
    if (options.window_stride < 1) throw UsageError("evaluate: window stride must be positive");
    EvalReport report;
    for (const auto& b : buckets) {
        b.validate();
        report.buckets.push_back({b, {}, std::nullopt});
    }
    VelocityAccumulator vel;
    vel.has_prediction = config.has_velocity_head();
    const int n = config.frames;
    const int first = resolve_first_target(options.first_target_frame, n);
    double elapsed_ms = 0.0;

    for (const auto& seq : split) {
        if (seq.sensor.rows != config.height || seq.sensor.cols != config.width)
            throw UsageError("evaluate: sequence resolution does not match the network config");
        std::vector<Tensor<float>> inputs;
        for (const auto& f : seq.frames) inputs.push_back(network::normalize(f.range));
        for (int t = first; t < static_cast<int>(seq.frames.size()); t += options.window_stride) {
            const std::span<const Tensor<float>> window(inputs.data() + (t - n + 1), static_cast<std::size_t>(n));
            const auto start = std::chrono::steady_clock::now();
            const auto pred = network::predict(params, config, window);
            elapsed_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            const auto& frame = seq.frames[static_cast<std::size_t>(t)];
            add_counts(report, argmax_labels(pred.labels, frame.range), frame);
            vel.add(frame, pred.velocity ? &*pred.velocity : nullptr);
            ++report.windows;
        }
    }
    finish(report);
    vel.write(report);
    if (report.windows) report.ms_per_window = elapsed_ms / static_cast<double>(report.windows);
    return report;
}

EvalReport evaluate_constant(const std::vector<datagen::SequenceSample>& split, const std::vector<RangeBucket>& buckets,
                             std::uint8_t label, int first_target_frame) {
    EvalReport report;
    for (const auto& b : buckets) report.buckets.push_back({b, {}, std::nullopt});
    VelocityAccumulator vel;
    for (const auto& seq : split) {
        for (int t = std::max(first_target_frame, 0); t < static_cast<int>(seq.frames.size()); ++t) {
            const auto& f = seq.frames[static_cast<std::size_t>(t)];
            std::vector<std::uint8_t> labels(f.range.ranges.size(), label);
            for (std::size_t i = 0; i < labels.size(); ++i)
                if (f.range.defected(i)) labels[i] = kDefected;
            add_counts(report, labels, f);
            vel.add(f, nullptr);
            ++report.windows;
        }
    }
    finish(report);
    vel.write(report);
    return report;
}

std::string format_optional(const std::optional<double>& v, int precision) {
    if (!v) return "n/a";
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << *v;
    return os.str();
}

std::string report_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "bucket,iou,tp,fp,fn,tn\n";
    auto row = [&os](const std::string& name, const std::optional<double>& iou, const ConfusionCounts& c) {
        os << name << ',' << format_optional(iou) << ',' << c.tp << ',' << c.fp << ',' << c.fn << ',' << c.tn << '\n';
    };
    row("overall", r.overall_iou, r.overall);
    for (const auto& b : r.buckets) row(b.bucket.label(), b.iou, b.counts);
    os << "metric,value\n";
    os << "velocity_error_human," << format_optional(r.velocity_error_human) << '\n';
    os << "velocity_error_background," << format_optional(r.velocity_error_background) << '\n';
    os << "zero_velocity_error_human," << format_optional(r.zero_velocity_error_human) << '\n';
    os << "zero_velocity_error_background," << format_optional(r.zero_velocity_error_background) << '\n';
    os << "windows," << r.windows << '\n';
    os << "ms_per_window," << std::fixed << std::setprecision(3) << r.ms_per_window << '\n';
    return os.str();
}

RuntimeStats measure_runtime(const ModelParams& params, const NetworkConfig& config, int repetitions) {
    if (repetitions < 10) throw UsageError("measure_runtime: at least 10 repetitions are required");
    network::check_compatible(params, config);
    std::mt19937_64 rng(7);
    std::vector<Tensor<float>> window;
    for (int f = 0; f < config.frames; ++f) {
        Tensor<float> t({static_cast<std::size_t>(config.height), static_cast<std::size_t>(config.width), 1});
        for (auto& v : t.data()) v = static_cast<float>(datagen::unit_uniform(rng) * 0.2);
        window.push_back(std::move(t));
    }
    RuntimeStats stats;
    stats.warmup = 3;
    for (int i = 0; i < stats.warmup; ++i) network::predict(params, config, window);
    for (int i = 0; i < repetitions; ++i) {
        const auto start = std::chrono::steady_clock::now();
        const auto pred = network::predict(params, config, window);
        stats.samples_ms.push_back(
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    }
    auto sorted = stats.samples_ms;
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&sorted](double q) {
        const double pos = q * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
    };
    stats.median_ms = quantile(0.5);
    stats.p90_ms = quantile(0.9);
    return stats;
}

}  // namespace lidarseg::evaluation
