#include <array>
#include <fstream>
#include <iomanip>

#include "lidarseg/error.hpp"
#include "lidarseg/evaluation.hpp"
#include "lidarseg/frame_io.hpp"

namespace lidarseg::evaluation {
using projection::kDefected;
using projection::kHuman;

namespace {

// TP green, TN grey, FP red, FN blue, defected black.
std::array<std::uint8_t, 3> category_color(std::uint8_t code) {
    switch (code) {
        case kTruePositive: return {40, 200, 60};
        case kTrueNegative: return {90, 90, 90};
        case kFalsePositive: return {220, 40, 40};
        case kFalseNegative: return {40, 80, 230};
        default: return {0, 0, 0};
    }
}

}  // namespace

ExportSummary export_prediction(const ModelParams& params, const NetworkConfig& config,
                                std::span<const datagen::Frame> window, const std::filesystem::path& out_dir) {
    if (window.size() != static_cast<std::size_t>(config.frames))
        throw UsageError("export_prediction: window holds " + std::to_string(window.size()) + " frames, model expects " +
                         std::to_string(config.frames));
    std::vector<Tensor<float>> inputs;
    for (const auto& f : window) inputs.push_back(network::normalize(f.range));
    const auto pred = network::predict(params, config, inputs);
    const auto& target = window.back();
    const auto& sensor = target.range.sensor;

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    ExportSummary s;
    const auto labels = argmax_labels(pred.labels, target.range);
    s.labels_file = out_dir / "pred.rlbl";
    projection::write_label_map(s.labels_file, {sensor, labels});

    if (pred.velocity) {
        s.velocity_file = out_dir / "pred.rvel";
        const auto v = pred.velocity->data();
        projection::write_velocity_map(s.velocity_file, {sensor, std::vector<float>(v.begin(), v.end())});
    }

    s.points_file = out_dir / "points.txt";
    {
        std::ofstream out(s.points_file);
        if (!out) throw IoError("cannot write " + s.points_file.string());
        out << std::setprecision(7);
        const auto points = projection::backproject(target.range);
        const auto pixels = projection::valid_pixels(target.range);
        for (std::size_t i = 0; i < points.size(); ++i)
            out << points[i][0] << ' ' << points[i][1] << ' ' << points[i][2] << ' ' << int(labels[pixels[i]]) << '\n';
        s.points = points.size();
        if (!out) throw IoError("write failed: " + s.points_file.string());
    }

    std::vector<std::uint8_t> codes(labels.size(), kDefected);
    const auto& truth = target.truth.labels.labels;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (labels[i] == kDefected || truth[i] == kDefected) continue;
        const bool p = labels[i] == kHuman, t = truth[i] == kHuman;
        if (p && t) {
            codes[i] = kTruePositive;
            ++s.counts.tp;
        } else if (p) {
            codes[i] = kFalsePositive;
            ++s.counts.fp;
        } else if (t) {
            codes[i] = kFalseNegative;
            ++s.counts.fn;
        } else {
            codes[i] = kTrueNegative;
            ++s.counts.tn;
        }
    }
    s.errors_file = out_dir / "errors.rlbl";
    projection::write_label_map(s.errors_file, {sensor, codes});

    s.errors_image = out_dir / "errors.ppm";
    std::ofstream ppm(s.errors_image, std::ios::binary);
    if (!ppm) throw IoError("cannot write " + s.errors_image.string());
    ppm << "P6\n" << sensor.cols << ' ' << sensor.rows << "\n255\n";
    for (auto c : codes) {
        const auto rgb = category_color(c);
        ppm.write(reinterpret_cast<const char*>(rgb.data()), 3);
    }
    if (!ppm) throw IoError("write failed: " + s.errors_image.string());
    return s;
}

}  // namespace lidarseg::evaluation
