#include "lidarseg/network.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "lidarseg/datagen.hpp"
#include "lidarseg/error.hpp"
#include "lidarseg/ops.hpp"

namespace lidarseg::network {
namespace tc = tensorcore;

void NetworkConfig::validate() const {
    if (frames < 1) throw ConfigError("network: frames must be at least 1");
    if (height < 1) throw ConfigError("network: height must be positive");
    if (width < 16 || width % 16 != 0)
        throw ConfigError("network: width must be a positive multiple of 16, got " + std::to_string(width));
    if (base_channels < 8 || base_channels % 8 != 0)
        throw ConfigError("network: base channel count must be a positive multiple of 8, got " +
                          std::to_string(base_channels));
    if (classes != 2) throw ConfigError("network: only the two-class (background/human) head is supported");
    if (velocity_dims != 2) throw ConfigError("network: velocity maps are planar (2 components)");
    if (!(relu_leak >= 0.0 && relu_leak < 1.0)) throw ConfigError("network: relu_leak must lie in [0, 1)");
}

std::vector<LayerSpec> layer_table(const NetworkConfig& cfg) {
    cfg.validate();
    const int c8 = cfg.base_channels / 8, c4 = cfg.base_channels / 4, c = cfg.base_channels;
    const int t = cfg.propagates() ? cfg.temporal_channels() : 0;
    std::vector<LayerSpec> layers = {
        {"seg.down1.conv1", 3, 1, c8},      {"seg.down1.conv2", 3, c8, c8},
        {"seg.down2.conv1", 3, c8, c4},     {"seg.down2.conv2", 3, c4, c4},
        {"seg.down3.conv1", 3, c4, c},      {"seg.down3.conv2", 3, c, c},
        {"seg.mid.conv1", 3, c, c},         {"seg.mid.conv2", 3, c, c},
        {"seg.up3.conv1", 3, c + t, c},     {"seg.up3.conv2", 3, c, c4},
        {"seg.up2.conv1", 3, c4 + t, c4},   {"seg.up2.conv2", 3, c4, c8},
        {"seg.up1.conv1", 3, c8 + t, c8},   {"seg.up1.conv2", 3, c8, c8},
        {"seg.head", 3, c8, cfg.classes},
    };
    if (cfg.has_encoder()) {
        layers.push_back({"vel.enc.stage1", 3, 1, c8});
        for (int s = 2; s <= 4; ++s) layers.push_back({"vel.enc.stage" + std::to_string(s), 3, c8, c8});
    }
    if (cfg.has_velocity_head()) {
        const int in = cfg.temporal_channels() + (cfg.feeds_back() ? cfg.classes : 0);
        layers.push_back({"vel.dec.conv1", 3, in, c8});
        layers.push_back({"vel.dec.conv2", 3, c8, c8});
        layers.push_back({"vel.dec.conv3", 3, c8, c8});
        layers.push_back({"vel.head", 1, c8, cfg.velocity_dims});
    }
    return layers;
}

std::size_t param_count(const NetworkConfig& config) {
    std::size_t n = 0;
    for (const auto& l : layer_table(config)) n += l.scalar_count();
    return n;
}

ModelParams build(const NetworkConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(datagen::mix_seed(seed, 0x6E6574));
    ModelParams params;
    for (const auto& l : layer_table(config)) {
        const auto k = static_cast<std::size_t>(l.kernel);
        Tensor<float> w({k, k, static_cast<std::size_t>(l.in_channels), static_cast<std::size_t>(l.out_channels)});
        const double bound = std::sqrt(6.0 / static_cast<double>(k * k * l.in_channels));
        for (auto& v : w.data()) v = static_cast<float>((2.0 * datagen::unit_uniform(rng) - 1.0) * bound);
        params.emplace(l.name + ".weight", std::move(w));
        params.emplace(l.name + ".bias", Tensor<float>({static_cast<std::size_t>(l.out_channels)}));
    }
    return params;
}

void check_compatible(const ModelParams& params, const NetworkConfig& config) {
    std::vector<std::string> missing, extra, misshapen;
    std::map<std::string, tc::Shape> expected;
    for (const auto& l : layer_table(config)) {
        const auto k = static_cast<std::size_t>(l.kernel);
        expected[l.name + ".weight"] = {k, k, static_cast<std::size_t>(l.in_channels),
                                        static_cast<std::size_t>(l.out_channels)};
        expected[l.name + ".bias"] = {static_cast<std::size_t>(l.out_channels)};
    }
    for (const auto& [name, shape] : expected) {
        auto it = params.find(name);
        if (it == params.end())
            missing.push_back(name);
        else if (it->second.shape() != shape)
            misshapen.push_back(name + " " + tc::shape_string(it->second.shape()) + "!=" + tc::shape_string(shape));
    }
    for (const auto& [name, t] : params)
        if (!expected.contains(name)) extra.push_back(name);
    if (missing.empty() && extra.empty() && misshapen.empty()) return;
    std::ostringstream os;
    os << "checkpoint does not match network config;";
    auto list = [&os](const char* what, const std::vector<std::string>& names) {
        if (names.empty()) return;
        os << ' ' << what << ':';
        for (const auto& n : names) os << ' ' << n;
        os << ';';
    };
    list("missing", missing);
    list("extra", extra);
    list("wrong shape", misshapen);
    throw FormatError(os.str());
}

std::size_t scalar_count(const ModelParams& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
}

Tensor<float> normalize(const projection::RangeImage& image) {
    const auto& s = image.sensor;
    Tensor<float> out({static_cast<std::size_t>(s.rows), static_cast<std::size_t>(s.cols), 1});
    for (std::size_t i = 0; i < image.ranges.size(); ++i)
        out[i] = image.defected(i) ? 0.0f : image.ranges[i] / s.max_range;
    return out;
}

namespace {

template <typename T>
struct Builder {
    tc::Tape<T>& tape;
    ForwardResult<T>& result;
    T leak;

    Var conv(Var x, const std::string& layer) {
        return tc::conv2d(tape, x, result.params.at(layer + ".weight"), result.params.at(layer + ".bias"));
    }
    Var conv_relu(Var x, const std::string& layer) { return tc::relu(tape, conv(x, layer), leak); }
};

}  // namespace

template <typename T>
ForwardResult<T> forward(tc::Tape<T>& tape, const TensorMap<T>& params, const NetworkConfig& config,
                         std::span<const Tensor<T>> window, bool params_require_grad) {
    config.validate();
    if (window.size() != static_cast<std::size_t>(config.frames))
        throw UsageError("forward: window holds " + std::to_string(window.size()) + " frames, network expects " +
                         std::to_string(config.frames));
    const tc::Shape input_shape{static_cast<std::size_t>(config.height), static_cast<std::size_t>(config.width), 1};
    for (const auto& f : window)
        if (f.shape() != input_shape)
            throw UsageError("forward: frame shape " + tc::shape_string(f.shape()) + " != " +
                             tc::shape_string(input_shape));

    ForwardResult<T> out;
    for (const auto& l : layer_table(config)) {
        for (const char* suffix : {".weight", ".bias"}) {
            const std::string name = l.name + suffix;
            auto it = params.find(name);
            if (it == params.end()) throw FormatError("forward: missing parameter '" + name + "'");
            out.params.emplace(name, tape.leaf(it->second, params_require_grad));
        }
    }
    Builder<T> b{tape, out, static_cast<T>(config.relu_leak)};

    // temporal features from the shared per-frame encoder
    std::optional<Var> temporal;
    if (config.has_encoder() && (config.propagates() || config.has_velocity_head())) {
        std::vector<Var> per_frame;
        for (const auto& f : window) {
            Var e = tape.leaf(f);
            for (int s = 1; s <= 4; ++s) e = tc::maxpool_w(tape, b.conv_relu(e, "vel.enc.stage" + std::to_string(s)));
            per_frame.push_back(e);
        }
        temporal = tc::concat_channels<T>(tape, per_frame);
    }
    auto temporal_at = [&](std::size_t factor) { return tc::upsample_w(tape, *temporal, factor); };

    // contraction
    Var x = tape.leaf(window.back());
    Var s1 = b.conv_relu(b.conv_relu(x, "seg.down1.conv1"), "seg.down1.conv2");
    Var s2 = b.conv_relu(b.conv_relu(tc::maxpool_w(tape, s1), "seg.down2.conv1"), "seg.down2.conv2");
    Var s3 = b.conv_relu(b.conv_relu(tc::maxpool_w(tape, s2), "seg.down3.conv1"), "seg.down3.conv2");
    Var u = b.conv_relu(b.conv_relu(tc::maxpool_w(tape, s3), "seg.mid.conv1"), "seg.mid.conv2");

    // expansion with additive skips and concatenated temporal features
    const std::pair<Var, const char*> stages[] = {{s3, "seg.up3"}, {s2, "seg.up2"}, {s1, "seg.up1"}};
    std::size_t factor = 4;
    std::optional<Var> temporal_full;
    for (const auto& [skip, name] : stages) {
        u = tc::add(tape, tc::upsample_w(tape, u, 2), skip);
        if (config.propagates()) {
            Var t = temporal_at(factor);
            if (factor == 16) temporal_full = t;
            const Var parts[] = {u, t};
            u = tc::concat_channels<T>(tape, parts);
        }
        u = b.conv_relu(b.conv_relu(u, std::string(name) + ".conv1"), std::string(name) + ".conv2");
        factor *= 2;
    }
    out.labels = tc::softmax_pixels(tape, b.conv(u, "seg.head"));

    if (config.has_velocity_head()) {
        Var d = temporal_full ? *temporal_full : temporal_at(16);
        if (config.feeds_back()) {
            const Var parts[] = {d, out.labels};
            d = tc::concat_channels<T>(tape, parts);
        }
        d = b.conv_relu(d, "vel.dec.conv1");
        d = b.conv_relu(d, "vel.dec.conv2");
        d = b.conv_relu(d, "vel.dec.conv3");
        out.velocity = b.conv(d, "vel.head");
    }
    return out;
}

template <typename T>
TensorMap<T> collect_gradients(const tc::Tape<T>& tape, const ForwardResult<T>& result, const TensorMap<T>& params) {
    TensorMap<T> grads;
    for (const auto& [name, p] : params) {
        auto it = result.params.find(name);
        grads.emplace(name, it == result.params.end() ? Tensor<T>(p.shape()) : tape.grad(it->second));
    }
    return grads;
}

Prediction predict(const ModelParams& params, const NetworkConfig& config, std::span<const Tensor<float>> window) {
    tc::Tape<float> tape;
    tape.set_grad_enabled(false);
    const auto r = forward<float>(tape, params, config, window, false);
    Prediction p{tape.value(r.labels), std::nullopt};
    if (r.velocity) p.velocity = tape.value(*r.velocity);
    return p;
}

template ForwardResult<float> forward<float>(tc::Tape<float>&, const TensorMap<float>&, const NetworkConfig&,
                                             std::span<const Tensor<float>>, bool);
template ForwardResult<double> forward<double>(tc::Tape<double>&, const TensorMap<double>&, const NetworkConfig&,
                                               std::span<const Tensor<double>>, bool);
template TensorMap<float> collect_gradients<float>(const tc::Tape<float>&, const ForwardResult<float>&,
                                                   const TensorMap<float>&);
template TensorMap<double> collect_gradients<double>(const tc::Tape<double>&, const ForwardResult<double>&,
                                                     const TensorMap<double>&);

}  // namespace lidarseg::network
