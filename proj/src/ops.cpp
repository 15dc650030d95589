#include "lidarseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "lidarseg/error.hpp"

namespace lidarseg::tensorcore {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require_rank3(const Shape& s, const char* op) {
    if (s.size() != 3) throw ConfigError(std::string(op) + ": expected an h×w×c tensor, got " + shape_string(s));
}

struct ConvGeometry {
    std::size_t h, w, cin, cout, k;
    std::size_t patch() const { return k * k * cin; }
    std::size_t pixels() const { return h * w; }
};

// Gathers k×k neighbourhoods into rows of a (h·w)×(k·k·c_in) matrix.
template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* cols) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.k / 2);
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.h), w = static_cast<std::ptrdiff_t>(g.w);
    const std::size_t K = g.patch();
    for (std::ptrdiff_t y = 0; y < h; ++y) {
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            T* row = cols + (static_cast<std::size_t>(y * w + x)) * K;
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                const std::ptrdiff_t sy = y + static_cast<std::ptrdiff_t>(ky) - pad;
                T* dst = row + ky * g.k * g.cin;
                if (sy < 0 || sy >= h) {
                    std::fill(dst, dst + g.k * g.cin, T{0});
                    continue;
                }
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    std::ptrdiff_t sx = (x + static_cast<std::ptrdiff_t>(kx) - pad) % w;
                    if (sx < 0) sx += w;
                    std::memcpy(dst + kx * g.cin, in + static_cast<std::size_t>(sy * w + sx) * g.cin, g.cin * sizeof(T));
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* out) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.k / 2);
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(g.h), w = static_cast<std::ptrdiff_t>(g.w);
    const std::size_t K = g.patch();
    for (std::ptrdiff_t y = 0; y < h; ++y) {
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            const T* row = cols + static_cast<std::size_t>(y * w + x) * K;
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                const std::ptrdiff_t sy = y + static_cast<std::ptrdiff_t>(ky) - pad;
                if (sy < 0 || sy >= h) continue;
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    std::ptrdiff_t sx = (x + static_cast<std::ptrdiff_t>(kx) - pad) % w;
                    if (sx < 0) sx += w;
                    const T* src = row + (ky * g.k + kx) * g.cin;
                    T* dst = out + static_cast<std::size_t>(sy * w + sx) * g.cin;
                    for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var kernel, Var bias, PadMode /*pad*/) {
    const auto& xs = tape.value(input).shape();
    const auto& ks = tape.value(kernel).shape();
    const auto& bs = tape.value(bias).shape();
    require_rank3(xs, "conv2d");
    if (ks.size() != 4 || ks[0] != ks[1] || (ks[0] != 1 && ks[0] != 3) || ks[2] != xs[2] || bs.size() != 1 ||
        bs[0] != ks[3]) {
        throw ConfigError("conv2d: input " + shape_string(xs) + " incompatible with kernel " + shape_string(ks) +
                          " and bias " + shape_string(bs));
    }
    const ConvGeometry g{xs[0], xs[1], xs[2], ks[3], ks[0]};

    const T* in = tape.value(input).data().data();
    ConstMatMap<T> K(tape.value(kernel).data().data(), g.patch(), g.cout);
    const T* b = tape.value(bias).data().data();

    Tensor<T> out({g.h, g.w, g.cout});
    MatMap<T> Y(out.data().data(), g.pixels(), g.cout);
    if (g.k == 1) {
        ConstMatMap<T> X(in, g.pixels(), g.cin);
        Y.noalias() = X * K;
    } else {
        RowMat<T> cols(g.pixels(), g.patch());
        im2col(in, g, cols.data());
        Y.noalias() = cols * K;
    }
    for (std::size_t r = 0; r < g.pixels(); ++r)
        for (std::size_t c = 0; c < g.cout; ++c) Y(r, c) += b[c];

    return tape.record(std::move(out), {input, kernel, bias}, [input, kernel, bias, g](Tape<T>& t, Var self) {
        ConstMatMap<T> dY(t.grad_ptr(self), g.pixels(), g.cout);
        const T* in = t.value(input).data().data();
        RowMat<T> cols;
        const T* colsp = in;
        if (g.k != 1) {
            cols.resize(g.pixels(), g.patch());
            im2col(in, g, cols.data());
            colsp = cols.data();
        }
        ConstMatMap<T> X(colsp, g.pixels(), g.patch());
        if (T* dk = t.grad_ptr(kernel)) {
            MatMap<T> dK(dk, g.patch(), g.cout);
            dK.noalias() += X.transpose() * dY;
        }
        if (T* db = t.grad_ptr(bias)) {
            for (std::size_t c = 0; c < g.cout; ++c) {
                double acc = 0.0;
                for (std::size_t r = 0; r < g.pixels(); ++r) acc += dY(r, c);
                db[c] += static_cast<T>(acc);
            }
        }
        if (T* dx = t.grad_ptr(input)) {
            ConstMatMap<T> K(t.value(kernel).data().data(), g.patch(), g.cout);
            if (g.k == 1) {
                MatMap<T> dX(dx, g.pixels(), g.cin);
                dX.noalias() += dY * K.transpose();
            } else {
                RowMat<T> dcols = dY * K.transpose();
                col2im_add(dcols.data(), g, dx);
            }
        }
    });
}

template <typename T>
Var relu(Tape<T>& tape, Var input, T negative_slope) {
    Tensor<T> out = tape.value(input);
    for (auto& v : out.data()) v = v > T{0} ? v : negative_slope * v;
    return tape.record(std::move(out), {input}, [input, negative_slope](Tape<T>& t, Var self) {
        T* dx = t.grad_ptr(input);
        if (!dx) return;
        const T* dy = t.grad_ptr(self);
        const auto x = t.value(input).data();
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += x[i] > T{0} ? dy[i] : negative_slope * dy[i];
    });
}

template <typename T>
Var maxpool_w(Tape<T>& tape, Var input) {
    const auto& s = tape.value(input).shape();
    require_rank3(s, "maxpool_w");
    if (s[1] % 2 != 0) throw ConfigError("maxpool_w: width must be even, got " + shape_string(s));
    const std::size_t h = s[0], w = s[1] / 2, c = s[2];
    const auto in = tape.value(input).data();
    Tensor<T> out({h, w, c});
    std::vector<std::uint32_t> argmax(out.size());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < c; ++k) {
                const std::size_t a = (y * s[1] + 2 * x) * c + k;
                const std::size_t b = a + c;
                const std::size_t o = (y * w + x) * c + k;
                const std::size_t win = in[b] > in[a] ? b : a;
                out[o] = in[win];
                argmax[o] = static_cast<std::uint32_t>(win);
            }
    return tape.record(std::move(out), {input}, [input, idx = std::move(argmax)](Tape<T>& t, Var self) {
        T* dx = t.grad_ptr(input);
        if (!dx) return;
        const T* dy = t.grad_ptr(self);
        for (std::size_t o = 0; o < idx.size(); ++o) dx[idx[o]] += dy[o];
    });
}

template <typename T>
Var upsample_w(Tape<T>& tape, Var input, std::size_t factor) {
    const auto& s = tape.value(input).shape();
    require_rank3(s, "upsample_w");
    if (factor == 0) throw ConfigError("upsample_w: factor must be positive");
    const std::size_t h = s[0], w = s[1], c = s[2];
    const auto in = tape.value(input).data();
    Tensor<T> out({h, w * factor, c});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t f = 0; f < factor; ++f)
                std::copy_n(in.data() + (y * w + x) * c, c, out.data().data() + (y * w * factor + x * factor + f) * c);
    return tape.record(std::move(out), {input}, [input, h, w, c, factor](Tape<T>& t, Var self) {
        T* dx = t.grad_ptr(input);
        if (!dx) return;
        const T* dy = t.grad_ptr(self);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t f = 0; f < factor; ++f) {
                    const T* src = dy + (y * w * factor + x * factor + f) * c;
                    T* dst = dx + (y * w + x) * c;
                    for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
                }
    });
}

template <typename T>
Var softmax_pixels(Tape<T>& tape, Var input) {
    const auto& s = tape.value(input).shape();
    require_rank3(s, "softmax_pixels");
    if (s[2] < 2) throw ConfigError("softmax_pixels: need at least 2 channels, got " + shape_string(s));
    const std::size_t pixels = s[0] * s[1], k = s[2];
    const auto in = tape.value(input).data();
    Tensor<T> out(s);
    auto o = out.data();
    std::vector<double> e(k);
    for (std::size_t p = 0; p < pixels; ++p) {
        const T* x = in.data() + p * k;
        double m = x[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max<double>(m, x[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            e[j] = std::exp(static_cast<double>(x[j]) - m);
            total += e[j];
        }
        for (std::size_t j = 0; j < k; ++j) o[p * k + j] = static_cast<T>(e[j] / total);
    }
    return tape.record(std::move(out), {input}, [input, pixels, k](Tape<T>& t, Var self) {
        T* dx = t.grad_ptr(input);
        if (!dx) return;
        const T* dy = t.grad_ptr(self);
        const auto y = t.value(self).data();
        for (std::size_t p = 0; p < pixels; ++p) {
            double dot = 0.0;
            for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(dy[p * k + j]) * y[p * k + j];
            for (std::size_t j = 0; j < k; ++j)
                dx[p * k + j] += static_cast<T>(y[p * k + j] * (static_cast<double>(dy[p * k + j]) - dot));
        }
    });
}

template <typename T>
Var concat_channels(Tape<T>& tape, std::span<const Var> inputs) {
    if (inputs.empty()) throw ConfigError("concat_channels: no inputs");
    const auto& s0 = tape.value(inputs[0]).shape();
    require_rank3(s0, "concat_channels");
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (auto v : inputs) {
        const auto& s = tape.value(v).shape();
        require_rank3(s, "concat_channels");
        if (s[0] != s0[0] || s[1] != s0[1])
            throw ConfigError("concat_channels: spatial size mismatch " + shape_string(s0) + " vs " + shape_string(s));
        widths.push_back(s[2]);
        total += s[2];
    }
    const std::size_t pixels = s0[0] * s0[1];
    Tensor<T> out({s0[0], s0[1], total});
    std::size_t offset = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const T* src = tape.value(inputs[i]).data().data();
        for (std::size_t p = 0; p < pixels; ++p)
            std::copy_n(src + p * widths[i], widths[i], out.data().data() + p * total + offset);
        offset += widths[i];
    }
    std::vector<Var> ins(inputs.begin(), inputs.end());
    return tape.record(std::move(out), ins, [ins, widths, total, pixels](Tape<T>& t, Var self) {
        const T* dy = t.grad_ptr(self);
        std::size_t offset = 0;
        for (std::size_t i = 0; i < ins.size(); ++i) {
            if (T* dx = t.grad_ptr(ins[i])) {
                for (std::size_t p = 0; p < pixels; ++p)
                    for (std::size_t c = 0; c < widths[i]; ++c) dx[p * widths[i] + c] += dy[p * total + offset + c];
            }
            offset += widths[i];
        }
    });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    const auto& sa = tape.value(a).shape();
    const auto& sb = tape.value(b).shape();
    if (sa != sb) throw ConfigError("add: shape mismatch " + shape_string(sa) + " vs " + shape_string(sb));
    Tensor<T> out = tape.value(a);
    const auto bv = tape.value(b).data();
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
    return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, Var self) {
        const T* dy = t.grad_ptr(self);
        const std::size_t n = t.value(self).size();
        for (Var in : {a, b})
            if (T* dx = t.grad_ptr(in))
                for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i];
    });
}

template <typename T>
Var sum(Tape<T>& tape, Var input) {
    double acc = 0.0;
    for (T v : tape.value(input).data()) acc += v;
    return tape.record(Tensor<T>({1}, static_cast<T>(acc)), {input}, [input](Tape<T>& t, Var self) {
        T* dx = t.grad_ptr(input);
        if (!dx) return;
        const T g = t.grad_ptr(self)[0];
        const std::size_t n = t.value(input).size();
        for (std::size_t i = 0; i < n; ++i) dx[i] += g;
    });
}

template <typename T>
Var mean_cross_entropy(Tape<T>& tape, Var probs, std::span<const std::uint8_t> targets) {
    const auto& s = tape.value(probs).shape();
    require_rank3(s, "mean_cross_entropy");
    const std::size_t pixels = s[0] * s[1], k = s[2];
    if (targets.size() != pixels)
        throw ConfigError("mean_cross_entropy: " + std::to_string(targets.size()) + " targets for " + shape_string(s));
    constexpr double floor = 1e-12;
    const auto p = tape.value(probs).data();
    double acc = 0.0;
    for (std::size_t i = 0; i < pixels; ++i) {
        if (targets[i] >= k) throw ConfigError("mean_cross_entropy: target class out of range");
        acc -= std::log(std::max<double>(p[i * k + targets[i]], floor));
    }
    std::vector<std::uint8_t> tg(targets.begin(), targets.end());
    return tape.record(Tensor<T>({1}, static_cast<T>(acc / static_cast<double>(pixels))), {probs},
                       [probs, tg = std::move(tg), k](Tape<T>& t, Var self) {
                           T* dp = t.grad_ptr(probs);
                           if (!dp) return;
                           const double g = t.grad_ptr(self)[0];
                           const auto p = t.value(probs).data();
                           const double n = static_cast<double>(tg.size());
                           for (std::size_t i = 0; i < tg.size(); ++i) {
                               const double pi = p[i * k + tg[i]];
                               if (pi > floor) dp[i * k + tg[i]] += static_cast<T>(-g / (n * pi));
                           }
                       });
}

#define LIDARSEG_INSTANTIATE_OPS(T)                                                                \
    template Var conv2d<T>(Tape<T>&, Var, Var, Var, PadMode);                                      \
    template Var relu<T>(Tape<T>&, Var, T);                                                              \
    template Var maxpool_w<T>(Tape<T>&, Var);                                                      \
    template Var upsample_w<T>(Tape<T>&, Var, std::size_t);                                        \
    template Var softmax_pixels<T>(Tape<T>&, Var);                                                 \
    template Var concat_channels<T>(Tape<T>&, std::span<const Var>);                               \
    template Var add<T>(Tape<T>&, Var, Var);                                                       \
    template Var sum<T>(Tape<T>&, Var);                                                            \
    template Var mean_cross_entropy<T>(Tape<T>&, Var, std::span<const std::uint8_t>);

LIDARSEG_INSTANTIATE_OPS(float)
LIDARSEG_INSTANTIATE_OPS(double)

}  // namespace lidarseg::tensorcore
