#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "lidarseg/adam.hpp"
#include "lidarseg/checkpoint.hpp"
#include "lidarseg/error.hpp"
#include "lidarseg/gradcheck.hpp"
#include "lidarseg/ops.hpp"

using namespace lidarseg;
using namespace lidarseg::tensorcore;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(u(rng));
    return t;
}

// Direct convolution with wrap-around columns and zero rows.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b) {
    const long h = long(x.dim(0)), w = long(x.dim(1)), cin = long(x.dim(2)), ks = long(k.dim(0)),
               cout = long(k.dim(3));
    Tensor<double> y({x.dim(0), x.dim(1), k.dim(3)});
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j)
            for (long o = 0; o < cout; ++o) {
                double acc = b[o];
                for (long di = 0; di < ks; ++di)
                    for (long dj = 0; dj < ks; ++dj) {
                        const long si = i + di - ks / 2;
                        if (si < 0 || si >= h) continue;
                        const long sj = ((j + dj - ks / 2) % w + w) % w;
                        for (long c = 0; c < cin; ++c)
                            acc += x.at(si, sj, c) * k[((di * ks + dj) * cin + c) * cout + o];
                    }
                y.at(i, j, o) = acc;
            }
    return y;
}

Tensor<double> rotate_columns(const Tensor<double>& x, std::size_t s) {
    Tensor<double> out(x.shape());
    for (std::size_t i = 0; i < x.dim(0); ++i)
        for (std::size_t j = 0; j < x.dim(1); ++j)
            for (std::size_t c = 0; c < x.dim(2); ++c) out.at(i, (j + s) % x.dim(1), c) = x.at(i, j, c);
    return out;
}

Tensor<double> run_conv(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b) {
    Tape<double> tape;
    return tape.value(conv2d(tape, tape.leaf(x), tape.leaf(k), tape.leaf(b)));
}

}  // namespace

TEST_CASE("tensor construction validates shape and size") {
    CHECK(Tensor<float>({2, 3}).size() == 6);
    CHECK_THROWS_AS(Tensor<float>({2, 0}), ConfigError);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>(3)), ConfigError);
    CHECK(shape_string({4, 8, 2}) == "[4x8x2]");
}

TEST_CASE("conv2d: zero input and zero bias give zero output") {
    std::mt19937_64 rng(1);
    const auto y = run_conv(Tensor<double>({3, 4, 2}), random_tensor<double>({3, 3, 2, 5}, rng), Tensor<double>({5}));
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d: centre-tap identity kernel on a 1x1 input") {
    Tensor<double> k({3, 3, 1, 1});
    k[4] = 1.0;
    const auto y = run_conv(Tensor<double>({1, 1, 1}, 2.5), k, Tensor<double>({1}));
    CHECK(y[0] == 2.5);
}

TEST_CASE("conv2d matches a direct convolution") {
    std::mt19937_64 rng(2);
    for (std::size_t ks : {1u, 3u}) {
        const auto x = random_tensor<double>({4, 6, 2}, rng);
        const auto k = random_tensor<double>({ks, ks, 2, 3}, rng);
        const auto b = random_tensor<double>({3}, rng);
        const auto y = run_conv(x, k, b);
        const auto ref = naive_conv(x, k, b);
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-9));
    }
    // float path
    const auto x = random_tensor<double>({4, 6, 2}, rng);
    const auto k = random_tensor<double>({3, 3, 2, 3}, rng);
    const auto b = random_tensor<double>({3}, rng);
    Tape<float> tape;
    const auto yf = tape.value(conv2d(tape, tape.leaf(x.cast<float>()), tape.leaf(k.cast<float>()),
                                      tape.leaf(b.cast<float>())));
    const auto ref = naive_conv(x.cast<float>().cast<double>(), k.cast<float>().cast<double>(),
                                b.cast<float>().cast<double>());
    for (std::size_t i = 0; i < yf.size(); ++i) CHECK(std::abs(yf[i] - ref[i]) < 1e-6);
}

TEST_CASE("conv2d rejects mismatched shapes with both shapes in the message") {
    Tape<float> tape;
    const Var x = tape.leaf(Tensor<float>({2, 4, 3}));
    const Var k = tape.leaf(Tensor<float>({3, 3, 2, 1}));
    const Var b = tape.leaf(Tensor<float>({1}));
    try {
        conv2d(tape, x, k, b);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x4x3") != std::string::npos);
        CHECK(msg.find("3x3x2x1") != std::string::npos);
    }
    CHECK_THROWS_AS(conv2d(tape, x, tape.leaf(Tensor<float>({5, 5, 3, 1})), b), ConfigError);
}

TEST_CASE("conv2d is equivariant to column rotation") {
    std::mt19937_64 rng(3);
    const auto x = random_tensor<double>({5, 8, 2}, rng);
    const auto k = random_tensor<double>({3, 3, 2, 3}, rng);
    const auto b = random_tensor<double>({3}, rng);
    for (std::size_t s : {1u, 3u, 7u}) {
        const auto a = run_conv(rotate_columns(x, s), k, b);
        const auto c = rotate_columns(run_conv(x, k, b), s);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(c[i]).epsilon(1e-12));
    }
}

TEST_CASE("relu and its leaky variant") {
    Tape<double> tape;
    const Var x = tape.leaf(Tensor<double>({1, 4, 1}, std::vector<double>{-2.0, -0.5, 0.0, 3.0}));
    const auto plain = tape.value(relu(tape, x));
    const auto leaky = tape.value(relu(tape, x, 0.1));
    CHECK(plain.data()[0] == 0.0);
    CHECK(plain.data()[3] == 3.0);
    CHECK(leaky.data()[0] == doctest::Approx(-0.2));
    CHECK(leaky.data()[1] == doctest::Approx(-0.05));
    CHECK(leaky.data()[2] == 0.0);
    CHECK(leaky.data()[3] == 3.0);
}

TEST_CASE("maxpool_w forward") {
    Tape<float> tape;
    const auto y = tape.value(maxpool_w(tape, tape.leaf(Tensor<float>({1, 2, 1}, {3.0f, 5.0f}))));
    CHECK(y.shape() == Shape{1, 1, 1});
    CHECK(y[0] == 5.0f);

    const auto c = tape.value(maxpool_w(tape, tape.leaf(Tensor<float>({2, 4, 3}, 1.5f))));
    CHECK(c.shape() == Shape{2, 2, 3});
    for (float v : c.data()) CHECK(v == 1.5f);

    std::mt19937_64 rng(4);
    const auto x = random_tensor<float>({8, 16, 4}, rng);
    const auto m = tape.value(maxpool_w(tape, tape.leaf(x)));
    for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j)
            for (std::size_t k = 0; k < 4; ++k) CHECK(m.at(i, j, k) == std::max(x.at(i, 2 * j, k), x.at(i, 2 * j + 1, k)));

    CHECK_THROWS_AS(maxpool_w(tape, tape.leaf(Tensor<float>({1, 3, 1}))), ConfigError);
}

TEST_CASE("maxpool_w routes each output gradient to exactly one input") {
    std::mt19937_64 rng(5);
    Tape<double> tape;
    const Var x = tape.leaf(random_tensor<double>({3, 8, 2}, rng), true);
    const Var y = maxpool_w(tape, x);
    tape.backward(sum(tape, y));
    const auto g = tape.grad(x);
    double total = 0.0;
    std::size_t nonzero = 0;
    for (double v : g.data()) {
        total += v;
        nonzero += v != 0.0;
    }
    CHECK(total == 3 * 4 * 2);
    CHECK(nonzero == 3 * 4 * 2);
}

TEST_CASE("upsample_w replicates columns") {
    Tape<double> tape;
    const Tensor<double> x({1, 2, 1}, {1.0, 2.0});
    CHECK(tape.value(upsample_w(tape, tape.leaf(x), 1)) == x);
    const auto y = tape.value(upsample_w(tape, tape.leaf(x), 2));
    CHECK(y == Tensor<double>({1, 4, 1}, {1.0, 1.0, 2.0, 2.0}));
    CHECK_THROWS_AS(upsample_w(tape, tape.leaf(x), 0), ConfigError);

    std::mt19937_64 rng(6);
    const Var v = tape.leaf(random_tensor<double>({2, 3, 2}, rng), true);
    tape.backward(sum(tape, upsample_w(tape, v, 4)));
    const auto g = tape.grad(v);
    for (double e : g.data()) CHECK(e == 4.0);
}

TEST_CASE("softmax_pixels") {
    Tape<double> tape;
    const auto half = tape.value(softmax_pixels(tape, tape.leaf(Tensor<double>({1, 1, 2}, {0.0, 0.0}))));
    CHECK(half[0] == 0.5);
    CHECK(half[1] == 0.5);

    const auto big = tape.value(softmax_pixels(tape, tape.leaf(Tensor<double>({1, 1, 2}, {1000.0, 0.0}))));
    CHECK(std::isfinite(big[0]));
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(big[1] == doctest::Approx(0.0));

    std::mt19937_64 rng(7);
    const auto logits = random_tensor<double>({2, 3, 2}, rng, -3.0, 3.0);
    const auto p = tape.value(softmax_pixels(tape, tape.leaf(logits)));
    for (std::size_t px = 0; px < 6; ++px) {
        const double e0 = std::exp(logits[2 * px]), e1 = std::exp(logits[2 * px + 1]);
        CHECK(std::abs(p[2 * px] - e0 / (e0 + e1)) < 1e-6);
        CHECK(std::abs(p[2 * px + 1] - e1 / (e0 + e1)) < 1e-6);
    }

    Tape<float> tf;
    const auto extreme = tf.value(softmax_pixels(tf, tf.leaf(Tensor<float>({1, 3, 2}, {1e4f, -1e4f, -1e4f, 1e4f, 3.0f, 3.0f}))));
    for (std::size_t px = 0; px < 3; ++px) CHECK(std::abs(extreme[2 * px] + extreme[2 * px + 1] - 1.0f) < 1e-6f);
}

TEST_CASE("concat_channels") {
    Tape<double> tape;
    const Var a = tape.leaf(Tensor<double>({1, 1, 1}, {1.0}), true);
    const Var b = tape.leaf(Tensor<double>({1, 1, 1}, {2.0}), true);
    const Var one[] = {a};
    const Var single = concat_channels<double>(tape, one);
    CHECK(tape.value(single) == tape.value(a));
    const Var both[] = {a, b};
    const Var y = concat_channels<double>(tape, both);
    CHECK(tape.value(y) == Tensor<double>({1, 1, 2}, {1.0, 2.0}));
    tape.backward(sum(tape, y));
    CHECK(tape.grad(a)[0] == 1.0);
    CHECK(tape.grad(b)[0] == 1.0);
    const Var bad[] = {a, tape.leaf(Tensor<double>({1, 2, 1}))};
    CHECK_THROWS_AS(concat_channels<double>(tape, bad), ConfigError);
}

TEST_CASE("grad_check: linear graph is exact") {
    std::mt19937_64 rng(8);
    const auto r = grad_check<double>(
        [](Tape<double>& t, Var x) { return sum(t, x); }, random_tensor<double>({3, 4, 2}, rng), 1e-9);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-9);
    CHECK(r.checked == 24);
}

TEST_CASE("grad_check: non-scalar output is a usage error") {
    std::mt19937_64 rng(9);
    CHECK_THROWS_AS(grad_check<double>([](Tape<double>&, Var x) { return x; }, random_tensor<double>({2, 2, 1}, rng),
                                       1e-3),
                    UsageError);
}

TEST_CASE("grad_check: conv2d, softmax and cross-entropy") {
    std::mt19937_64 rng(10);
    std::vector<std::uint8_t> targets(32);
    for (auto& t : targets) t = static_cast<std::uint8_t>(rng() % 2);
    const std::vector<Tensor<double>> inputs{random_tensor<double>({4, 8, 1}, rng), random_tensor<double>({3, 3, 1, 2}, rng),
                                             random_tensor<double>({2}, rng)};
    const auto r = grad_check<double>(
        [&](Tape<double>& t, const std::vector<Var>& v) {
            return mean_cross_entropy(t, softmax_pixels(t, conv2d(t, v[0], v[1], v[2])), targets);
        },
        inputs, 1e-3);
    CHECK_MESSAGE(r.passed, "max relative error " << r.max_rel_error);
}

TEST_CASE("grad_check: every op away from ties") {
    std::mt19937_64 rng(11);
    // Well-separated values keep max pooling and ReLU away from their kinks.
    Tensor<double> x({3, 8, 2});
    std::vector<double> vals(x.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = -2.0 + 0.1 * static_cast<double>(i) + 0.013;
    std::shuffle(vals.begin(), vals.end(), rng);
    std::copy(vals.begin(), vals.end(), x.data().begin());
    const auto w = random_tensor<double>({3, 8, 2}, rng);

    auto weighted = [&w](Tape<double>& t, Var y) {
        // Random linear read-out so the check is not a plain sum.
        const Tensor<double> v = t.value(y);
        Tensor<double> coeff(v.shape());
        for (std::size_t i = 0; i < coeff.size(); ++i) coeff[i] = w[i % w.size()] + 0.5;
        const Var c = t.leaf(coeff);
        Tensor<double> prod(v.shape());
        for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = v[i] * coeff[i];
        return t.record(Tensor<double>({1}, [&] {
                            double s = 0;
                            for (double p : prod.data()) s += p;
                            return s;
                        }()),
                        {y, c}, [y, coeff](Tape<double>& tp, Var self) {
                            if (double* dy = tp.grad_ptr(y))
                                for (std::size_t i = 0; i < coeff.size(); ++i) dy[i] += tp.grad_ptr(self)[0] * coeff[i];
                        });
    };
    const std::vector<std::pair<const char*, Graph<double>>> graphs{
        {"relu", [&](Tape<double>& t, Var v) { return weighted(t, relu(t, v)); }},
        {"leaky relu", [&](Tape<double>& t, Var v) { return weighted(t, relu(t, v, 0.1)); }},
        {"maxpool", [&](Tape<double>& t, Var v) { return weighted(t, maxpool_w(t, v)); }},
        {"upsample", [&](Tape<double>& t, Var v) { return weighted(t, upsample_w(t, v, 3)); }},
        {"softmax", [&](Tape<double>& t, Var v) { return weighted(t, softmax_pixels(t, v)); }},
        {"add", [&](Tape<double>& t, Var v) { return weighted(t, add(t, v, relu(t, v))); }},
        {"concat", [&](Tape<double>& t, Var v) {
             const Var parts[] = {v, maxpool_w(t, upsample_w(t, v, 2))};
             return weighted(t, concat_channels<double>(t, parts));
         }},
    };
    for (const auto& [name, g] : graphs) {
        const auto r = grad_check<double>(g, x, 1e-3);
        CHECK_MESSAGE(r.passed, name << ": max relative error " << r.max_rel_error);
    }
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    std::mt19937_64 rng(12);
    TensorMap<float> params{{"w", random_tensor<float>({3, 2}, rng)}};
    const auto before = params;
    auto state = AdamState::for_params(params);
    for (int i = 0; i < 5; ++i) adam_step(params, {{"w", Tensor<float>({3, 2})}}, state);
    CHECK(params == before);
    CHECK(state.step == 5);
}

TEST_CASE("adam: first step moves by about the learning rate against the gradient") {
    TensorMap<float> params{{"x", Tensor<float>({1}, 1.0f)}};
    auto state = AdamState::for_params(params, 0.01f);
    adam_step(params, {{"x", Tensor<float>({1}, 3.0f)}}, state);
    CHECK(params.at("x")[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-5));
    TensorMap<float> neg{{"x", Tensor<float>({1}, 1.0f)}};
    auto s2 = AdamState::for_params(neg, 0.01f);
    adam_step(neg, {{"x", Tensor<float>({1}, -0.5f)}}, s2);
    CHECK(neg.at("x")[0] == doctest::Approx(1.0 + 0.01).epsilon(1e-5));
}

TEST_CASE("adam: x^2 descent matches the scalar recurrence") {
    TensorMap<float> params{{"x", Tensor<float>({1}, 1.0f)}};
    auto state = AdamState::for_params(params, 0.1f);
    double x = 1.0, m = 0.0, v = 0.0, prev = 1.0;
    for (int t = 1; t <= 10; ++t) {
        const double g = 2.0 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
        x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
        adam_step(params, {{"x", Tensor<float>({1}, 2.0f * params.at("x")[0])}}, state);
        const double got = params.at("x")[0];
        CHECK(got == doctest::Approx(x).epsilon(1e-4));
        CHECK(std::abs(got) < prev);
        prev = std::abs(got);
    }
}

TEST_CASE("adam: missing or misshapen gradient is a training error naming the parameter") {
    TensorMap<float> params{{"enc.weight", Tensor<float>({2})}, {"b", Tensor<float>({1})}};
    auto state = AdamState::for_params(params);
    try {
        adam_step(params, {{"b", Tensor<float>({1})}}, state);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("enc.weight") != std::string::npos);
    }
    CHECK_THROWS_AS(adam_step(params, {{"b", Tensor<float>({1})}, {"enc.weight", Tensor<float>({3})}}, state),
                    TrainingError);
    CHECK(state.step == 0);
}

TEST_CASE("checkpoint round trip is bitwise") {
    std::mt19937_64 rng(13);
    TensorMap<float> params{{"a.weight", random_tensor<float>({3, 3, 2, 4}, rng)}, {"a.bias", random_tensor<float>({4}, rng)}};
    auto state = AdamState::for_params(params, 2e-4f);
    for (int i = 0; i < 3; ++i)
        adam_step(params, {{"a.weight", random_tensor<float>({3, 3, 2, 4}, rng)}, {"a.bias", random_tensor<float>({4}, rng)}},
                  state);
    const auto dir = std::filesystem::temp_directory_path() / "lidarseg_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "c.lsqw";
    save_checkpoint(params, state, path);
    CHECK(load_params(path) == params);
    CHECK(load_adam_state(path) == state);
}

TEST_CASE("checkpoint corruption is a format error") {
    std::mt19937_64 rng(14);
    TensorMap<float> params{{"w", random_tensor<float>({5, 7}, rng)}};
    const auto dir = std::filesystem::temp_directory_path() / "lidarseg_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "bad.lsqw";
    write_tensor_records(path, params);
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&path](const std::string& b) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << b;
    };
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    write(bad_magic);
    CHECK_THROWS_AS(read_tensor_records(path), FormatError);

    auto bad_version = bytes;
    bad_version[4] = 9;
    write(bad_version);
    CHECK_THROWS_AS(read_tensor_records(path), FormatError);

    write(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_tensor_records(path), FormatError);

    write(bytes + "junk");
    CHECK_THROWS_AS(read_tensor_records(path), FormatError);

    write(bytes);
    CHECK(read_tensor_records(path) == params);
}
