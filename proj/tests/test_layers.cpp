#include <omp.h>

#include <array>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fxdetect/layers.hpp"

using namespace fxdetect;

namespace {

LayerSpec conv_spec(int m, int n, int k, int s, int p, const char* name = "conv") {
    LayerSpec spec;
    spec.kind = LayerKind::Conv;
    spec.name = name;
    spec.out_channels = m;
    spec.in_channels = n;
    spec.kernel = k;
    spec.stride = s;
    spec.pad = p;
    return spec;
}

struct RandomConv {
    LayerSpec spec;
    Tensor input, weights, bias;
};

RandomConv random_real_conv(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    const int m = 1 + static_cast<int>(rng() % 8);
    const int n = 1 + static_cast<int>(rng() % 8);
    const int k = std::array{1, 3, 5}[rng() % 3];
    const int s = 1 + static_cast<int>(rng() % 2);
    const int p = static_cast<int>(rng() % 2);
    const int h = k + static_cast<int>(rng() % 10);
    const int w = k + static_cast<int>(rng() % 10);
    RandomConv rc;
    rc.spec = conv_spec(m, n, k, s, p);
    rc.input = Tensor::real(Shape{1, n, h, w});
    rc.weights = Tensor::real(Shape{m, n, k, k});
    rc.bias = Tensor::real(Shape{1, m, 1, 1});
    for (double& v : rc.input.vals) v = dist(rng);
    for (double& v : rc.weights.vals) v = dist(rng);
    for (double& v : rc.bias.vals) v = dist(rng);
    return rc;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
    const LayerSpec spec = conv_spec(1, 1, 1, 1, 0);
    Tensor in = Tensor::real(Shape{1, 1, 1, 1});
    in.vals = {2.75};
    Tensor w = Tensor::real(Shape{1, 1, 1, 1});
    w.vals = {1.0};
    Tensor b = Tensor::real(Shape{1, 1, 1, 1});
    CHECK(conv2d(in, w, b, spec).vals[0] == 2.75);
    CHECK(conv2d_reference(in, w, b, spec).vals[0] == 2.75);
}

TEST_CASE("conv2d all-ones 3x3 sums to 9") {
    const LayerSpec spec = conv_spec(1, 1, 3, 1, 0);
    Tensor in = Tensor::real(Shape{1, 1, 3, 3});
    for (double& v : in.vals) v = 1.0;
    Tensor w = Tensor::real(Shape{1, 1, 3, 3});
    for (double& v : w.vals) v = 1.0;
    Tensor b = Tensor::real(Shape{1, 1, 1, 1});
    const Tensor out = conv2d(in, w, b, spec);
    CHECK(out.shape == Shape{1, 1, 1, 1});
    CHECK(out.vals[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d matches naive reference on random layers") {
    std::mt19937_64 rng(42);
    for (int it = 0; it < 60; ++it) {
        const RandomConv rc = random_real_conv(rng);
        const Tensor ref = conv2d_reference(rc.input, rc.weights, rc.bias, rc.spec);
        const Tensor opt = conv2d(rc.input, rc.weights, rc.bias, rc.spec);
        REQUIRE(ref.shape == opt.shape);
        double max_diff = 0;
        for (std::size_t i = 0; i < ref.vals.size(); ++i) {
            max_diff = std::max(max_diff, std::fabs(ref.vals[i] - opt.vals[i]));
        }
        CHECK(max_diff <= 1e-12);
    }
}

TEST_CASE("conv2d fixed mode bit-matches the reference") {
    std::mt19937_64 rng(43);
    for (int it = 0; it < 40; ++it) {
        RandomConv rc = random_real_conv(rng);
        rc.spec.q_in = QFormat{16, 12};
        rc.spec.q_weight = QFormat{16, 12};
        rc.spec.q_out = QFormat{16, 10};
        const QFormat bias_q{32, 24};
        const Tensor in_q = quantize_tensor(rc.input, *rc.spec.q_in);
        const Tensor w_q = quantize_tensor(rc.weights, *rc.spec.q_weight);
        const Tensor b_q = quantize_tensor(rc.bias, bias_q);
        const Tensor ref = conv2d_reference(in_q, w_q, b_q, rc.spec);
        const Tensor opt = conv2d(in_q, w_q, b_q, rc.spec);
        CHECK(ref.raw == opt.raw);
        CHECK(ref.qf == opt.qf);
    }
}

TEST_CASE("conv2d is bit-identical across worker counts") {
    std::mt19937_64 rng(48);
    const RandomConv rc = random_real_conv(rng);
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const Tensor one = conv2d(rc.input, rc.weights, rc.bias, rc.spec);
    omp_set_num_threads(4);
    const Tensor four = conv2d(rc.input, rc.weights, rc.bias, rc.spec);
    omp_set_num_threads(saved);
    CHECK(one.vals == four.vals);
}

TEST_CASE("conv2d shape errors name the layer") {
    const LayerSpec spec = conv_spec(2, 3, 3, 1, 1, "conv_bad");
    Tensor in = Tensor::real(Shape{1, 2, 4, 4});  // wrong channel count
    Tensor w = Tensor::real(Shape{2, 3, 3, 3});
    Tensor b = Tensor::real(Shape{1, 2, 1, 1});
    CHECK_THROWS_WITH_AS(conv2d(in, w, b, spec), doctest::Contains("conv_bad"),
                         std::runtime_error);
}

TEST_CASE("fixed/real consistency bound") {
    std::mt19937_64 rng(44);
    for (int it = 0; it < 20; ++it) {
        RandomConv rc = random_real_conv(rng);
        for (double& v : rc.bias.vals) v *= 0.25;
        // uniform fractional precision; wide words give integer headroom so
        // only rounding separates the two modes
        const int frac = 12;
        rc.spec.q_in = QFormat{32, frac};
        rc.spec.q_weight = QFormat{32, frac};
        rc.spec.q_out = QFormat{32, frac};
        const Tensor in_q = quantize_tensor(rc.input, *rc.spec.q_in);
        const Tensor w_q = quantize_tensor(rc.weights, *rc.spec.q_weight);
        const Tensor b_q = quantize_tensor(rc.bias, QFormat{32, 2 * frac});
        const Tensor fixed = conv2d(in_q, w_q, b_q, rc.spec);
        const Tensor real = conv2d(rc.input, rc.weights, rc.bias, rc.spec);
        const double bound =
            (rc.spec.in_channels * rc.spec.kernel * rc.spec.kernel + 1) * std::ldexp(1.0, -frac);
        for (std::size_t i = 0; i < real.vals.size(); ++i) {
            const double fx = dequantize_value(fixed.raw[i], fixed.qf);
            CHECK(std::fabs(fx - real.vals[i]) <= bound);
        }
    }
}

TEST_CASE("conv2d linearity in real mode") {
    std::mt19937_64 rng(45);
    const RandomConv rc = random_real_conv(rng);
    Tensor zero_bias = rc.bias;
    for (double& v : zero_bias.vals) v = 0.0;
    Tensor scaled = rc.input;
    const double a = 3.25;
    for (double& v : scaled.vals) v *= a;
    const Tensor lhs = conv2d(scaled, rc.weights, zero_bias, rc.spec);
    const Tensor rhs = conv2d(rc.input, rc.weights, zero_bias, rc.spec);
    for (std::size_t i = 0; i < lhs.vals.size(); ++i) {
        CHECK(lhs.vals[i] == doctest::Approx(a * rhs.vals[i]).epsilon(1e-6));
    }
}

TEST_CASE("relu") {
    Tensor t = Tensor::real(Shape{1, 1, 1, 3});
    t.vals = {-1.0, 0.0, 2.0};
    CHECK(relu(t).vals == std::vector<double>{0.0, 0.0, 2.0});

    Tensor neg = Tensor::real(Shape{1, 2, 2, 2});
    for (double& v : neg.vals) v = -5.0;
    for (double v : relu(neg).vals) CHECK(v == 0.0);

    Tensor q = Tensor::fixed(Shape{1, 1, 1, 2}, QFormat{16, 8});
    q.raw = {-384, 384};
    CHECK(relu(q).raw == std::vector<std::int32_t>{0, 384});
}

TEST_CASE("relu on raws equals dequantize-relu-requantize") {
    std::mt19937_64 rng(46);
    const QFormat q{16, 9};
    for (int it = 0; it < 1000; ++it) {
        const std::int32_t raw =
            static_cast<std::int32_t>(rng() % 65536) - 32768;
        Tensor t = Tensor::fixed(Shape{1, 1, 1, 1}, q);
        t.raw = {raw};
        const std::int32_t via_raw = relu(t).raw[0];
        const std::int32_t via_real =
            quantize_value(std::max(0.0, dequantize_value(raw, q)), q);
        CHECK(via_raw == via_real);
    }
}

TEST_CASE("maxpool2d") {
    Tensor t = Tensor::real(Shape{1, 1, 2, 2});
    t.vals = {1, 2, 3, 4};
    const Tensor out = maxpool2d(t, 2, 2);
    CHECK(out.shape == Shape{1, 1, 1, 1});
    CHECK(out.vals[0] == 4.0);

    Tensor c = Tensor::real(Shape{1, 2, 4, 4});
    for (double& v : c.vals) v = 0.7;
    const Tensor pc = maxpool2d(c, 2, 2);
    CHECK(pc.shape == Shape{1, 2, 2, 2});
    for (double v : pc.vals) CHECK(v == 0.7);

    CHECK_THROWS_AS(maxpool2d(t, 3, 1), std::runtime_error);
}

TEST_CASE("maxpool2d equals brute-force per-window max") {
    std::mt19937_64 rng(47);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    Tensor t = Tensor::real(Shape{1, 1, 4, 4});
    for (double& v : t.vals) v = dist(rng);
    const Tensor out = maxpool2d(t, 2, 2);
    for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
        double best = -1e30;
        for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) best = std::max(best, t.at(0, 0, 2 * r + i, 2 * c + j));
        CHECK(out.at(0, 0, r, c) == best);
    }
}

TEST_CASE("softmax") {
    const auto sym = softmax({0.0, 0.0});
    CHECK(sym[0] == doctest::Approx(0.5));
    CHECK(sym[1] == doctest::Approx(0.5));

    const auto big = softmax({1000.0, 0.0});
    CHECK(big[0] == doctest::Approx(1.0));
    CHECK(big[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(big[0]));

    // high-precision oracle for [1,2,3]
    const auto sm = softmax({1.0, 2.0, 3.0});
    const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
    const double sum = e1 + e2 + e3;
    CHECK(std::fabs(sm[0] - e1 / sum) < 1e-9);
    CHECK(std::fabs(sm[1] - e2 / sum) < 1e-9);
    CHECK(std::fabs(sm[2] - e3 / sum) < 1e-9);

    double total = 0;
    for (double v : sm) total += v;
    CHECK(std::fabs(total - 1.0) < 1e-6);
}
