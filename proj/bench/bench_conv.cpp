// Times the OpenMP conv2d kernel against the serial naive reference on a few
// layer shapes and cross-checks their outputs. Build: cmake target fxbench.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "fxdetect/layers.hpp"
#include "fxdetect/tile.hpp"

using namespace fxdetect;
using clock_type = std::chrono::steady_clock;

namespace {

struct BenchCase {
    const char* name;
    int n_in, m_out, k, s, p, h, w;
};

double time_ms(const std::function<Tensor()>& fn, Tensor& out, int reps) {
    out = fn();  // warm-up, also the result we check
    const auto t0 = clock_type::now();
    for (int i = 0; i < reps; ++i) {
        const Tensor v = fn();
        (void)v;
    }
    const auto t1 = clock_type::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
    const std::vector<BenchCase> cases = {
        {"small 3x3", 16, 32, 3, 1, 1, 32, 32},
        {"mid 3x3", 64, 64, 3, 1, 1, 56, 56},
        {"strided 5x5", 32, 48, 5, 2, 2, 64, 64},
        {"wide 1x1", 128, 128, 1, 1, 0, 28, 28},
    };

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);

    std::printf("%-12s %12s %12s %9s %9s  %s\n", "case", "gmacs", "serial_ms", "omp_ms",
                "speedup", "max_abs_diff");
    for (const auto& bc : cases) {
        LayerSpec spec;
        spec.kind = LayerKind::Conv;
        spec.name = bc.name;
        spec.in_channels = bc.n_in;
        spec.out_channels = bc.m_out;
        spec.kernel = bc.k;
        spec.stride = bc.s;
        spec.pad = bc.p;

        Tensor input = Tensor::real(Shape{1, bc.n_in, bc.h, bc.w});
        Tensor weights = Tensor::real(Shape{bc.m_out, bc.n_in, bc.k, bc.k});
        Tensor bias = Tensor::real(Shape{1, bc.m_out, 1, 1});
        for (double& v : input.vals) v = dist(rng);
        for (double& v : weights.vals) v = dist(rng);
        for (double& v : bias.vals) v = dist(rng);

        const int reps = 3;
        Tensor ref, opt;
        const double serial_ms =
            time_ms([&] { return conv2d_reference(input, weights, bias, spec); }, ref, reps);
        const double omp_ms = time_ms([&] { return conv2d(input, weights, bias, spec); }, opt,
                                      reps);

        double max_diff = 0.0;
        for (std::size_t i = 0; i < ref.vals.size(); ++i) {
            max_diff = std::max(max_diff, std::fabs(ref.vals[i] - opt.vals[i]));
        }
        const double gmacs =
            static_cast<double>(layer_ops(spec, input.shape)) / 2.0 / 1e9;
        std::printf("%-12s %12.4f %12.3f %9.3f %8.2fx  %g\n", bc.name, gmacs, serial_ms, omp_ms,
                    serial_ms / omp_ms, max_diff);
    }
    return 0;
}
