#include <stdexcept>

#include "fxdetect/layers.hpp"

namespace fxdetect {

namespace detail {

void check_conv_shapes(const Tensor& input, const Tensor& weights, const Tensor& bias,
                       const LayerSpec& spec) {
    const auto fail = [&](const std::string& what) {
        throw std::runtime_error("conv layer '" + spec.name + "': " + what);
    };
    if (spec.kernel < 1 || spec.stride < 1 || spec.pad < 0) fail("bad kernel/stride/pad");
    if (input.shape.c != spec.in_channels) fail("input channel count mismatch");
    if (weights.shape.n != spec.out_channels || weights.shape.c != spec.in_channels ||
        weights.shape.h != spec.kernel || weights.shape.w != spec.kernel) {
        fail("weight tensor shape mismatch");
    }
    if (bias.count() != static_cast<std::size_t>(spec.out_channels)) fail("bias length mismatch");
    if (conv_out_dim(input.shape.h, spec.kernel, spec.stride, spec.pad) < 1 ||
        conv_out_dim(input.shape.w, spec.kernel, spec.stride, spec.pad) < 1) {
        fail("output spatial dims would be empty");
    }
    const bool fixed = input.kind == NumericKind::Fixed;
    if (fixed) {
        if (weights.kind != NumericKind::Fixed || bias.kind != NumericKind::Fixed) {
            fail("fixed-mode conv needs fixed weights and bias");
        }
        if (!spec.q_in || !spec.q_weight || !spec.q_out) fail("fixed-mode conv needs qformats");
        if (bias.qf.frac_bits > spec.q_in->frac_bits + spec.q_weight->frac_bits) {
            fail("bias frac bits exceed the accumulator scale");
        }
    } else if (weights.kind != NumericKind::Real || bias.kind != NumericKind::Real) {
        fail("real-mode conv needs real weights and bias");
    }
}

}  // namespace detail

Shape conv_output_shape(const Shape& in, const LayerSpec& spec) {
    return Shape{in.n, spec.out_channels, conv_out_dim(in.h, spec.kernel, spec.stride, spec.pad),
                 conv_out_dim(in.w, spec.kernel, spec.stride, spec.pad)};
}

Tensor conv2d_reference(const Tensor& input, const Tensor& weights, const Tensor& bias,
                        const LayerSpec& spec) {
    detail::check_conv_shapes(input, weights, bias, spec);
    const int N = spec.in_channels, M = spec.out_channels;
    const int K = spec.kernel, S = spec.stride, P = spec.pad;
    const int H = input.shape.h, W = input.shape.w;
    const Shape out_shape = conv_output_shape(input.shape, spec);

    if (input.kind == NumericKind::Real) {
        Tensor out = Tensor::real(out_shape);
        for (int b = 0; b < input.shape.n; ++b)
        for (int m = 0; m < M; ++m)
        for (int r = 0; r < out_shape.h; ++r)
        for (int c = 0; c < out_shape.w; ++c) {
            double acc = bias.vals[m];
            for (int n = 0; n < N; ++n)
            for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) {
                const int y = S * r + i - P;
                const int x = S * c + j - P;
                const double v = (y < 0 || y >= H || x < 0 || x >= W)
                                     ? 0.0
                                     : input.at(b, n, y, x);
                acc += weights.at(m, n, i, j) * v;
            }
            out.at(b, m, r, c) = acc;
        }
        return out;
    }

    const int acc_shift =
        spec.q_in->frac_bits + spec.q_weight->frac_bits - bias.qf.frac_bits;
    Tensor out = Tensor::fixed(out_shape, *spec.q_out);
    for (int b = 0; b < input.shape.n; ++b)
    for (int m = 0; m < M; ++m)
    for (int r = 0; r < out_shape.h; ++r)
    for (int c = 0; c < out_shape.w; ++c) {
        std::int64_t acc = static_cast<std::int64_t>(bias.raw[m]) << acc_shift;
        for (int n = 0; n < N; ++n)
        for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
            const int y = S * r + i - P;
            const int x = S * c + j - P;
            const std::int64_t v =
                (y < 0 || y >= H || x < 0 || x >= W) ? 0 : input.raw_at(b, n, y, x);
            acc += static_cast<std::int64_t>(weights.raw_at(m, n, i, j)) * v;
        }
        out.raw_at(b, m, r, c) = requantize_accumulator(acc, *spec.q_in, *spec.q_weight,
                                                        *spec.q_out);
    }
    return out;
}

}  // namespace fxdetect
