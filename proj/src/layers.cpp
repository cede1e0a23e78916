#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fxdetect/layers.hpp"

namespace fxdetect {

namespace detail {
void check_conv_shapes(const Tensor& input, const Tensor& weights, const Tensor& bias,
                       const LayerSpec& spec);
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              const LayerSpec& spec) {
    detail::check_conv_shapes(input, weights, bias, spec);
    const int N = spec.in_channels, M = spec.out_channels;
    const int K = spec.kernel, S = spec.stride, P = spec.pad;
    const int H = input.shape.h, W = input.shape.w;
    const Shape out_shape = conv_output_shape(input.shape, spec);
    const int OH = out_shape.h, OW = out_shape.w;

    if (input.kind == NumericKind::Real) {
        Tensor out = Tensor::real(out_shape);
        for (int b = 0; b < input.shape.n; ++b) {
            const double* in_base = input.vals.data() + input.index(b, 0, 0, 0);
            double* out_base = out.vals.data() + out.index(b, 0, 0, 0);
#pragma omp parallel for collapse(2) schedule(static)
            for (int m = 0; m < M; ++m)
            for (int r = 0; r < OH; ++r) {
                const int y0 = S * r - P;
                const int i_lo = std::max(0, -y0);
                const int i_hi = std::min(K, H - y0);
                const double* w_m = weights.vals.data() + weights.index(m, 0, 0, 0);
                for (int c = 0; c < OW; ++c) {
                    const int x0 = S * c - P;
                    const int j_lo = std::max(0, -x0);
                    const int j_hi = std::min(K, W - x0);
                    double acc = bias.vals[m];
                    for (int n = 0; n < N; ++n) {
                        const double* in_n = in_base + static_cast<std::size_t>(n) * H * W;
                        const double* w_n = w_m + static_cast<std::size_t>(n) * K * K;
                        for (int i = i_lo; i < i_hi; ++i) {
                            const double* in_row = in_n + static_cast<std::size_t>(y0 + i) * W + x0;
                            const double* w_row = w_n + static_cast<std::size_t>(i) * K;
                            for (int j = j_lo; j < j_hi; ++j) acc += w_row[j] * in_row[j];
                        }
                    }
                    out_base[(static_cast<std::size_t>(m) * OH + r) * OW + c] = acc;
                }
            }
        }
        return out;
    }

    const int acc_shift = spec.q_in->frac_bits + spec.q_weight->frac_bits - bias.qf.frac_bits;
    Tensor out = Tensor::fixed(out_shape, *spec.q_out);
    for (int b = 0; b < input.shape.n; ++b) {
        const std::int32_t* in_base = input.raw.data() + input.index(b, 0, 0, 0);
        std::int32_t* out_base = out.raw.data() + out.index(b, 0, 0, 0);
#pragma omp parallel for collapse(2) schedule(static)
        for (int m = 0; m < M; ++m)
        for (int r = 0; r < OH; ++r) {
            const int y0 = S * r - P;
            const int i_lo = std::max(0, -y0);
            const int i_hi = std::min(K, H - y0);
            const std::int32_t* w_m = weights.raw.data() + weights.index(m, 0, 0, 0);
            for (int c = 0; c < OW; ++c) {
                const int x0 = S * c - P;
                const int j_lo = std::max(0, -x0);
                const int j_hi = std::min(K, W - x0);
                std::int64_t acc = static_cast<std::int64_t>(bias.raw[m]) << acc_shift;
                for (int n = 0; n < N; ++n) {
                    const std::int32_t* in_n = in_base + static_cast<std::size_t>(n) * H * W;
                    const std::int32_t* w_n = w_m + static_cast<std::size_t>(n) * K * K;
                    for (int i = i_lo; i < i_hi; ++i) {
                        const std::int32_t* in_row =
                            in_n + static_cast<std::size_t>(y0 + i) * W + x0;
                        const std::int32_t* w_row = w_n + static_cast<std::size_t>(i) * K;
                        for (int j = j_lo; j < j_hi; ++j) {
                            acc += static_cast<std::int64_t>(w_row[j]) * in_row[j];
                        }
                    }
                }
                out_base[(static_cast<std::size_t>(m) * OH + r) * OW + c] =
                    requantize_accumulator(acc, *spec.q_in, *spec.q_weight, *spec.q_out);
            }
        }
    }
    return out;
}

Tensor relu(const Tensor& input) {
    Tensor out = input;
    if (input.kind == NumericKind::Real) {
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < out.vals.size(); ++i) {
            out.vals[i] = std::max(0.0, out.vals[i]);
        }
    } else {
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < out.raw.size(); ++i) {
            if (out.raw[i] < 0) out.raw[i] = 0;
        }
    }
    return out;
}

Tensor maxpool2d(const Tensor& input, int window, int stride) {
    if (window < 1 || stride < 1) throw std::invalid_argument("maxpool2d: bad window/stride");
    if (window > input.shape.h || window > input.shape.w) {
        throw std::runtime_error("maxpool2d: window larger than input");
    }
    const Shape out_shape{input.shape.n, input.shape.c,
                          pool_out_dim(input.shape.h, window, stride),
                          pool_out_dim(input.shape.w, window, stride)};
    const bool real = input.kind == NumericKind::Real;
    Tensor out = real ? Tensor::real(out_shape) : Tensor::fixed(out_shape, input.qf);
    for (int b = 0; b < out_shape.n; ++b)
    for (int ch = 0; ch < out_shape.c; ++ch)
    for (int r = 0; r < out_shape.h; ++r)
    for (int c = 0; c < out_shape.w; ++c) {
        if (real) {
            double best = input.at(b, ch, r * stride, c * stride);
            for (int i = 0; i < window; ++i)
            for (int j = 0; j < window; ++j) {
                best = std::max(best, input.at(b, ch, r * stride + i, c * stride + j));
            }
            out.at(b, ch, r, c) = best;
        } else {
            std::int32_t best = input.raw_at(b, ch, r * stride, c * stride);
            for (int i = 0; i < window; ++i)
            for (int j = 0; j < window; ++j) {
                best = std::max(best, input.raw_at(b, ch, r * stride + i, c * stride + j));
            }
            out.raw_at(b, ch, r, c) = best;
        }
    }
    return out;
}

std::vector<double> softmax(const std::vector<double>& scores) {
    if (scores.empty()) throw std::invalid_argument("softmax: empty input");
    const double m = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

}  // namespace fxdetect
