#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fxdetect/tensor.hpp"

namespace fxdetect {

enum class LayerKind { Conv, Relu, MaxPool, Softmax, HeadTap };

struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    std::string name;

    // conv
    int out_channels = 0;
    int in_channels = 0;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    std::string weights_file, bias_file;
    std::uint64_t weights_checksum = 0, bias_checksum = 0;

    // maxpool
    int window = 0;

    // non-empty: this layer's output is published under that tap name
    std::string tap;

    // fixed mode formats; q_bias carries the accumulator scale
    std::optional<QFormat> q_in, q_weight, q_bias, q_out;
};

inline int conv_out_dim(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }
inline int pool_out_dim(int in, int window, int s) { return (in - window) / s + 1; }

Shape conv_output_shape(const Shape& in, const LayerSpec& spec);

// Direct convolution, zero padding. Real tensors accumulate in double; fixed
// tensors accumulate raw products in int64 and requantize once at writeback.
// Per output element the summation order is input-channel-major, then kernel
// row, then kernel column. OpenMP-parallel over output channels and rows;
// bit-identical across worker counts because each output element is reduced
// serially.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              const LayerSpec& spec);

// Serial naive 6-loop reference with the same contract. Kept as the oracle
// the parallel kernel and the tile simulator are checked against.
Tensor conv2d_reference(const Tensor& input, const Tensor& weights, const Tensor& bias,
                        const LayerSpec& spec);

// Elementwise max(0, x); fixed tensors use a sign test on raw values.
Tensor relu(const Tensor& input);

// Square-window max pooling; output dims floor((in - window)/stride) + 1.
Tensor maxpool2d(const Tensor& input, int window, int stride);

// Exp-normalized with max subtraction.
std::vector<double> softmax(const std::vector<double>& scores);

}  // namespace fxdetect
