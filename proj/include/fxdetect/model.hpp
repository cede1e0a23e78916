#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fxdetect/layers.hpp"
#include "fxdetect/ssd.hpp"

namespace fxdetect {

enum class Mode { Real, Fixed };

// Ordered layer graph plus its weight/bias tensors and the detection-head
// prior configuration. Weight tensors are real in a float model and fixed in
// a quantized one; forward() can run either arithmetic mode by quantizing or
// dequantizing parameters on entry.
struct ModelManifest {
    Mode mode = Mode::Real;
    Shape input_shape{};
    std::optional<QFormat> input_q;
    std::vector<LayerSpec> layers;
    std::vector<Tensor> weights;  // indexed per layer; empty tensor for non-conv layers
    std::vector<Tensor> biases;
    PriorConfig priors;  // taps empty when the model has no detection head

    bool has_priors() const { return !priors.taps.empty(); }
};

struct ForwardResult {
    std::map<std::string, Tensor> taps;
    Tensor output;
};

// Shape chaining, tap references, fixed-mode format presence and continuity.
// Throws with the layer index/name on the first violation.
void validate_model(const ModelManifest& model);

// Executes layers in order; returns the declared taps plus the final output.
// The image arrives as a real tensor and is quantized to the model input
// format in fixed mode.
ForwardResult forward(const ModelManifest& model, const Tensor& image, Mode mode);

// Manifest text file plus FXT1 blobs next to it; blob checksums are verified
// on load and each failure names the offending file.
ModelManifest load_model(const std::filesystem::path& manifest_path);
void save_model(const ModelManifest& model, const std::filesystem::path& manifest_path);

}  // namespace fxdetect
