#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fxdetect/eval.hpp"
#include "fxdetect/model.hpp"
#include "fxdetect/ssd.hpp"

namespace fxdetect {

struct LayerCalibration {
    std::string layer_name;
    DynamicRange param_range;    // weights
    DynamicRange feature_range;  // layer output, post-activation when a relu follows
    std::optional<QFormat> weight_q;
    std::optional<QFormat> activation_q;
};

struct CalibrationReport {
    int sample_count = 0;
    int width = 16;
    DynamicRange input_range;
    std::optional<QFormat> input_q;
    std::vector<LayerCalibration> layers;  // one entry per conv layer
};

// Parameter ranges straight from the weights; feature ranges as the max/min
// absolute activation observed across all calibration images at each layer
// output. Runs the model in real mode.
CalibrationReport extract_dynamic_range(const ModelManifest& model,
                                        const std::vector<Tensor>& images);

// Fills the per-layer QFormats at a uniform width via derive_qformat.
void allocate_qformats(CalibrationReport& report, int width = 16);

// Quantizes weights and biases into fixed tensors, assigns chained per-layer
// formats, flips the mode flag; structure otherwise unchanged. Biases take the
// accumulator scale (input frac + weight frac, capped at 31 fractional bits in
// 32-bit storage). Accepts an already-fixed model, in which case parameters
// pass through dequantize/quantize, which is the identity for equal formats.
ModelManifest quantize_model(const ModelManifest& model, const CalibrationReport& report);

void write_calibration_report(const std::filesystem::path& path, const CalibrationReport& report);
CalibrationReport read_calibration_report(const std::filesystem::path& path);

struct ModelComparison {
    EvalResult float_eval;
    EvalResult quant_eval;
    double delta_percent = 0;  // quant LAMR minus float LAMR, percentage points
};

// Runs both models over the images, evaluates both detection sets against the
// annotations, and reports the log-average miss rate delta.
ModelComparison compare_models(const ModelManifest& float_model,
                               const ModelManifest& quant_model,
                               const std::vector<std::pair<std::string, Tensor>>& images,
                               const std::vector<GroundTruthBox>& annotations,
                               const EvalConfig& eval_cfg, const DetectParams& det_params);

// Shared by compare_models and the CLI: forward + detection head over a set of
// named images, detections reported in pixel coordinates. Images may be
// processed by parallel workers; output order follows input order.
std::vector<DetectionRecord> run_detector(const ModelManifest& model,
                                          const std::vector<std::pair<std::string, Tensor>>& images,
                                          const DetectParams& params);

}  // namespace fxdetect
