#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fxdetect/quantize.hpp"

namespace fxdetect {

namespace {

Tensor real_weights(const Tensor& t) {
    return t.kind == NumericKind::Real ? t : dequantize_tensor(t);
}

// per-image output ranges for every layer, plus the input range at index 0
std::vector<DynamicRange> observe_ranges(const ModelManifest& model, const Tensor& image) {
    std::vector<DynamicRange> ranges(model.layers.size() + 1);
    Tensor x = image.kind == NumericKind::Real ? image : dequantize_tensor(image);
    for (double v : x.vals) ranges[0].include(v);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        switch (spec.kind) {
            case LayerKind::Conv:
                x = conv2d(x, real_weights(model.weights[i]), real_weights(model.biases[i]), spec);
                break;
            case LayerKind::Relu:
                x = relu(x);
                break;
            case LayerKind::MaxPool:
                x = maxpool2d(x, spec.window, spec.stride);
                break;
            case LayerKind::Softmax: {
                Tensor probs;
                // softmax layer output is bounded in [0,1]; still observed
                std::vector<double> scores(x.shape.c);
                probs = Tensor::real(x.shape);
                for (int b = 0; b < x.shape.n; ++b)
                for (int y = 0; y < x.shape.h; ++y)
                for (int px = 0; px < x.shape.w; ++px) {
                    for (int c = 0; c < x.shape.c; ++c) scores[c] = x.at(b, c, y, px);
                    const auto sm = softmax(scores);
                    for (int c = 0; c < x.shape.c; ++c) probs.at(b, c, y, px) = sm[c];
                }
                x = std::move(probs);
                break;
            }
            case LayerKind::HeadTap:
                break;
        }
        for (double v : x.vals) ranges[i + 1].include(v);
    }
    return ranges;
}

}  // namespace

CalibrationReport extract_dynamic_range(const ModelManifest& model,
                                        const std::vector<Tensor>& images) {
    if (images.empty()) {
        throw std::invalid_argument("extract_dynamic_range: empty calibration set");
    }

    std::vector<std::vector<DynamicRange>> per_image(images.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < images.size(); ++i) {
        per_image[i] = observe_ranges(model, images[i]);
    }

    std::vector<DynamicRange> observed(model.layers.size() + 1);
    for (const auto& img_ranges : per_image) {
        for (std::size_t k = 0; k < observed.size(); ++k) observed[k].merge(img_ranges[k]);
    }

    CalibrationReport report;
    report.sample_count = static_cast<int>(images.size());
    report.input_range = observed[0];
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        if (spec.kind != LayerKind::Conv) continue;
        LayerCalibration cal;
        cal.layer_name = spec.name;
        const Tensor w = real_weights(model.weights[i]);
        for (double v : w.vals) cal.param_range.include(v);
        // feature range taken after the relu that follows, when one does
        const bool relu_next =
            i + 1 < model.layers.size() && model.layers[i + 1].kind == LayerKind::Relu;
        cal.feature_range = observed[relu_next ? i + 2 : i + 1];
        report.layers.push_back(std::move(cal));
    }
    return report;
}

void allocate_qformats(CalibrationReport& report, int width) {
    report.width = width;
    report.input_q = derive_qformat(report.input_range, width, "model input");
    for (auto& cal : report.layers) {
        cal.weight_q = derive_qformat(cal.param_range, width, "weights of " + cal.layer_name);
        cal.activation_q =
            derive_qformat(cal.feature_range, width, "features of " + cal.layer_name);
    }
}

ModelManifest quantize_model(const ModelManifest& model, const CalibrationReport& report) {
    if (!report.input_q) {
        throw std::invalid_argument("quantize_model: report has no formats; run allocate_qformats");
    }
    ModelManifest out = model;
    out.mode = Mode::Fixed;
    out.input_q = report.input_q;

    std::size_t conv_seen = 0;
    std::optional<QFormat> cur_q = report.input_q;
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
        LayerSpec& spec = out.layers[i];
        switch (spec.kind) {
            case LayerKind::Conv: {
                if (conv_seen >= report.layers.size()) {
                    throw std::runtime_error("quantize_model: report missing entry for layer '" +
                                             spec.name + "'");
                }
                const LayerCalibration& cal = report.layers[conv_seen++];
                if (cal.layer_name != spec.name) {
                    throw std::runtime_error("quantize_model: report entry '" + cal.layer_name +
                                             "' does not match layer '" + spec.name + "'");
                }
                if (!cal.weight_q || !cal.activation_q) {
                    throw std::runtime_error("quantize_model: no formats for layer '" + spec.name +
                                             "'");
                }
                if (!cur_q) {
                    throw std::runtime_error("quantize_model: no fixed format flows into '" +
                                             spec.name + "'");
                }
                spec.q_in = cur_q;
                spec.q_weight = cal.weight_q;
                spec.q_out = cal.activation_q;
                spec.q_bias = QFormat{
                    32, std::min(spec.q_in->frac_bits + spec.q_weight->frac_bits, 31)};
                out.weights[i] = quantize_tensor(real_weights(model.weights[i]), *spec.q_weight);
                out.biases[i] = quantize_tensor(real_weights(model.biases[i]), *spec.q_bias);
                spec.weights_file = spec.name + "_qw.fxt";
                spec.bias_file = spec.name + "_qb.fxt";
                cur_q = spec.q_out;
                break;
            }
            case LayerKind::Softmax:
                cur_q.reset();
                break;
            case LayerKind::Relu:
            case LayerKind::MaxPool:
            case LayerKind::HeadTap:
                break;
        }
    }
    if (conv_seen != report.layers.size()) {
        throw std::runtime_error("quantize_model: report has more layers than the model");
    }
    validate_model(out);
    return out;
}

namespace {

std::string fmt_double(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

std::string fmt_qformat(const QFormat& q) {
    return std::to_string(q.width) + ":" + std::to_string(q.frac_bits);
}

QFormat parse_qformat(const std::string& s, const std::string& ctx) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw std::runtime_error(ctx + ": qformat must be W:F");
    QFormat q{std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
    if (!q.valid()) throw std::runtime_error(ctx + ": invalid qformat '" + s + "'");
    return q;
}

std::map<std::string, std::string> kv_tokens(std::istringstream& in, const std::string& ctx) {
    std::map<std::string, std::string> kv;
    std::string tok;
    while (in >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(ctx + ": expected key=value, got '" + tok + "'");
        }
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
}

std::string need(const std::map<std::string, std::string>& kv, const std::string& key,
                 const std::string& ctx) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(ctx + ": missing '" + key + "'");
    return it->second;
}

}  // namespace

void write_calibration_report(const std::filesystem::path& path,
                              const CalibrationReport& report) {
    std::ostringstream text;
    text << "fxcalib 1\n";
    text << "samples " << report.sample_count << "\n";
    text << "width " << report.width << "\n";
    text << "input min_abs=" << fmt_double(report.input_range.min_abs)
         << " max_abs=" << fmt_double(report.input_range.max_abs);
    if (report.input_q) text << " qformat=" << fmt_qformat(*report.input_q);
    text << "\n";
    for (const auto& cal : report.layers) {
        text << "layer name=" << cal.layer_name
             << " param_min=" << fmt_double(cal.param_range.min_abs)
             << " param_max=" << fmt_double(cal.param_range.max_abs)
             << " feat_min=" << fmt_double(cal.feature_range.min_abs)
             << " feat_max=" << fmt_double(cal.feature_range.max_abs);
        if (cal.weight_q) text << " qw=" << fmt_qformat(*cal.weight_q);
        if (cal.activation_q) text << " qout=" << fmt_qformat(*cal.activation_q);
        text << "\n";
    }
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write calibration report: " + tmp.string());
        f << text.str();
    }
    std::filesystem::rename(tmp, path);
}

CalibrationReport read_calibration_report(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open calibration report: " + path.string());
    CalibrationReport report;
    std::string line;
    std::size_t line_no = 0;
    bool saw_magic = false;
    while (std::getline(f, line)) {
        ++line_no;
        const std::string ctx = path.filename().string() + ":" + std::to_string(line_no);
        if (line.empty() || line[0] == '#') continue;
        std::istringstream in(line);
        std::string directive;
        in >> directive;
        if (!saw_magic) {
            std::string version;
            in >> version;
            if (directive != "fxcalib" || version != "1") {
                throw std::runtime_error(ctx + ": not an fxcalib v1 report");
            }
            saw_magic = true;
            continue;
        }
        if (directive == "samples") {
            in >> report.sample_count;
        } else if (directive == "width") {
            in >> report.width;
        } else if (directive == "input") {
            auto kv = kv_tokens(in, ctx);
            report.input_range.min_abs = std::stod(need(kv, "min_abs", ctx));
            report.input_range.max_abs = std::stod(need(kv, "max_abs", ctx));
            if (kv.count("qformat")) report.input_q = parse_qformat(kv["qformat"], ctx);
        } else if (directive == "layer") {
            auto kv = kv_tokens(in, ctx);
            LayerCalibration cal;
            cal.layer_name = need(kv, "name", ctx);
            cal.param_range.min_abs = std::stod(need(kv, "param_min", ctx));
            cal.param_range.max_abs = std::stod(need(kv, "param_max", ctx));
            cal.feature_range.min_abs = std::stod(need(kv, "feat_min", ctx));
            cal.feature_range.max_abs = std::stod(need(kv, "feat_max", ctx));
            if (kv.count("qw")) cal.weight_q = parse_qformat(kv["qw"], ctx);
            if (kv.count("qout")) cal.activation_q = parse_qformat(kv["qout"], ctx);
            report.layers.push_back(std::move(cal));
        } else {
            throw std::runtime_error(ctx + ": unknown directive '" + directive + "'");
        }
    }
    if (!saw_magic) throw std::runtime_error(path.string() + ": empty report");
    return report;
}

std::vector<DetectionRecord> run_detector(
    const ModelManifest& model, const std::vector<std::pair<std::string, Tensor>>& images,
    const DetectParams& params) {
    if (!model.has_priors()) {
        throw std::runtime_error("run_detector: model has no detection head configuration");
    }
    std::vector<std::vector<DetectionRecord>> per_image(images.size());
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < images.size(); ++i) {
        try {
            const ForwardResult fwd = forward(model, images[i].second, model.mode);
            const std::vector<Detection> dets = detect(fwd.taps, model.priors, params);
            auto& recs = per_image[i];
            recs.reserve(dets.size());
            for (const auto& d : dets) {
                DetectionRecord r;
                r.image_id = images[i].first;
                r.x1 = d.box.x1() * model.priors.image_w;
                r.y1 = d.box.y1() * model.priors.image_h;
                r.x2 = d.box.x2() * model.priors.image_w;
                r.y2 = d.box.y2() * model.priors.image_h;
                r.score = d.score;
                recs.push_back(std::move(r));
            }
        } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<DetectionRecord> out;
    for (auto& recs : per_image) {
        out.insert(out.end(), recs.begin(), recs.end());
    }
    return out;
}

ModelComparison compare_models(const ModelManifest& float_model, const ModelManifest& quant_model,
                               const std::vector<std::pair<std::string, Tensor>>& images,
                               const std::vector<GroundTruthBox>& annotations,
                               const EvalConfig& eval_cfg, const DetectParams& det_params) {
    ModelComparison cmp;
    const auto float_dets = run_detector(float_model, images, det_params);
    const auto quant_dets = run_detector(quant_model, images, det_params);
    cmp.float_eval = evaluate_detections(float_dets, annotations, eval_cfg);
    cmp.quant_eval = evaluate_detections(quant_dets, annotations, eval_cfg);
    cmp.delta_percent = cmp.quant_eval.lamr_percent - cmp.float_eval.lamr_percent;
    return cmp;
}

}  // namespace fxdetect
