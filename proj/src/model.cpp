#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "fxdetect/model.hpp"

namespace fxdetect {

namespace {

std::string layer_label(std::size_t idx, const LayerSpec& spec) {
    return "layer " + std::to_string(idx) + " ('" + spec.name + "')";
}

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Softmax: return "softmax";
        case LayerKind::HeadTap: return "head_tap";
    }
    return "?";
}

LayerKind kind_from_name(const std::string& s, const std::string& ctx) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "relu") return LayerKind::Relu;
    if (s == "maxpool") return LayerKind::MaxPool;
    if (s == "softmax") return LayerKind::Softmax;
    if (s == "head_tap") return LayerKind::HeadTap;
    throw std::runtime_error(ctx + ": unknown layer kind '" + s + "'");
}

// Softmax as a layer normalizes across channels at every spatial position and
// always produces a real tensor.
Tensor softmax_layer(const Tensor& input) {
    const Tensor* src = &input;
    Tensor dq;
    if (input.kind == NumericKind::Fixed) {
        dq = dequantize_tensor(input);
        src = &dq;
    }
    Tensor out = Tensor::real(src->shape);
    std::vector<double> scores(src->shape.c);
    for (int b = 0; b < src->shape.n; ++b)
    for (int y = 0; y < src->shape.h; ++y)
    for (int x = 0; x < src->shape.w; ++x) {
        for (int c = 0; c < src->shape.c; ++c) scores[c] = src->at(b, c, y, x);
        const std::vector<double> probs = softmax(scores);
        for (int c = 0; c < src->shape.c; ++c) out.at(b, c, y, x) = probs[c];
    }
    return out;
}

}  // namespace

void validate_model(const ModelManifest& model) {
    if (model.input_shape.count() == 0) throw std::runtime_error("model: empty input shape");
    if (model.layers.size() != model.weights.size() || model.layers.size() != model.biases.size()) {
        throw std::runtime_error("model: weight/bias table size mismatch");
    }
    const bool fixed = model.mode == Mode::Fixed;
    if (fixed && !model.input_q) throw std::runtime_error("model: fixed mode without input_qformat");

    Shape cur = model.input_shape;
    std::optional<QFormat> cur_q = model.input_q;
    std::vector<std::string> tap_names;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        const std::string label = layer_label(i, spec);
        switch (spec.kind) {
            case LayerKind::Conv: {
                if (spec.in_channels != cur.c) {
                    throw std::runtime_error(label + ": expects " +
                                             std::to_string(spec.in_channels) +
                                             " input channels, chain provides " +
                                             std::to_string(cur.c));
                }
                const Tensor& w = model.weights[i];
                if (w.shape.n != spec.out_channels || w.shape.c != spec.in_channels ||
                    w.shape.h != spec.kernel || w.shape.w != spec.kernel) {
                    throw std::runtime_error(label + ": weight blob shape mismatch");
                }
                if (model.biases[i].count() != static_cast<std::size_t>(spec.out_channels)) {
                    throw std::runtime_error(label + ": bias blob length mismatch");
                }
                if (conv_out_dim(cur.h, spec.kernel, spec.stride, spec.pad) < 1 ||
                    conv_out_dim(cur.w, spec.kernel, spec.stride, spec.pad) < 1) {
                    throw std::runtime_error(label + ": output spatial dims would be empty");
                }
                if (fixed) {
                    if (!spec.q_in || !spec.q_weight || !spec.q_bias || !spec.q_out) {
                        throw std::runtime_error(label + ": fixed mode needs qin/qw/qb/qout");
                    }
                    if (!cur_q) {
                        throw std::runtime_error(label + ": no fixed format flows into this conv");
                    }
                    if (*spec.q_in != *cur_q) {
                        throw std::runtime_error(label + ": qin does not chain from upstream");
                    }
                    if (spec.q_bias->frac_bits >
                        spec.q_in->frac_bits + spec.q_weight->frac_bits) {
                        throw std::runtime_error(label + ": bias frac exceeds accumulator scale");
                    }
                    cur_q = spec.q_out;
                }
                cur = conv_output_shape(cur, spec);
                break;
            }
            case LayerKind::Relu:
            case LayerKind::HeadTap:
                break;
            case LayerKind::MaxPool:
                if (spec.window < 1 || spec.window > cur.h || spec.window > cur.w) {
                    throw std::runtime_error(label + ": pool window larger than input");
                }
                cur.h = pool_out_dim(cur.h, spec.window, spec.stride);
                cur.w = pool_out_dim(cur.w, spec.window, spec.stride);
                break;
            case LayerKind::Softmax:
                cur_q.reset();
                break;
        }
        if (spec.kind == LayerKind::HeadTap && spec.tap.empty()) {
            throw std::runtime_error(label + ": head_tap layer without a tap name");
        }
        if (!spec.tap.empty()) {
            for (const auto& existing : tap_names) {
                if (existing == spec.tap) {
                    throw std::runtime_error(label + ": duplicate tap name '" + spec.tap + "'");
                }
            }
            tap_names.push_back(spec.tap);
        }
    }

    for (const auto& tp : model.priors.taps) {
        bool found = false;
        for (const auto& name : tap_names) found = found || name == tp.tap;
        if (!found) {
            throw std::runtime_error("model: prior config references absent tap '" + tp.tap + "'");
        }
        if (tp.scales.empty() || tp.aspect_ratios.empty() || tp.fh < 1 || tp.fw < 1) {
            throw std::runtime_error("model: malformed prior tap '" + tp.tap + "'");
        }
        for (double s : tp.scales) {
            if (!(s > 0 && s <= 1)) {
                throw std::runtime_error("model: prior scale out of (0,1] on tap '" + tp.tap + "'");
            }
        }
        for (double ar : tp.aspect_ratios) {
            if (!(ar > 0)) {
                throw std::runtime_error("model: non-positive aspect ratio on tap '" + tp.tap +
                                         "'");
            }
        }
    }
}

ForwardResult forward(const ModelManifest& model, const Tensor& image, Mode mode) {
    if (!(image.shape == model.input_shape)) {
        throw std::runtime_error("forward: image shape does not match model input shape");
    }
    const bool fixed = mode == Mode::Fixed;
    if (fixed && !model.input_q) {
        throw std::runtime_error("forward: fixed mode requested but model has no input format");
    }

    Tensor x;
    if (fixed) {
        x = image.kind == NumericKind::Real ? quantize_tensor(image, *model.input_q) : image;
    } else {
        x = image.kind == NumericKind::Real ? image : dequantize_tensor(image);
    }

    ForwardResult result;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        try {
            switch (spec.kind) {
                case LayerKind::Conv: {
                    const Tensor& w = model.weights[i];
                    const Tensor& b = model.biases[i];
                    if (fixed) {
                        const Tensor wq = w.kind == NumericKind::Fixed
                                              ? w
                                              : quantize_tensor(w, *spec.q_weight);
                        const Tensor bq = b.kind == NumericKind::Fixed
                                              ? b
                                              : quantize_tensor(b, *spec.q_bias);
                        x = conv2d(x, wq, bq, spec);
                    } else {
                        const Tensor wr = w.kind == NumericKind::Real ? w : dequantize_tensor(w);
                        const Tensor br = b.kind == NumericKind::Real ? b : dequantize_tensor(b);
                        x = conv2d(x, wr, br, spec);
                    }
                    break;
                }
                case LayerKind::Relu:
                    x = relu(x);
                    break;
                case LayerKind::MaxPool:
                    x = maxpool2d(x, spec.window, spec.stride);
                    break;
                case LayerKind::Softmax:
                    x = softmax_layer(x);
                    break;
                case LayerKind::HeadTap:
                    break;
            }
        } catch (const std::exception& e) {
            throw std::runtime_error(layer_label(i, spec) + ": " + e.what());
        }
        if (!spec.tap.empty()) result.taps[spec.tap] = x;
    }
    result.output = std::move(x);
    return result;
}

namespace {

std::map<std::string, std::string> parse_kv_tokens(std::istringstream& rest,
                                                   const std::string& ctx) {
    std::map<std::string, std::string> kv;
    std::string tok;
    while (rest >> tok) {
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

int to_int(const std::string& s, const std::string& ctx) {
    try {
        return std::stoi(s);
    } catch (...) {
        throw std::runtime_error(ctx + ": bad integer '" + s + "'");
    }
}

double to_double(const std::string& s, const std::string& ctx) {
    try {
        return std::stod(s);
    } catch (...) {
        throw std::runtime_error(ctx + ": bad number '" + s + "'");
    }
}

std::vector<double> to_double_list(const std::string& s, const std::string& ctx) {
    std::vector<double> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) out.push_back(to_double(item, ctx));
    if (out.empty()) throw std::runtime_error(ctx + ": empty list");
    return out;
}

QFormat to_qformat(const std::string& s, const std::string& ctx) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw std::runtime_error(ctx + ": qformat must be W:F");
    QFormat q{to_int(s.substr(0, colon), ctx), to_int(s.substr(colon + 1), ctx)};
    if (!q.valid()) throw std::runtime_error(ctx + ": invalid qformat '" + s + "'");
    return q;
}

std::uint64_t to_hex64(const std::string& s, const std::string& ctx) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw std::runtime_error(ctx + ": bad checksum '" + s + "'");
    }
    return v;
}

std::string fmt_double(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

std::string fmt_qformat(const QFormat& q) {
    return std::to_string(q.width) + ":" + std::to_string(q.frac_bits);
}

std::string fmt_hex64(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << v;
    return out.str();
}

}  // namespace

ModelManifest load_model(const std::filesystem::path& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw std::runtime_error("cannot open manifest: " + manifest_path.string());
    const auto dir = manifest_path.parent_path();

    ModelManifest model;
    std::string line;
    std::size_t line_no = 0;
    bool saw_magic = false;
    while (std::getline(f, line)) {
        ++line_no;
        const std::string ctx = manifest_path.filename().string() + ":" + std::to_string(line_no);
        if (line.empty() || line[0] == '#') continue;
        std::istringstream in(line);
        std::string directive;
        in >> directive;
        if (!saw_magic) {
            std::string version;
            in >> version;
            if (directive != "fxmodel" || version != "1") {
                throw std::runtime_error(ctx + ": not an fxmodel v1 manifest");
            }
            saw_magic = true;
            continue;
        }
        if (directive == "mode") {
            std::string m;
            in >> m;
            if (m == "real") model.mode = Mode::Real;
            else if (m == "fixed") model.mode = Mode::Fixed;
            else throw std::runtime_error(ctx + ": unknown mode '" + m + "'");
        } else if (directive == "input") {
            in >> model.input_shape.n >> model.input_shape.c >> model.input_shape.h >>
                model.input_shape.w;
            if (!in) throw std::runtime_error(ctx + ": input needs 4 dims");
        } else if (directive == "input_qformat") {
            int width = 0, frac = 0;
            in >> width >> frac;
            if (!in) throw std::runtime_error(ctx + ": input_qformat needs width and frac");
            model.input_q = QFormat{width, frac};
        } else if (directive == "layer") {
            auto kv = parse_kv_tokens(in, ctx);
            LayerSpec spec;
            spec.kind = kind_from_name(need(kv, "kind", ctx), ctx);
            spec.name = need(kv, "name", ctx);
            if (kv.count("tap")) spec.tap = kv["tap"];
            if (spec.kind == LayerKind::Conv) {
                spec.out_channels = to_int(need(kv, "out", ctx), ctx);
                spec.in_channels = to_int(need(kv, "in", ctx), ctx);
                spec.kernel = to_int(need(kv, "k", ctx), ctx);
                spec.stride = to_int(need(kv, "s", ctx), ctx);
                spec.pad = to_int(need(kv, "p", ctx), ctx);
                spec.weights_file = need(kv, "weights", ctx);
                spec.bias_file = need(kv, "bias", ctx);
                spec.weights_checksum = to_hex64(need(kv, "wsum", ctx), ctx);
                spec.bias_checksum = to_hex64(need(kv, "bsum", ctx), ctx);
                if (kv.count("qin")) spec.q_in = to_qformat(kv["qin"], ctx);
                if (kv.count("qw")) spec.q_weight = to_qformat(kv["qw"], ctx);
                if (kv.count("qb")) spec.q_bias = to_qformat(kv["qb"], ctx);
                if (kv.count("qout")) spec.q_out = to_qformat(kv["qout"], ctx);
            } else if (spec.kind == LayerKind::MaxPool) {
                spec.window = to_int(need(kv, "window", ctx), ctx);
                spec.stride = to_int(need(kv, "stride", ctx), ctx);
            }
            model.layers.push_back(std::move(spec));
        } else if (directive == "priors") {
            auto kv = parse_kv_tokens(in, ctx);
            model.priors.image_w = to_int(need(kv, "image_w", ctx), ctx);
            model.priors.image_h = to_int(need(kv, "image_h", ctx), ctx);
            model.priors.var_center = to_double(need(kv, "var_center", ctx), ctx);
            model.priors.var_size = to_double(need(kv, "var_size", ctx), ctx);
        } else if (directive == "prior_tap") {
            auto kv = parse_kv_tokens(in, ctx);
            TapPriorSpec tp;
            tp.tap = need(kv, "tap", ctx);
            tp.fh = to_int(need(kv, "fh", ctx), ctx);
            tp.fw = to_int(need(kv, "fw", ctx), ctx);
            tp.scales = to_double_list(need(kv, "scales", ctx), ctx);
            tp.aspect_ratios = to_double_list(need(kv, "ratios", ctx), ctx);
            model.priors.taps.push_back(std::move(tp));
        } else {
            throw std::runtime_error(ctx + ": unknown directive '" + directive + "'");
        }
    }
    if (!saw_magic) throw std::runtime_error(manifest_path.string() + ": empty manifest");

    model.weights.resize(model.layers.size());
    model.biases.resize(model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        LayerSpec& spec = model.layers[i];
        if (spec.kind != LayerKind::Conv) continue;
        for (const bool is_weight : {true, false}) {
            const std::string& file = is_weight ? spec.weights_file : spec.bias_file;
            const std::uint64_t expect = is_weight ? spec.weights_checksum : spec.bias_checksum;
            const auto path = dir / file;
            if (!std::filesystem::exists(path)) {
                throw std::runtime_error(layer_label(i, spec) + ": missing blob '" + file + "'");
            }
            const std::uint64_t got = file_checksum(path);
            if (got != expect) {
                throw std::runtime_error(layer_label(i, spec) + ": checksum mismatch on blob '" +
                                         file + "' (expected " + fmt_hex64(expect) + ", got " +
                                         fmt_hex64(got) + ")");
            }
            (is_weight ? model.weights[i] : model.biases[i]) = read_tensor_blob(path);
        }
    }

    validate_model(model);
    return model;
}

void save_model(const ModelManifest& model, const std::filesystem::path& manifest_path) {
    validate_model(model);
    const auto dir = manifest_path.parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);

    ModelManifest out = model;
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
        LayerSpec& spec = out.layers[i];
        if (spec.kind != LayerKind::Conv) continue;
        if (spec.weights_file.empty()) spec.weights_file = spec.name + "_w.fxt";
        if (spec.bias_file.empty()) spec.bias_file = spec.name + "_b.fxt";
        write_tensor_blob(dir / spec.weights_file, out.weights[i]);
        write_tensor_blob(dir / spec.bias_file, out.biases[i]);
        spec.weights_checksum = file_checksum(dir / spec.weights_file);
        spec.bias_checksum = file_checksum(dir / spec.bias_file);
    }

    std::ostringstream text;
    text << "fxmodel 1\n";
    text << "mode " << (out.mode == Mode::Real ? "real" : "fixed") << "\n";
    text << "input " << out.input_shape.n << " " << out.input_shape.c << " " << out.input_shape.h
         << " " << out.input_shape.w << "\n";
    if (out.input_q) {
        text << "input_qformat " << out.input_q->width << " " << out.input_q->frac_bits << "\n";
    }
    for (const LayerSpec& spec : out.layers) {
        text << "layer kind=" << kind_name(spec.kind) << " name=" << spec.name;
        if (spec.kind == LayerKind::Conv) {
            text << " out=" << spec.out_channels << " in=" << spec.in_channels
                 << " k=" << spec.kernel << " s=" << spec.stride << " p=" << spec.pad
                 << " weights=" << spec.weights_file << " bias=" << spec.bias_file
                 << " wsum=" << fmt_hex64(spec.weights_checksum)
                 << " bsum=" << fmt_hex64(spec.bias_checksum);
            if (spec.q_in) text << " qin=" << fmt_qformat(*spec.q_in);
            if (spec.q_weight) text << " qw=" << fmt_qformat(*spec.q_weight);
            if (spec.q_bias) text << " qb=" << fmt_qformat(*spec.q_bias);
            if (spec.q_out) text << " qout=" << fmt_qformat(*spec.q_out);
        } else if (spec.kind == LayerKind::MaxPool) {
            text << " window=" << spec.window << " stride=" << spec.stride;
        }
        if (!spec.tap.empty()) text << " tap=" << spec.tap;
        text << "\n";
    }
    if (model.has_priors()) {
        text << "priors image_w=" << model.priors.image_w << " image_h=" << model.priors.image_h
             << " var_center=" << fmt_double(model.priors.var_center)
             << " var_size=" << fmt_double(model.priors.var_size) << "\n";
        for (const auto& tp : model.priors.taps) {
            text << "prior_tap tap=" << tp.tap << " fh=" << tp.fh << " fw=" << tp.fw << " scales=";
            for (std::size_t k = 0; k < tp.scales.size(); ++k) {
                text << (k ? "," : "") << fmt_double(tp.scales[k]);
            }
            text << " ratios=";
            for (std::size_t k = 0; k < tp.aspect_ratios.size(); ++k) {
                text << (k ? "," : "") << fmt_double(tp.aspect_ratios[k]);
            }
            text << "\n";
        }
    }

    const auto tmp = manifest_path.parent_path() / (manifest_path.filename().string() + ".tmp");
    {
        std::ofstream fout(tmp, std::ios::trunc);
        if (!fout) throw std::runtime_error("cannot write manifest: " + tmp.string());
        fout << text.str();
    }
    std::filesystem::rename(tmp, manifest_path);
}

}  // namespace fxdetect
