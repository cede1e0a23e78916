#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fxdetect/fixture.hpp"
#include "fxdetect/image.hpp"
#include "fxdetect/quantize.hpp"
#include "fxdetect/tile.hpp"

namespace fs = std::filesystem;
using namespace fxdetect;

namespace {

// positional image arguments: files as-is, directories expanded sorted
std::vector<fs::path> collect_images(const std::vector<std::string>& args) {
    std::vector<fs::path> out;
    for (const auto& a : args) {
        const fs::path p(a);
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::directory_iterator(p)) {
                const auto ext = e.path().extension().string();
                if (ext == ".pgm" || ext == ".ppm" || ext == ".fxt") found.push_back(e.path());
            }
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else if (fs::exists(p)) {
            out.push_back(p);
        } else {
            throw std::runtime_error("no such image or directory: " + a);
        }
    }
    if (out.empty()) throw std::runtime_error("no input images given");
    return out;
}

std::vector<std::pair<std::string, Tensor>> load_named_images(const std::vector<fs::path>& paths) {
    std::vector<std::pair<std::string, Tensor>> images;
    images.reserve(paths.size());
    for (const auto& p : paths) images.emplace_back(p.stem().string(), load_image(p));
    return images;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write: " + tmp.string());
        f << text;
    }
    fs::rename(tmp, path);
}

int cmd_priors(const std::string& model_path, const std::string& out_path) {
    const ModelManifest model = load_model(model_path);
    if (!model.has_priors()) throw std::runtime_error("model has no prior configuration");
    const auto priors = generate_priors(model.priors);
    std::ostringstream text;
    text.precision(10);
    for (std::size_t i = 0; i < priors.size(); ++i) {
        text << i << " " << priors[i].cx << " " << priors[i].cy << " " << priors[i].w << " "
             << priors[i].h << "\n";
    }
    if (out_path.empty()) std::cout << text.str();
    else write_text_atomic(out_path, text.str());
    std::cerr << priors.size() << " priors\n";
    return 0;
}

int cmd_calibrate(const std::string& model_path, const std::string& out_path, int width,
                  int calib_count, const std::vector<std::string>& image_args) {
    const ModelManifest model = load_model(model_path);
    auto paths = collect_images(image_args);
    if (static_cast<int>(paths.size()) > calib_count) paths.resize(calib_count);
    std::vector<Tensor> images;
    images.reserve(paths.size());
    for (const auto& p : paths) images.push_back(load_image(p));
    CalibrationReport report = extract_dynamic_range(model, images);
    allocate_qformats(report, width);
    write_calibration_report(out_path, report);
    std::cerr << "calibrated over " << images.size() << " images, width " << width << "\n";
    return 0;
}

int cmd_quantize(const std::string& model_path, const std::string& report_path,
                 const std::string& out_path, int width) {
    const ModelManifest model = load_model(model_path);
    CalibrationReport report = read_calibration_report(report_path);
    allocate_qformats(report, width);
    const ModelManifest quant = quantize_model(model, report);
    save_model(quant, out_path);
    std::cerr << "wrote quantized model (width " << width << ") to " << out_path << "\n";
    return 0;
}

int cmd_infer(const std::string& model_path, const std::string& out_path,
              const DetectParams& params, const std::vector<std::string>& image_args) {
    const ModelManifest model = load_model(model_path);
    const auto images = load_named_images(collect_images(image_args));
    const auto dets = run_detector(model, images, params);
    write_detection_file(out_path, dets);
    std::cerr << dets.size() << " detections over " << images.size() << " images\n";
    return 0;
}

int cmd_plan(const std::string& model_path, const std::string& platform_path,
             const std::string& out_path) {
    const ModelManifest model = load_model(model_path);
    const PlatformBudget platform = read_platform_file(platform_path);
    const ModelPlan mp = plan_model(model, platform);

    std::printf("%-10s %4s %4s %4s %4s %3s %2s | %4s %4s %4s %4s %10s %8s %10s %10s %10s %9s\n",
                "layer", "M", "N", "R", "C", "K", "S", "Tm", "Tn", "Tr", "Tc", "buf_bytes",
                "ctc", "roof_gops", "bw_gops", "att_gops", "est_ms");
    for (const auto& rep : mp.layers) {
        const Shape out = conv_output_shape(rep.input_shape, rep.spec);
        std::printf(
            "%-10s %4d %4d %4d %4d %3d %2d | %4d %4d %4d %4d %10llu %8.2f %10.2f %10.2f %10.2f "
            "%9.4f\n",
            rep.layer_name.c_str(), rep.spec.out_channels, rep.spec.in_channels, out.h, out.w,
            rep.spec.kernel, rep.spec.stride, rep.plan.tm, rep.plan.tn, rep.plan.tr, rep.plan.tc,
            static_cast<unsigned long long>(rep.plan.footprint_bytes()), rep.roofline.ctc_ratio,
            rep.roofline.computational_roof / 1e9, rep.roofline.bandwidth_bound / 1e9,
            rep.roofline.attainable / 1e9, rep.seconds * 1e3);
    }
    std::printf("total conv ops %llu, estimated conv latency %.4f ms (compute+traffic model only)\n",
                static_cast<unsigned long long>(mp.total_ops), mp.total_seconds * 1e3);

    if (!out_path.empty()) {
        std::ostringstream csv;
        csv << "layer,M,N,R,C,K,S,Tm,Tn,Tr,Tc,footprint_bytes,ctc,roof_ops,bandwidth_bound_ops,"
               "attainable_ops,est_ms\n";
        csv.precision(10);
        for (const auto& rep : mp.layers) {
            const Shape out = conv_output_shape(rep.input_shape, rep.spec);
            csv << rep.layer_name << "," << rep.spec.out_channels << "," << rep.spec.in_channels
                << "," << out.h << "," << out.w << "," << rep.spec.kernel << "," << rep.spec.stride
                << "," << rep.plan.tm << "," << rep.plan.tn << "," << rep.plan.tr << ","
                << rep.plan.tc << "," << rep.plan.footprint_bytes() << ","
                << rep.roofline.ctc_ratio << "," << rep.roofline.computational_roof << ","
                << rep.roofline.bandwidth_bound << "," << rep.roofline.attainable << ","
                << rep.seconds * 1e3 << "\n";
        }
        write_text_atomic(out_path, csv.str());
    }
    return 0;
}

int cmd_eval(const std::string& dets_path, const std::string& ann_path,
             const std::string& subset, double iou_threshold, const std::string& out_path) {
    EvalConfig cfg = subset == "overall" ? EvalConfig::overall() : EvalConfig::reasonable();
    cfg.iou_threshold = iou_threshold;
    const auto dets = read_detection_file(dets_path);
    const auto gts = read_annotation_file(ann_path);
    const EvalResult res = evaluate_detections(dets, gts, cfg);

    std::printf("subset %s\n", subset.c_str());
    std::printf("images %zu\n", res.num_images);
    std::printf("evaluate_gts %zu\n", res.evaluate_gts);
    std::printf("ignore_gts %zu\n", res.ignore_gts);
    std::printf("lamr_percent %.2f\n", res.lamr_percent);

    std::ostringstream csv;
    csv << "threshold,fppi,miss_rate\n";
    csv.precision(10);
    for (const auto& pt : res.curve) {
        csv << pt.threshold << "," << pt.fppi << "," << pt.miss_rate << "\n";
    }
    if (out_path.empty()) std::cout << csv.str();
    else write_text_atomic(out_path, csv.str());
    return 0;
}

int cmd_fixture(const std::string& out_dir, std::uint64_t seed, int eval_images,
                int calib_images) {
    FixtureOptions opt;
    opt.seed = seed;
    opt.eval_images = eval_images;
    opt.calib_images = calib_images;
    const FixtureLayout layout = generate_fixture(out_dir, opt);
    std::cerr << "fixture written to " << out_dir << " (" << layout.eval_images.size()
              << " eval images, " << layout.calib_images.size() << " calibration images)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fxdetect: fixed-point SSD pedestrian detection toolchain"};
    app.require_subcommand(1);

    std::string model_path, out_path, report_path, platform_path, dets_path, ann_path;
    std::string subset = "reasonable";
    int width = 16;
    int calib_count = 100;
    int top_k = 200;
    int eval_images = 60, calib_images = 100;
    std::uint64_t seed = 42;
    double iou_threshold = 0.5;
    DetectParams det_params;
    std::vector<std::string> image_args;

    auto* priors = app.add_subcommand("priors", "dump the model's prior boxes");
    priors->add_option("--model", model_path, "model manifest")->required();
    priors->add_option("--out", out_path, "output file (default stdout)");

    auto* calibrate = app.add_subcommand("calibrate", "extract dynamic ranges over images");
    calibrate->add_option("--model", model_path, "float model manifest")->required();
    calibrate->add_option("--out", out_path, "calibration report output")->required();
    calibrate->add_option("--width", width, "fixed-point bit width")->default_val(16);
    calibrate->add_option("--calib-count", calib_count, "max calibration images")->default_val(100);
    calibrate->add_option("images", image_args, "image files or directories")->required();

    auto* quantize = app.add_subcommand("quantize", "emit a fixed-point model");
    quantize->add_option("--model", model_path, "float model manifest")->required();
    quantize->add_option("--report", report_path, "calibration report")->required();
    quantize->add_option("--out", out_path, "quantized manifest output")->required();
    quantize->add_option("--width", width, "fixed-point bit width")->default_val(16);

    auto* infer = app.add_subcommand("infer", "run detection over images");
    infer->add_option("--model", model_path, "model manifest")->required();
    infer->add_option("--out", out_path, "detection file output")->required();
    infer->add_option("--score-thresh", det_params.score_threshold)->default_val(0.01);
    infer->add_option("--nms-thresh", det_params.nms_threshold)->default_val(0.45);
    infer->add_option("--top-k", top_k)->default_val(200);
    infer->add_option("images", image_args, "image files or directories")->required();

    auto* plan = app.add_subcommand("plan", "tile and roofline-plan the model's conv layers");
    plan->add_option("--model", model_path, "model manifest")->required();
    plan->add_option("--platform", platform_path, "platform budget file")->required();
    plan->add_option("--out", out_path, "CSV output");

    auto* eval = app.add_subcommand("eval", "score a detection file against annotations");
    eval->add_option("--dets", dets_path, "detection file")->required();
    eval->add_option("--ann", ann_path, "annotation file")->required();
    eval->add_option("--subset", subset, "reasonable|overall")
        ->check(CLI::IsMember({"reasonable", "overall"}))
        ->default_val("reasonable");
    eval->add_option("--iou", iou_threshold, "match IoU threshold")->default_val(0.5);
    eval->add_option("--out", out_path, "curve CSV output (default stdout)");

    auto* fixture = app.add_subcommand("fixture", "generate the synthetic detector and dataset");
    fixture->add_option("--out", out_path, "output directory")->required();
    fixture->add_option("--seed", seed, "RNG seed")->default_val(42);
    fixture->add_option("--images", eval_images, "evaluation image count")->default_val(60);
    fixture->add_option("--calib-images", calib_images, "calibration image count")
        ->default_val(100);

    CLI11_PARSE(app, argc, argv);

    try {
        if (priors->parsed()) return cmd_priors(model_path, out_path);
        if (calibrate->parsed()) {
            return cmd_calibrate(model_path, out_path, width, calib_count, image_args);
        }
        if (quantize->parsed()) return cmd_quantize(model_path, report_path, out_path, width);
        if (infer->parsed()) {
            det_params.top_k = top_k;
            return cmd_infer(model_path, out_path, det_params, image_args);
        }
        if (plan->parsed()) return cmd_plan(model_path, platform_path, out_path);
        if (eval->parsed()) return cmd_eval(dets_path, ann_path, subset, iou_threshold, out_path);
        if (fixture->parsed()) return cmd_fixture(out_path, seed, eval_images, calib_images);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
