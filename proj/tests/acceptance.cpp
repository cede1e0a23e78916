// Acceptance suite: one line per criterion, nonzero exit on any failure.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fxdetect/eval.hpp"
#include "fxdetect/fixture.hpp"
#include "fxdetect/quantize.hpp"
#include "fxdetect/ssd.hpp"
#include "fxdetect/tile.hpp"

using namespace fxdetect;
using clock_type = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& msg) {
        if (!ok && pass) {
            pass = false;
            detail = msg;
        }
    }
};

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

struct ConvInstance {
    LayerSpec spec;
    Tensor input, weights, bias;
};

ConvInstance random_conv(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    ConvInstance ci;
    const int m = 1 + static_cast<int>(rng() % 8);
    const int n = 1 + static_cast<int>(rng() % 8);
    const int k = std::array{1, 3, 5}[rng() % 3];
    const int s = 1 + static_cast<int>(rng() % 2);
    const int p = static_cast<int>(rng() % 2);
    const int h = k + static_cast<int>(rng() % 10);
    const int w = k + static_cast<int>(rng() % 10);
    ci.spec = conv_spec(m, n, k, s, p);
    ci.input = Tensor::real(Shape{1, n, h, w});
    ci.weights = Tensor::real(Shape{m, n, k, k});
    ci.bias = Tensor::real(Shape{1, m, 1, 1});
    for (double& v : ci.input.vals) v = dist(rng);
    for (double& v : ci.weights.vals) v = dist(rng);
    for (double& v : ci.bias.vals) v = dist(rng);
    return ci;
}

void fix_formats(ConvInstance& ci) {
    ci.spec.q_in = QFormat{16, 10};
    ci.spec.q_weight = QFormat{16, 10};
    ci.spec.q_out = QFormat{16, 7};
}

// ---- criterion 1: optimized conv vs naive reference --------------------

Outcome criterion1() {
    Outcome out;
    std::mt19937_64 rng(1001);
    for (int it = 0; it < 200 && out.pass; ++it) {
        ConvInstance ci = random_conv(rng);

        const Tensor ref = conv2d_reference(ci.input, ci.weights, ci.bias, ci.spec);
        const Tensor opt = conv2d(ci.input, ci.weights, ci.bias, ci.spec);
        double max_diff = 0;
        for (std::size_t i = 0; i < ref.vals.size(); ++i) {
            max_diff = std::max(max_diff, std::fabs(ref.vals[i] - opt.vals[i]));
        }
        out.require(max_diff <= 1e-5,
                    "real-mode max diff " + std::to_string(max_diff) + " at case " +
                        std::to_string(it));

        fix_formats(ci);
        const Tensor in_q = quantize_tensor(ci.input, *ci.spec.q_in);
        const Tensor w_q = quantize_tensor(ci.weights, *ci.spec.q_weight);
        const Tensor b_q = quantize_tensor(ci.bias, QFormat{32, 20});
        const Tensor fref = conv2d_reference(in_q, w_q, b_q, ci.spec);
        const Tensor fopt = conv2d(in_q, w_q, b_q, ci.spec);
        out.require(fref.raw == fopt.raw,
                    "fixed-mode raw mismatch at case " + std::to_string(it));
    }
    return out;
}

// ---- criterion 2: tiled simulation bit-exactness + traffic -------------

Outcome criterion2() {
    Outcome out;
    std::mt19937_64 rng(2002);
    for (int it = 0; it < 100 && out.pass; ++it) {
        ConvInstance ci = random_conv(rng);
        fix_formats(ci);
        const Shape oshape = conv_output_shape(ci.input.shape, ci.spec);
        const auto pick = [&](int extent) { return 1 + static_cast<int>(rng() % extent); };
        const TilePlan plan =
            make_tile_plan(ci.spec, ci.input.shape, pick(ci.spec.out_channels),
                           pick(ci.spec.in_channels), pick(oshape.h), pick(oshape.w), 2);

        const Tensor in_q = quantize_tensor(ci.input, *ci.spec.q_in);
        const Tensor w_q = quantize_tensor(ci.weights, *ci.spec.q_weight);
        const Tensor b_q = quantize_tensor(ci.bias, QFormat{32, 20});

        const TiledConvResult sim = simulate_tiled_conv(ci.spec, plan, in_q, w_q, b_q);
        const Tensor direct = conv2d(in_q, w_q, b_q, ci.spec);
        out.require(sim.output.raw == direct.raw,
                    "tiled fixed output differs at case " + std::to_string(it));

        const TrafficLog want = estimate_traffic(ci.spec, ci.input.shape, plan);
        out.require(sim.traffic.input_bytes == want.input_bytes &&
                        sim.traffic.weight_bytes == want.weight_bytes &&
                        sim.traffic.output_bytes == want.output_bytes,
                    "traffic totals differ from the estimate at case " + std::to_string(it));
    }
    return out;
}

// ---- criterion 3: planner vs exhaustive enumeration + roofline ---------

Outcome criterion3() {
    Outcome out;
    std::mt19937_64 rng(3003);
    for (int it = 0; it < 20 && out.pass; ++it) {
        const ConvInstance ci = random_conv(rng);
        const Shape oshape = conv_output_shape(ci.input.shape, ci.spec);
        PlatformBudget p;
        p.on_chip_buffer_bytes = 128 + rng() % 8192;
        p.mac_units = 1 + rng() % 64;
        p.clock_hz = 2e8;
        p.dram_bandwidth_bytes_per_s = 1e8 + static_cast<double>(rng() % 8) * 5e8;
        p.element_bytes = 2;

        bool have = false;
        TilePlan want;
        RooflineEstimate want_est;
        for (int tm = 1; tm <= ci.spec.out_channels; ++tm) {
            if (ci.spec.out_channels % tm) continue;
            for (int tn = 1; tn <= ci.spec.in_channels; ++tn) {
                if (ci.spec.in_channels % tn) continue;
                for (int tr = 1; tr <= oshape.h; ++tr) {
                    if (oshape.h % tr) continue;
                    for (int tc = 1; tc <= oshape.w; ++tc) {
                        if (oshape.w % tc) continue;
                        const TilePlan cand = make_tile_plan(ci.spec, ci.input.shape, tm, tn, tr,
                                                             tc, p.element_bytes);
                        if (!plan_fits(cand, p)) continue;
                        const RooflineEstimate est =
                            attainable_performance(ci.spec, ci.input.shape, cand, p);
                        // roofline identity on every enumerated plan
                        out.require(est.attainable ==
                                        std::min(est.computational_roof, est.bandwidth_bound),
                                    "attainable != min(roof, bw*ctc)");
                        const auto key = std::array{
                            -est.attainable, -est.ctc_ratio,
                            static_cast<double>(cand.footprint_bytes()),
                            static_cast<double>(cand.tm), static_cast<double>(cand.tn),
                            static_cast<double>(cand.tr), static_cast<double>(cand.tc)};
                        const auto wkey = std::array{
                            -want_est.attainable, -want_est.ctc_ratio,
                            static_cast<double>(want.footprint_bytes()),
                            static_cast<double>(want.tm), static_cast<double>(want.tn),
                            static_cast<double>(want.tr), static_cast<double>(want.tc)};
                        if (!have || key < wkey) {
                            want = cand;
                            want_est = est;
                            have = true;
                        }
                    }
                }
            }
        }

        if (!have) {
            bool threw = false;
            try {
                select_best_plan(ci.spec, ci.input.shape, p);
            } catch (const std::exception&) {
                threw = true;
            }
            out.require(threw, "planner found a plan where exhaustive search found none");
            continue;
        }
        const PlanChoice got = select_best_plan(ci.spec, ci.input.shape, p);
        out.require(got.plan.tm == want.tm && got.plan.tn == want.tn &&
                        got.plan.tr == want.tr && got.plan.tc == want.tc,
                    "planner tile choice differs from exhaustive search at case " +
                        std::to_string(it));

        // whole-layer tiling moves each datum exactly once
        const TilePlan full = make_tile_plan(ci.spec, ci.input.shape, ci.spec.out_channels,
                                             ci.spec.in_channels, oshape.h, oshape.w, 2);
        const TrafficLog single = estimate_traffic(ci.spec, ci.input.shape, full);
        const int K = ci.spec.kernel, S = ci.spec.stride;
        const std::uint64_t e = 2;
        const std::uint64_t want_w =
            static_cast<std::uint64_t>(ci.spec.out_channels) * ci.spec.in_channels * K * K * e;
        const std::uint64_t want_i = static_cast<std::uint64_t>(ci.spec.in_channels) *
                                     (S * oshape.h + K - S) * (S * oshape.w + K - S) * e;
        const std::uint64_t want_o =
            static_cast<std::uint64_t>(ci.spec.out_channels) * oshape.h * oshape.w * e;
        out.require(single.weight_bytes == want_w && single.input_bytes == want_i &&
                        single.output_bytes == want_o,
                    "whole-layer tile is not single-trip");
    }
    return out;
}

// ---- criterion 4: quantization miss-rate delta on the fixture ----------

Outcome criterion4() {
    Outcome out;
    const ModelManifest model = make_fixture_model();

    std::mt19937_64 rng(42);  // the seeded fixture
    std::vector<std::pair<std::string, Tensor>> eval_images;
    std::vector<GroundTruthBox> annotations;
    char name[32];
    for (int k = 0; k < 60; ++k) {
        std::snprintf(name, sizeof(name), "img_%04d", k);
        FixtureScene scene = make_fixture_scene(rng, name);
        eval_images.emplace_back(name, scene.image);
        annotations.insert(annotations.end(), scene.annotations.begin(),
                           scene.annotations.end());
    }
    std::vector<Tensor> calib;
    for (int k = 0; k < 100; ++k) {
        std::snprintf(name, sizeof(name), "cal_%04d", k);
        calib.push_back(make_fixture_scene(rng, name).image);
    }

    CalibrationReport report = extract_dynamic_range(model, calib);

    allocate_qformats(report, 16);
    const ModelManifest q16 = quantize_model(model, report);
    const ModelComparison c16 = compare_models(model, q16, eval_images, annotations,
                                               EvalConfig::reasonable(), DetectParams{});

    allocate_qformats(report, 8);
    const ModelManifest q8 = quantize_model(model, report);
    const ModelComparison c8 = compare_models(model, q8, eval_images, annotations,
                                              EvalConfig::reasonable(), DetectParams{});

    std::ostringstream detail;
    detail << "float " << c16.float_eval.lamr_percent << "%, w16 " << c16.quant_eval.lamr_percent
           << "%, w8 " << c8.quant_eval.lamr_percent << "%";
    out.detail = detail.str();
    out.pass = std::fabs(c16.delta_percent) <= 0.5 &&
               std::fabs(c8.delta_percent) >= std::fabs(c16.delta_percent);
    if (!out.pass) {
        out.detail = "delta16 " + std::to_string(c16.delta_percent) + "pp, delta8 " +
                     std::to_string(c8.delta_percent) + "pp (" + out.detail + ")";
    }
    return out;
}

// ---- criterion 5: fixed-point round-trip and format maximality ---------

Outcome criterion5() {
    Outcome out;
    std::mt19937_64 rng(5005);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> mag(-10.0, 12.0);
    for (int it = 0; it < 100000 && out.pass; ++it) {
        const int width = 2 + static_cast<int>(rng() % 31);
        const int frac = static_cast<int>(rng() % width);
        const QFormat q{width, frac};
        const double x = unit(rng) * q.real_max();
        if (x >= q.real_min() && x <= q.real_max()) {
            const double back = dequantize_value(quantize_value(x, q), q);
            out.require(std::fabs(x - back) <= std::ldexp(1.0, -frac - 1),
                        "round-trip bound violated");
        }

        const double max_abs = std::exp2(mag(rng));
        try {
            const QFormat d = derive_qformat(max_abs, width);
            const double top = static_cast<double>(d.raw_max());
            out.require(max_abs <= std::ldexp(top, -d.frac_bits), "derived format too small");
            if (d.frac_bits < width - 1) {
                out.require(max_abs > std::ldexp(top, -(d.frac_bits + 1)),
                            "derived format not maximal");
            }
        } catch (const std::range_error&) {
            out.require(max_abs > static_cast<double>(QFormat{width, 0}.raw_max()),
                        "spurious range overflow");
        }
    }
    return out;
}

// ---- criterion 6: prior-box hyperparameters -----------------------------

Outcome criterion6() {
    Outcome out;
    PriorConfig cfg;
    cfg.image_w = cfg.image_h = 640;
    cfg.taps.push_back(TapPriorSpec{"conv4_3", 38, 38, {0.04, 0.07, 0.085}, {0.41}});
    const std::vector<std::pair<const char*, int>> later = {
        {"fc7", 19}, {"conv8_2", 10}, {"conv9_2", 5}, {"conv10_2", 3}, {"conv11_2", 2}};
    for (std::size_t i = 0; i < later.size(); ++i) {
        cfg.taps.push_back(TapPriorSpec{
            later[i].first, later[i].second, later[i].second, {0.1 + 0.2 * i}, {0.41}});
    }

    const auto priors = generate_priors(cfg);
    std::size_t expect = 38ull * 38 * 3;
    for (const auto& [tap, g] : later) {
        (void)tap;
        expect += static_cast<std::size_t>(g) * g;
    }
    out.require(priors.size() == expect,
                "prior count " + std::to_string(priors.size()) + " != closed form " +
                    std::to_string(expect));
    for (const auto& p : priors) {
        out.require(std::fabs(p.w / p.h - 0.41) <= 1e-9, "w/h ratio off 0.41");
    }
    // scale spacing across the later taps is exactly 0.2
    for (std::size_t i = 1; i + 1 < cfg.taps.size(); ++i) {
        out.require(std::fabs(cfg.taps[i + 1].scales[0] - cfg.taps[i].scales[0] - 0.2) <= 1e-12,
                    "later-tap scales not equally spaced by 0.2");
    }
    return out;
}

// ---- criterion 7: evaluation protocol -----------------------------------

Outcome criterion7() {
    Outcome out;

    // subset filtering on a hand-built annotation set
    const std::vector<GroundTruthBox> anns = {
        {"i", "person", 0, 0, 25, 60, 0.0},    // tall, visible
        {"i", "person", 0, 0, 12, 30, 0.0},    // 30px: overall only
        {"i", "person", 0, 0, 25, 60, 0.5},    // occluded 50%: overall only
        {"i", "person", 0, 0, 25, 60, 0.9},    // too occluded for either
        {"i", "person", 0, 0, 10, 19, 0.0},    // under 20px: neither
        {"i", "people", 0, 0, 200, 100, 0.0},  // always ignored
        {"i", "person?", 0, 0, 25, 60, 0.0},   // always ignored
    };
    const GtSplit reasonable = filter_groundtruth(anns, EvalConfig::reasonable());
    const GtSplit overall = filter_groundtruth(anns, EvalConfig::overall());
    out.require(reasonable.evaluate.size() == 1 && reasonable.ignore.size() == 6,
                "Reasonable subset filter wrong");
    out.require(overall.evaluate.size() == 3 && overall.ignore.size() == 4,
                "Overall subset filter wrong");

    // stepped curve vs the explicit 9-point computation
    const std::vector<CurvePoint> curve = {
        {0.95, 0.004, 0.85}, {0.85, 0.012, 0.7}, {0.7, 0.04, 0.55},
        {0.55, 0.11, 0.4},   {0.4, 0.35, 0.25},  {0.25, 0.8, 0.15},
        {0.1, 1.6, 0.08},
    };
    double log_sum = 0;
    for (int k = 0; k < 9; ++k) {
        const double ref = std::pow(10.0, -2.0 + 0.25 * k);
        double miss = curve.front().miss_rate;
        for (const auto& pt : curve) {
            if (pt.fppi <= ref) miss = pt.miss_rate;
        }
        log_sum += std::log(std::max(miss, 1e-10));
    }
    const double want = 100.0 * std::exp(log_sum / 9.0);
    out.require(std::fabs(log_average_miss_rate(curve) - want) <= 1e-9,
                "stepped-curve LAMR off the 9-point oracle");

    // perfect detector scores 0.00, empty detector scores 100
    const std::vector<GroundTruthBox> gts = {{"a", "person", 0, 0, 30, 80, 0.0},
                                             {"b", "person", 5, 5, 35, 85, 0.0}};
    const std::vector<DetectionRecord> perfect = {{"a", 0, 0, 30, 80, 0.99},
                                                  {"b", 5, 5, 35, 85, 0.98}};
    const EvalResult good = evaluate_detections(perfect, gts, EvalConfig::reasonable());
    out.require(good.lamr_percent < 0.005, "perfect detector LAMR not ~0");
    const EvalResult bad = evaluate_detections({}, gts, EvalConfig::reasonable());
    out.require(std::fabs(bad.lamr_percent - 100.0) < 1e-9, "empty detector LAMR not 100");
    return out;
}

// ---- criterion 8: NMS and matching vs exhaustive references -------------

Box random_box(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> pos(0.1, 0.9);
    std::uniform_real_distribution<double> size(0.05, 0.4);
    return Box{pos(rng), pos(rng), size(rng), size(rng)};
}

std::vector<Detection> oracle_nms(const std::vector<Detection>& dets, double thr, int top_k) {
    std::vector<std::pair<Detection, std::size_t>> remaining;
    for (std::size_t i = 0; i < dets.size(); ++i) remaining.emplace_back(dets[i], i);
    std::vector<Detection> kept;
    while (!remaining.empty() && static_cast<int>(kept.size()) < top_k) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < remaining.size(); ++i) {
            if (remaining[i].first.score > remaining[best].first.score ||
                (remaining[i].first.score == remaining[best].first.score &&
                 remaining[i].second < remaining[best].second)) {
                best = i;
            }
        }
        const Detection pick = remaining[best].first;
        kept.push_back(pick);
        std::vector<std::pair<Detection, std::size_t>> next;
        for (std::size_t i = 0; i < remaining.size(); ++i) {
            if (i != best && iou(pick.box, remaining[i].first.box) <= thr) {
                next.push_back(remaining[i]);
            }
        }
        remaining = std::move(next);
    }
    return kept;
}

std::vector<int> oracle_match(const std::vector<Box>& priors, const std::vector<Box>& gts,
                              double threshold) {
    std::vector<int> outv(priors.size(), -1);
    std::set<std::size_t> open_gts, open_priors;
    for (std::size_t g = 0; g < gts.size(); ++g) open_gts.insert(g);
    for (std::size_t p = 0; p < priors.size(); ++p) open_priors.insert(p);
    while (!open_gts.empty() && !open_priors.empty()) {
        double best = -1;
        std::size_t bg = *open_gts.begin(), bp = *open_priors.begin();
        for (std::size_t p : open_priors)
        for (std::size_t g : open_gts) {
            const double ov = iou(gts[g], priors[p]);
            if (ov > best || (ov == best && (p < bp || (p == bp && g < bg)))) {
                best = ov;
                bg = g;
                bp = p;
            }
        }
        outv[bp] = static_cast<int>(bg);
        open_gts.erase(bg);
        open_priors.erase(bp);
    }
    for (std::size_t p : open_priors) {
        double best = -1;
        int arg = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (iou(gts[g], priors[p]) > best) {
                best = iou(gts[g], priors[p]);
                arg = static_cast<int>(g);
            }
        }
        if (best >= threshold) outv[p] = arg;
    }
    return outv;
}

Outcome criterion8() {
    Outcome out;
    std::mt19937_64 rng(8008);
    std::uniform_real_distribution<double> score(0.0, 1.0);
    for (int it = 0; it < 500 && out.pass; ++it) {
        const std::size_t n = 1 + rng() % 20;
        std::vector<Detection> dets;
        for (std::size_t i = 0; i < n; ++i) dets.push_back({random_box(rng), score(rng)});
        const auto got = nms(dets, 0.45, 20);
        const auto want = oracle_nms(dets, 0.45, 20);
        bool same = got.size() == want.size();
        for (std::size_t i = 0; same && i < got.size(); ++i) {
            same = got[i].score == want[i].score && got[i].box.cx == want[i].box.cx;
        }
        out.require(same, "NMS differs from the exhaustive reference at case " +
                              std::to_string(it));

        const std::size_t np = 2 + rng() % 19;
        const std::size_t ng = 1 + rng() % std::min<std::size_t>(np, 6);
        std::vector<Box> priors, gts;
        for (std::size_t i = 0; i < np; ++i) priors.push_back(random_box(rng));
        for (std::size_t g = 0; g < ng; ++g) gts.push_back(random_box(rng));
        out.require(match_priors(priors, gts, 0.5) == oracle_match(priors, gts, 0.5),
                    "prior matching differs from the exhaustive reference at case " +
                        std::to_string(it));
    }
    return out;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_s;  // 0 = untimed
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "conv oracle equivalence (200 random layers)", 30, criterion1},
        {2, "tiled bit-exactness + traffic consistency (100 plans)", 60, criterion2},
        {3, "roofline + planner vs exhaustive enumeration", 0, criterion3},
        {4, "quantization LAMR delta on the seeded fixture", 120, criterion4},
        {5, "fixed-point round-trip + format maximality (1e5)", 10, criterion5},
        {6, "prior-box hyperparameter configuration", 0, criterion6},
        {7, "evaluation protocol (subsets, LAMR oracle, endpoints)", 0, criterion7},
        {8, "NMS + matching vs exhaustive references (500)", 10, criterion8},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = clock_type::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(clock_type::now() - t0).count();
        if (c.budget_s > 0 && secs > c.budget_s) {
            out.pass = false;
            out.detail += (out.detail.empty() ? "" : "; ") + std::string("over time budget");
        }
        std::printf("%s criterion %d: %s (%.2fs)%s%s\n", out.pass ? "PASS" : "FAIL", c.id,
                    c.name, secs, out.detail.empty() ? "" : " -- ", out.detail.c_str());
        if (!out.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
