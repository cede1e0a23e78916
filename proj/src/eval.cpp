#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fxdetect/eval.hpp"

namespace fxdetect {

namespace {

double pixel_iou(double ax1, double ay1, double ax2, double ay2, double bx1, double by1,
                 double bx2, double by2) {
    const double ix = std::min(ax2, bx2) - std::max(ax1, bx1);
    const double iy = std::min(ay2, by2) - std::max(ay1, by1);
    if (ix <= 0 || iy <= 0) return 0.0;
    const double inter = ix * iy;
    const double uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    return uni <= 0 ? 0.0 : inter / uni;
}

double det_gt_iou(const DetectionRecord& d, const GroundTruthBox& g) {
    return pixel_iou(d.x1, d.y1, d.x2, d.y2, g.x1, g.y1, g.x2, g.y2);
}

}  // namespace

GtSplit filter_groundtruth(const std::vector<GroundTruthBox>& gts, const EvalConfig& cfg) {
    GtSplit split;
    for (const auto& gt : gts) {
        const bool person = gt.label == "person";
        const bool tall_enough = gt.height() >= cfg.min_height;
        const bool visible_enough = gt.occlusion < cfg.max_occlusion;
        if (person && tall_enough && visible_enough) {
            split.evaluate.push_back(gt);
        } else {
            split.ignore.push_back(gt);
        }
    }
    return split;
}

MatchResult match_detections(const std::vector<DetectionRecord>& sorted_dets,
                             const std::vector<GroundTruthBox>& evaluate,
                             const std::vector<GroundTruthBox>& ignore, double iou_threshold) {
    MatchResult result;
    result.outcomes.resize(sorted_dets.size());
    result.gt_hit.assign(evaluate.size(), false);

    for (std::size_t d = 0; d < sorted_dets.size(); ++d) {
        const auto& det = sorted_dets[d];
        result.outcomes[d].score = det.score;

        double best = 0.0;
        int best_g = -1;
        for (std::size_t g = 0; g < evaluate.size(); ++g) {
            if (result.gt_hit[g]) continue;
            const double ov = det_gt_iou(det, evaluate[g]);
            if (ov >= iou_threshold && ov > best) {
                best = ov;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0) {
            result.gt_hit[best_g] = true;
            result.outcomes[d].outcome = DetOutcome::TruePositive;
            continue;
        }

        bool absorbed = false;
        for (const auto& ig : ignore) {
            if (det_gt_iou(det, ig) >= iou_threshold) {
                absorbed = true;
                break;
            }
        }
        result.outcomes[d].outcome = absorbed ? DetOutcome::Ignored : DetOutcome::FalsePositive;
    }
    return result;
}

std::vector<CurvePoint> miss_rate_fppi_curve(const std::vector<ScoredOutcome>& all_outcomes,
                                             std::size_t num_images,
                                             std::size_t num_evaluate_gts) {
    if (num_images == 0) throw std::runtime_error("miss_rate_fppi_curve: no images");
    if (num_evaluate_gts == 0) {
        throw std::runtime_error("miss_rate_fppi_curve: zero evaluate ground truths");
    }

    std::vector<ScoredOutcome> scored;
    scored.reserve(all_outcomes.size());
    for (const auto& o : all_outcomes) {
        if (o.outcome != DetOutcome::Ignored) scored.push_back(o);
    }
    std::sort(scored.begin(), scored.end(),
              [](const ScoredOutcome& a, const ScoredOutcome& b) { return a.score > b.score; });

    std::vector<CurvePoint> curve;
    if (scored.empty()) {
        curve.push_back(CurvePoint{0.0, 0.0, 1.0});
        return curve;
    }

    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        if (scored[i].outcome == DetOutcome::TruePositive) ++tp;
        else ++fp;
        const bool last_of_threshold = i + 1 == scored.size() ||
                                       scored[i + 1].score != scored[i].score;
        if (!last_of_threshold) continue;
        CurvePoint pt;
        pt.threshold = scored[i].score;
        pt.fppi = static_cast<double>(fp) / static_cast<double>(num_images);
        pt.miss_rate = 1.0 - static_cast<double>(tp) / static_cast<double>(num_evaluate_gts);
        curve.push_back(pt);
    }
    return curve;
}

double log_average_miss_rate(const std::vector<CurvePoint>& curve) {
    if (curve.empty()) throw std::invalid_argument("log_average_miss_rate: empty curve");
    constexpr int kSamples = 9;
    constexpr double kFloor = 1e-10;
    double log_sum = 0.0;
    for (int k = 0; k < kSamples; ++k) {
        const double ref = std::pow(10.0, -2.0 + 2.0 * k / (kSamples - 1));
        // last curve point with fppi <= ref; below the smallest achieved fppi
        // fall back to the lowest-fppi point
        double miss = curve.front().miss_rate;
        for (const auto& pt : curve) {
            if (pt.fppi <= ref) miss = pt.miss_rate;
        }
        log_sum += std::log(std::max(miss, kFloor));
    }
    return 100.0 * std::exp(log_sum / kSamples);
}

EvalResult evaluate_detections(const std::vector<DetectionRecord>& dets,
                               const std::vector<GroundTruthBox>& gts, const EvalConfig& cfg) {
    std::set<std::string> ids;
    std::map<std::string, std::vector<DetectionRecord>> dets_by_image;
    std::map<std::string, std::vector<GroundTruthBox>> gts_by_image;
    for (const auto& d : dets) {
        ids.insert(d.image_id);
        dets_by_image[d.image_id].push_back(d);
    }
    for (const auto& g : gts) {
        ids.insert(g.image_id);
        gts_by_image[g.image_id].push_back(g);
    }

    EvalResult result;
    result.num_images = ids.size();
    std::vector<ScoredOutcome> all_outcomes;
    for (const auto& id : ids) {
        const GtSplit split = filter_groundtruth(gts_by_image[id], cfg);
        result.evaluate_gts += split.evaluate.size();
        result.ignore_gts += split.ignore.size();

        auto& image_dets = dets_by_image[id];
        std::stable_sort(image_dets.begin(), image_dets.end(),
                         [](const DetectionRecord& a, const DetectionRecord& b) {
                             return a.score > b.score;
                         });
        const MatchResult mr =
            match_detections(image_dets, split.evaluate, split.ignore, cfg.iou_threshold);
        for (const auto& o : mr.outcomes) {
            all_outcomes.push_back(o);
            if (o.outcome == DetOutcome::TruePositive) ++result.true_positives;
            if (o.outcome == DetOutcome::FalsePositive) ++result.false_positives;
        }
    }

    result.curve = miss_rate_fppi_curve(all_outcomes, result.num_images, result.evaluate_gts);
    result.lamr_percent = log_average_miss_rate(result.curve);
    return result;
}

std::vector<DetectionRecord> read_detection_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open detection file: " + path.string());
    std::vector<DetectionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream in(line);
        DetectionRecord d;
        if (!(in >> d.image_id >> d.x1 >> d.y1 >> d.x2 >> d.y2 >> d.score)) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": malformed detection line");
        }
        if (!std::isfinite(d.score)) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": non-finite score");
        }
        out.push_back(std::move(d));
    }
    return out;
}

void write_detection_file(const std::filesystem::path& path,
                          const std::vector<DetectionRecord>& dets) {
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write detection file: " + tmp.string());
        f.precision(10);
        for (const auto& d : dets) {
            f << d.image_id << " " << d.x1 << " " << d.y1 << " " << d.x2 << " " << d.y2 << " "
              << d.score << "\n";
        }
    }
    std::filesystem::rename(tmp, path);
}

std::vector<GroundTruthBox> read_annotation_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open annotation file: " + path.string());
    std::vector<GroundTruthBox> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream in(line);
        GroundTruthBox g;
        if (!(in >> g.image_id >> g.label >> g.x1 >> g.y1 >> g.x2 >> g.y2 >> g.occlusion)) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": malformed annotation line");
        }
        if (g.label != "person" && g.label != "people" && g.label != "person?") {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": unknown label '" + g.label + "'");
        }
        if (!(g.x1 < g.x2) || !(g.y1 < g.y2) || g.occlusion < 0 || g.occlusion > 1) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": invalid box or occlusion");
        }
        out.push_back(std::move(g));
    }
    return out;
}

void write_annotation_file(const std::filesystem::path& path,
                           const std::vector<GroundTruthBox>& gts) {
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write annotation file: " + tmp.string());
        f.precision(10);
        for (const auto& g : gts) {
            f << g.image_id << " " << g.label << " " << g.x1 << " " << g.y1 << " " << g.x2 << " "
              << g.y2 << " " << g.occlusion << "\n";
        }
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace fxdetect
