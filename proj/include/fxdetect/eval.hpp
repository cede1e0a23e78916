#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace fxdetect {

// Pixel-space annotation. label is one of "person", "people", "person?".
struct GroundTruthBox {
    std::string image_id;
    std::string label;
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double occlusion = 0;  // fraction in [0,1]

    double height() const { return y2 - y1; }
};

struct DetectionRecord {
    std::string image_id;
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double score = 0;
};

enum class Subset { Reasonable, Overall };

struct EvalConfig {
    Subset subset = Subset::Reasonable;
    double min_height = 50.0;
    double max_occlusion = 0.35;  // exclusive bound
    double iou_threshold = 0.5;

    static EvalConfig reasonable() { return EvalConfig{Subset::Reasonable, 50.0, 0.35, 0.5}; }
    static EvalConfig overall() { return EvalConfig{Subset::Overall, 20.0, 0.80, 0.5}; }
};

// 'person' boxes passing the height/occlusion filter are evaluated; everything
// else becomes an ignore region.
struct GtSplit {
    std::vector<GroundTruthBox> evaluate;
    std::vector<GroundTruthBox> ignore;
};
GtSplit filter_groundtruth(const std::vector<GroundTruthBox>& gts, const EvalConfig& cfg);

enum class DetOutcome { TruePositive, FalsePositive, Ignored };

struct ScoredOutcome {
    double score = 0;
    DetOutcome outcome = DetOutcome::FalsePositive;
};

// Greedy matching over one image's detections, which must be sorted by
// descending score: best unmatched evaluate gt with IoU >= threshold wins
// (TP); otherwise any ignore region with IoU >= threshold absorbs the
// detection; otherwise FP.
struct MatchResult {
    std::vector<ScoredOutcome> outcomes;  // one per detection, input order
    std::vector<bool> gt_hit;             // one per evaluate gt
};
MatchResult match_detections(const std::vector<DetectionRecord>& sorted_dets,
                             const std::vector<GroundTruthBox>& evaluate,
                             const std::vector<GroundTruthBox>& ignore, double iou_threshold);

struct CurvePoint {
    double threshold = 0;
    double fppi = 0;
    double miss_rate = 0;
};

// One point per distinct detection score, descending threshold (fppi
// non-decreasing along the vector). With no detections at all the curve is
// the single point (fppi 0, miss 1).
std::vector<CurvePoint> miss_rate_fppi_curve(const std::vector<ScoredOutcome>& all_outcomes,
                                             std::size_t num_images, std::size_t num_evaluate_gts);

// Geometric mean of the miss rate sampled at 9 log-spaced FPPI points in
// [1e-2, 1], miss floored at 1e-10; returned as a percentage.
double log_average_miss_rate(const std::vector<CurvePoint>& curve);

struct EvalResult {
    std::vector<CurvePoint> curve;
    double lamr_percent = 0;
    std::size_t num_images = 0;
    std::size_t evaluate_gts = 0;
    std::size_t ignore_gts = 0;
    std::size_t true_positives = 0;   // at threshold zero
    std::size_t false_positives = 0;  // at threshold zero
};

// Groups detections and annotations by image id, filters, matches, and builds
// the curve. The image count is the number of distinct ids across annotations
// and detections.
EvalResult evaluate_detections(const std::vector<DetectionRecord>& dets,
                               const std::vector<GroundTruthBox>& gts, const EvalConfig& cfg);

// Line formats: "image_id x1 y1 x2 y2 score" / "image_id label x1 y1 x2 y2 occlusion".
std::vector<DetectionRecord> read_detection_file(const std::filesystem::path& path);
void write_detection_file(const std::filesystem::path& path,
                          const std::vector<DetectionRecord>& dets);
std::vector<GroundTruthBox> read_annotation_file(const std::filesystem::path& path);
void write_annotation_file(const std::filesystem::path& path,
                           const std::vector<GroundTruthBox>& gts);

}  // namespace fxdetect
