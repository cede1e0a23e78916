#pragma once

#include <map>
#include <string>
#include <vector>

#include "fxdetect/tensor.hpp"

namespace fxdetect {

// Axis-aligned box in normalized image coordinates, center form.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;

    double x1() const { return cx - w / 2; }
    double y1() const { return cy - h / 2; }
    double x2() const { return cx + w / 2; }
    double y2() const { return cy + h / 2; }

    static Box from_corners(double x1, double y1, double x2, double y2) {
        return Box{(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
    }
};

struct Detection {
    Box box;
    double score = 0;  // pedestrian probability from softmax
};

// Per-tap prior layout: fh x fw grid, one prior per (scale, aspect ratio)
// pair at each cell.
struct TapPriorSpec {
    std::string tap;
    int fh = 0, fw = 0;
    std::vector<double> scales;         // fractions of image size, in (0, 1]
    std::vector<double> aspect_ratios;  // width / height
};

struct PriorConfig {
    int image_w = 0, image_h = 0;
    double var_center = 0.1, var_size = 0.2;
    std::vector<TapPriorSpec> taps;
};

std::size_t prior_count(const PriorConfig& cfg);

// Tap-major, then row-major over cells, then scale-major, then ratio-major.
// Cell (i, j) centers at ((j+0.5)/fw, (i+0.5)/fh); w = s*sqrt(ar), h = s/sqrt(ar).
// Boxes are not clipped here.
std::vector<Box> generate_priors(const PriorConfig& cfg);

double iou(const Box& a, const Box& b);

// Prior-to-groundtruth assignment: (1) bipartite step pairing each gt with its
// best prior (globally greedy on IoU; ties prefer lower prior then lower gt
// index), then (2) each unassigned prior with IoU >= threshold to some gt is
// assigned its best gt. Returns one gt index per prior, -1 for unmatched.
std::vector<int> match_priors(const std::vector<Box>& priors, const std::vector<Box>& gts,
                              double threshold);

struct BoxOffsets {
    double tx = 0, ty = 0, tw = 0, th = 0;
};

// SSD offset decode against priors, then corner-clip to [0,1].
std::vector<Box> decode_boxes(const std::vector<BoxOffsets>& loc, const std::vector<Box>& priors,
                              double var_center, double var_size);

// Greedy non-maximum suppression; keeps highest score (ties: lower original
// index), discards overlaps with IoU strictly above the threshold, stops at
// top_k.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold, int top_k);

struct DetectParams {
    double score_threshold = 0.01;
    double nms_threshold = 0.45;
    int top_k = 200;
};

// Full head: per-prior softmax over (background, pedestrian) logits, score
// threshold, offset decode, NMS; result sorted by descending score. Tap
// tensors carry 6 channels per prior group: tx, ty, tw, th, background logit,
// pedestrian logit, prior-group-major along the channel axis.
std::vector<Detection> detect(const std::map<std::string, Tensor>& taps, const PriorConfig& cfg,
                              const DetectParams& params);

}  // namespace fxdetect
