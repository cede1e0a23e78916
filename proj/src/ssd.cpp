#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fxdetect/layers.hpp"
#include "fxdetect/ssd.hpp"

namespace fxdetect {

std::size_t prior_count(const PriorConfig& cfg) {
    std::size_t total = 0;
    for (const auto& t : cfg.taps) {
        total += static_cast<std::size_t>(t.fh) * t.fw * t.scales.size() *
                 t.aspect_ratios.size();
    }
    return total;
}

std::vector<Box> generate_priors(const PriorConfig& cfg) {
    if (cfg.taps.empty()) throw std::invalid_argument("generate_priors: no taps configured");
    std::vector<Box> priors;
    priors.reserve(prior_count(cfg));
    for (const auto& t : cfg.taps) {
        for (int i = 0; i < t.fh; ++i)
        for (int j = 0; j < t.fw; ++j) {
            const double cx = (j + 0.5) / t.fw;
            const double cy = (i + 0.5) / t.fh;
            for (double s : t.scales)
            for (double ar : t.aspect_ratios) {
                const double root = std::sqrt(ar);
                priors.push_back(Box{cx, cy, s * root, s / root});
            }
        }
    }
    return priors;
}

double iou(const Box& a, const Box& b) {
    const double ix = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double iy = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    if (ix <= 0 || iy <= 0) return 0.0;
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni <= 0 ? 0.0 : inter / uni;
}

std::vector<int> match_priors(const std::vector<Box>& priors, const std::vector<Box>& gts,
                              double threshold) {
    if (!(threshold > 0 && threshold < 1)) {
        throw std::invalid_argument("match_priors: threshold must be in (0,1)");
    }
    std::vector<int> assignment(priors.size(), -1);
    if (priors.empty() || gts.empty()) return assignment;

    std::vector<std::vector<double>> overlap(gts.size(), std::vector<double>(priors.size()));
    for (std::size_t g = 0; g < gts.size(); ++g)
        for (std::size_t p = 0; p < priors.size(); ++p) overlap[g][p] = iou(gts[g], priors[p]);

    // Bipartite step: repeatedly take the globally best (gt, prior) pair so no
    // prior ends up claimed by two gts. Ignores the threshold.
    std::vector<bool> gt_done(gts.size(), false);
    std::vector<bool> prior_taken(priors.size(), false);
    const std::size_t rounds = std::min(gts.size(), priors.size());
    for (std::size_t round = 0; round < rounds; ++round) {
        double best = -1.0;
        std::size_t best_g = 0, best_p = 0;
        for (std::size_t p = 0; p < priors.size(); ++p) {
            if (prior_taken[p]) continue;
            for (std::size_t g = 0; g < gts.size(); ++g) {
                if (gt_done[g]) continue;
                if (overlap[g][p] > best) {
                    best = overlap[g][p];
                    best_g = g;
                    best_p = p;
                }
            }
        }
        gt_done[best_g] = true;
        prior_taken[best_p] = true;
        assignment[best_p] = static_cast<int>(best_g);
    }

    // Threshold step: remaining priors take their best gt when good enough.
    for (std::size_t p = 0; p < priors.size(); ++p) {
        if (prior_taken[p]) continue;
        double best = -1.0;
        int best_g = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (overlap[g][p] > best) {
                best = overlap[g][p];
                best_g = static_cast<int>(g);
            }
        }
        if (best >= threshold) assignment[p] = best_g;
    }
    return assignment;
}

std::vector<Box> decode_boxes(const std::vector<BoxOffsets>& loc, const std::vector<Box>& priors,
                              double var_center, double var_size) {
    if (loc.size() != priors.size()) {
        throw std::invalid_argument("decode_boxes: offsets/priors length mismatch");
    }
    std::vector<Box> out(priors.size());
    for (std::size_t k = 0; k < priors.size(); ++k) {
        const auto& t = loc[k];
        if (!std::isfinite(t.tx) || !std::isfinite(t.ty) || !std::isfinite(t.tw) ||
            !std::isfinite(t.th)) {
            throw std::runtime_error("decode_boxes: non-finite offsets at prior " +
                                     std::to_string(k));
        }
        const Box& p = priors[k];
        Box b;
        b.cx = p.cx + t.tx * var_center * p.w;
        b.cy = p.cy + t.ty * var_center * p.h;
        b.w = p.w * std::exp(t.tw * var_size);
        b.h = p.h * std::exp(t.th * var_size);
        const double x1 = std::clamp(b.x1(), 0.0, 1.0);
        const double y1 = std::clamp(b.y1(), 0.0, 1.0);
        const double x2 = std::clamp(b.x2(), 0.0, 1.0);
        const double y2 = std::clamp(b.y2(), 0.0, 1.0);
        out[k] = Box::from_corners(x1, y1, x2, y2);
    }
    return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold, int top_k) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return a < b;
    });
    std::vector<bool> removed(dets.size(), false);
    std::vector<Detection> kept;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const std::size_t k = order[oi];
        if (removed[k]) continue;
        kept.push_back(dets[k]);
        if (static_cast<int>(kept.size()) >= top_k) break;
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            const std::size_t q = order[oj];
            if (!removed[q] && iou(dets[k].box, dets[q].box) > iou_threshold) removed[q] = true;
        }
    }
    return kept;
}

std::vector<Detection> detect(const std::map<std::string, Tensor>& taps, const PriorConfig& cfg,
                              const DetectParams& params) {
    const std::vector<Box> priors = generate_priors(cfg);
    std::vector<Detection> candidates;
    std::vector<Box> cand_priors;
    std::vector<BoxOffsets> cand_offsets;

    std::size_t prior_base = 0;
    for (const auto& tp : cfg.taps) {
        const auto it = taps.find(tp.tap);
        if (it == taps.end()) {
            throw std::runtime_error("detect: tap '" + tp.tap + "' missing from forward outputs");
        }
        const Tensor* tensor = &it->second;
        Tensor dequantized;
        if (tensor->kind == NumericKind::Fixed) {
            dequantized = dequantize_tensor(*tensor);
            tensor = &dequantized;
        }
        const int groups = static_cast<int>(tp.scales.size() * tp.aspect_ratios.size());
        if (tensor->shape.c != groups * 6) {
            throw std::runtime_error("detect: tap '" + tp.tap + "' has " +
                                     std::to_string(tensor->shape.c) + " channels, expected " +
                                     std::to_string(groups * 6));
        }
        if (tensor->shape.h != tp.fh || tensor->shape.w != tp.fw) {
            throw std::runtime_error("detect: tap '" + tp.tap + "' grid mismatch");
        }
        for (int i = 0; i < tp.fh; ++i)
        for (int j = 0; j < tp.fw; ++j)
        for (int g = 0; g < groups; ++g) {
            const std::size_t prior_idx =
                prior_base + (static_cast<std::size_t>(i) * tp.fw + j) * groups + g;
            const std::vector<double> probs =
                softmax({tensor->at(0, g * 6 + 4, i, j), tensor->at(0, g * 6 + 5, i, j)});
            const double score = probs[1];
            if (score < params.score_threshold) continue;
            candidates.push_back(Detection{priors[prior_idx], score});
            cand_priors.push_back(priors[prior_idx]);
            cand_offsets.push_back(BoxOffsets{tensor->at(0, g * 6 + 0, i, j),
                                              tensor->at(0, g * 6 + 1, i, j),
                                              tensor->at(0, g * 6 + 2, i, j),
                                              tensor->at(0, g * 6 + 3, i, j)});
        }
        prior_base += static_cast<std::size_t>(tp.fh) * tp.fw * groups;
    }

    const std::vector<Box> decoded =
        decode_boxes(cand_offsets, cand_priors, cfg.var_center, cfg.var_size);
    for (std::size_t k = 0; k < candidates.size(); ++k) candidates[k].box = decoded[k];

    std::vector<Detection> result = nms(candidates, params.nms_threshold, params.top_k);
    std::stable_sort(result.begin(), result.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return result;
}

}  // namespace fxdetect
