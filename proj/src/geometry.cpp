#include "tabledet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tabledet/rng.hpp"

namespace tabledet {

double iou(const BBox& a, const BBox& b) {
    double ix1 = std::max(a.x1, b.x1);
    double iy1 = std::max(a.y1, b.y1);
    double ix2 = std::min(a.x2, b.x2);
    double iy2 = std::min(a.y2, b.y2);
    double iw = ix2 - ix1, ih = iy2 - iy1;
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    double inter = iw * ih;
    double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::array<double, 4> encode_deltas(const BBox& anchor, const BBox& target,
                                    const std::array<double, 4>& stds) {
    double aw = anchor.width(), ah = anchor.height();
    return {((target.cx() - anchor.cx()) / aw) / stds[0],
            ((target.cy() - anchor.cy()) / ah) / stds[1],
            std::log(target.width() / aw) / stds[2],
            std::log(target.height() / ah) / stds[3]};
}

BBox decode_deltas(const BBox& anchor, const std::array<double, 4>& deltas,
                   const std::array<double, 4>& stds, const std::optional<ClipRect>& clip,
                   double max_log_ratio) {
    double dx = deltas[0] * stds[0];
    double dy = deltas[1] * stds[1];
    double dw = std::clamp(deltas[2] * stds[2], -max_log_ratio, max_log_ratio);
    double dh = std::clamp(deltas[3] * stds[3], -max_log_ratio, max_log_ratio);
    double cx = anchor.cx() + dx * anchor.width();
    double cy = anchor.cy() + dy * anchor.height();
    double w = anchor.width() * std::exp(dw);
    double h = anchor.height() * std::exp(dh);
    BBox out{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    if (clip) {
        out.x1 = std::clamp(out.x1, 0.0, clip->w);
        out.x2 = std::clamp(out.x2, 0.0, clip->w);
        out.y1 = std::clamp(out.y1, 0.0, clip->h);
        out.y2 = std::clamp(out.y2, 0.0, clip->h);
    }
    return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thr) {
    if (iou_thr <= 0.0 || iou_thr >= 1.0) throw std::invalid_argument("nms iou_thr must be in (0,1)");
    std::vector<size_t> order(dets.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return a < b;
    });
    std::vector<Detection> kept;
    for (size_t i : order) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (iou(dets[i].box, k.box) > iou_thr) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(dets[i]);
    }
    return kept;
}

std::vector<int> assign(const std::vector<BBox>& proposals, const std::vector<BBox>& gts,
                        double pos_thr) {
    if (pos_thr <= 0.0 || pos_thr >= 1.0) throw std::invalid_argument("pos_thr must be in (0,1)");
    std::vector<int> labels(proposals.size(), kBackground);
    if (gts.empty()) return labels;

    std::vector<double> best_gt_iou(gts.size(), 0.0);
    std::vector<int> best_gt_prop(gts.size(), -1);
    for (size_t p = 0; p < proposals.size(); ++p) {
        double best = 0.0;
        int best_g = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            double v = iou(proposals[p], gts[g]);
            if (v > best) {
                best = v;
                best_g = static_cast<int>(g);
            }
            if (v > best_gt_iou[g]) {
                best_gt_iou[g] = v;
                best_gt_prop[g] = static_cast<int>(p);
            }
        }
        if (best_g >= 0 && best >= pos_thr) labels[p] = best_g;
    }
    // low-quality match rescue: every GT keeps its best proposal
    for (size_t g = 0; g < gts.size(); ++g)
        if (best_gt_prop[g] >= 0 && best_gt_iou[g] > 0.0)
            labels[static_cast<size_t>(best_gt_prop[g])] = static_cast<int>(g);
    return labels;
}

std::vector<int> sample_rois(const std::vector<int>& assignments, double ratio, int total,
                             uint64_t seed) {
    if (total <= 0) throw std::invalid_argument("sample_rois total must be positive");
    std::vector<int> pos, neg;
    for (size_t i = 0; i < assignments.size(); ++i)
        (assignments[i] == kBackground ? neg : pos).push_back(static_cast<int>(i));

    SplitMix64 rng(seed);
    auto take = [&rng](std::vector<int>& pool, size_t n) {
        // partial Fisher-Yates
        for (size_t i = 0; i < n; ++i) {
            size_t j = i + static_cast<size_t>(rng.below(pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(n);
    };
    size_t n_pos = std::min(pos.size(), static_cast<size_t>(ratio * total));
    take(pos, n_pos);
    size_t n_neg = std::min(neg.size(), static_cast<size_t>(total) - n_pos);
    take(neg, n_neg);

    std::vector<int> out;
    out.reserve(n_pos + n_neg);
    out.insert(out.end(), pos.begin(), pos.end());
    out.insert(out.end(), neg.begin(), neg.end());
    return out;
}

}  // namespace tabledet
