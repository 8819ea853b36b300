#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace tabledet {

// Axis-aligned box, continuous pixel corners, x2 > x1 and y2 > y1.
struct BBox {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
    bool valid() const { return x2 > x1 && y2 > y1; }
};

struct Detection {
    BBox box;
    double score = 0.0;
    int class_id = 1;
    int scale_tag = -1;  // which test scale produced it; -1 outside multi-scale runs
};

double iou(const BBox& a, const BBox& b);

// (dx, dy, dw, dh) parameterisation of target relative to anchor, divided
// componentwise by stds.
std::array<double, 4> encode_deltas(const BBox& anchor, const BBox& target,
                                    const std::array<double, 4>& stds);

// Exact inverse of encode_deltas. When clip is given the result is clamped
// to [0,w]x[0,h]; a box that degenerates after clipping is the caller's to
// drop (check .valid()). log-space deltas are capped at +-max_log_ratio to
// keep untrained heads from overflowing exp().
struct ClipRect {
    double w, h;
};
BBox decode_deltas(const BBox& anchor, const std::array<double, 4>& deltas,
                   const std::array<double, 4>& stds,
                   const std::optional<ClipRect>& clip = std::nullopt,
                   double max_log_ratio = 8.0);

// Greedy NMS by descending score (ties broken by input index); suppresses
// IoU strictly greater than iou_thr. Kept boxes stay in (score, index) order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thr);

constexpr int kBackground = -1;

// Per-proposal label: index of the argmax-IoU ground truth when that IoU
// clears pos_thr, else background. Each ground truth additionally rescues
// its best-overlapping proposal (IoU > 0) so no GT starves.
std::vector<int> assign(const std::vector<BBox>& proposals, const std::vector<BBox>& gts,
                        double pos_thr);

// Samples up to `total` proposal indices: positives capped at ratio*total,
// the remainder random negatives. Deterministic under seed.
std::vector<int> sample_rois(const std::vector<int>& assignments, double ratio, int total,
                             uint64_t seed);

}  // namespace tabledet
