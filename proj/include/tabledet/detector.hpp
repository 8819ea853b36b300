#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tabledet/backbone.hpp"
#include "tabledet/geometry.hpp"
#include "tabledet/image.hpp"
#include "tabledet/tensor.hpp"

namespace tabledet {

struct AnchorSpec {
    std::vector<double> ratios = {0.5, 1.0, 2.0};  // aspect h/w
    double scale = 8.0;                            // anchor side = scale * level stride
};

struct RpnSpec {
    double pos_iou = 0.7;
    double neg_iou = 0.3;
    int sample_total = 256;
    double sample_pos_ratio = 0.5;
    int k_pre = 200;
    int k_post = 50;
    double nms_thr = 0.7;
};

// Three detection stages trained at increasing IoU thresholds, plus the
// toggles that give the ablation ladder.
struct CascadeConfig {
    std::vector<double> stage_ious = {0.5, 0.6, 0.7};
    std::vector<std::array<double, 4>> stage_stds = {{0.1, 0.1, 0.2, 0.2},
                                                     {0.05, 0.05, 0.1, 0.1},
                                                     {0.033, 0.033, 0.067, 0.067}};
    int roi_sample_total = 32;
    double roi_pos_ratio = 0.25;
    double score_thr = 0.8;
    // tables on a page never overlap, so duplicate suppression can be strict
    double nms_thr = 0.25;
    bool composite_enabled = true;
    bool deformable_enabled = true;
};

struct ModelSpec {
    int input_h = 256;
    int input_w = 192;
    std::vector<int> stage_channels = {16, 32, 64, 128};
    std::vector<int> stage_blocks = {1, 1, 1, 1};
    std::vector<int> deformable_stages = {3, 4};  // 1-based stage numbers
    std::vector<int> fpn_stages = {2, 3, 4};      // 1-based stages feeding the pyramid
    int fpn_channels = 24;
    int head_hidden = 128;
    int num_classes = 1;  // foreground classes; plus background in the classifier
    int roi_out = 4;
    double roi_level_base = 24.0;
};

struct DetectorConfig {
    ModelSpec model;
    AnchorSpec anchors;
    RpnSpec rpn;
    CascadeConfig cascade;
};

void validate_detector_config(const DetectorConfig& cfg);

struct RpnHead {
    ConvKernel shared;  // 3x3, group-normalised
    GroupNormLayer shared_norm;
    ConvKernel obj;     // 1x1, one logit per anchor ratio
    ConvKernel delta;   // 1x1, four deltas per anchor ratio

    void collect(const std::string& prefix, NamedParams& out) const;
};

struct Dense {
    Tensor w;  // [in, out]
    Tensor b;  // [out]
    Tensor forward(const Tensor& x) const { return add(matmul(x, w), b); }
};

// Two shared fully-connected layers, then a classifier over
// background+classes and a class-agnostic 4-delta regressor.
struct CascadeHead {
    Dense fc1, fc2;
    Dense cls;
    Dense reg;

    void collect(const std::string& prefix, NamedParams& out) const;
};

struct DetectorModel {
    DetectorConfig cfg;
    CompositeBackbone backbone;
    Fpn fpn;
    RpnHead rpn;
    std::vector<CascadeHead> heads;

    NamedParams params() const;
};

DetectorModel make_detector(const DetectorConfig& cfg, uint64_t seed);

// Model input: ink density (1 - pixel value), single channel.
Tensor image_to_input(const Image& img);

struct LevelShape {
    int h = 0, w = 0, stride = 0;
};

// One anchor per ratio per location, centred on the location, with area
// (scale*stride)^2 and aspect h/w = ratio. Order: (y, x, ratio).
std::vector<BBox> gen_anchors(const LevelShape& level, const AnchorSpec& spec);

FeaturePyramid backbone_pyramid(const DetectorModel& model, const Tensor& image);

struct RpnOut {
    std::vector<Tensor> objectness;  // per level, [ratios, H, W]
    std::vector<Tensor> deltas;      // per level, [4*ratios, H, W]
};
RpnOut rpn_forward(const DetectorModel& model, const FeaturePyramid& pyr);

// Decode deltas onto anchors, clip to the image, keep top k_pre by
// objectness, NMS, cap at k_post.
std::vector<BBox> rpn_proposals(const RpnOut& out, const std::vector<std::vector<BBox>>& anchors,
                                int img_h, int img_w, const RpnSpec& spec);

// RoIAlign-style pooling: out x out cell centres sampled bilinearly on the
// level picked by the log2(sqrt(area)/base) heuristic.
Tensor roi_align(const FeaturePyramid& pyr, const std::vector<BBox>& rois, int out,
                 double level_base);
inline Tensor roi_align(const FeaturePyramid& pyr, const BBox& roi, int out,
                        double level_base) {
    return roi_align(pyr, std::vector<BBox>{roi}, out, level_base);
}

struct HeadOut {
    Tensor scores;  // [n, 1+num_classes] logits
    Tensor deltas;  // [n, 4]
};
HeadOut head_forward(const DetectorModel& model, const Tensor& roi_feats, int head_idx);

struct TrainSample {
    Tensor image;  // [1,H,W]
    std::vector<BBox> gt_boxes;
    std::vector<int> gt_classes;  // 1-based class ids
};

// Discrete decisions of one training step (anchor sampling, proposal sets,
// per-stage assignments). Recording once and replaying keeps the loss a pure
// differentiable function of the parameters, which is what both the
// optimizer and the finite-difference checks need.
struct TrainPlan {
    bool recorded = false;
    std::vector<int64_t> rpn_sampled;  // global anchor ids
    std::vector<double> rpn_obj_targets;
    std::vector<int64_t> rpn_pos;  // global anchor ids of positives
    std::vector<std::array<double, 4>> rpn_box_targets;
    std::vector<std::vector<BBox>> stage_rois;
    std::vector<std::vector<int>> stage_cls_labels;  // 0 background
    std::vector<std::vector<int>> stage_pos_rows;
    std::vector<std::vector<std::array<double, 4>>> stage_box_targets;
};

struct StepLosses {
    double total = 0.0;
    double rpn_cls = 0.0, rpn_box = 0.0;
    std::vector<double> stage_cls, stage_box;
};

// Builds the loss graph for one sample. Fills `plan` on first use, replays
// it afterwards.
Tensor cascade_loss(const DetectorModel& model, const TrainSample& sample, uint64_t step_seed,
                    TrainPlan& plan, StepLosses* breakdown);

// One optimizer step over a sample: plan, loss, backward, SGD.
StepLosses cascade_train_step(const DetectorModel& model, const TrainSample& sample,
                              SgdOptimizer& opt, double lr, uint64_t step_seed);

// Per-stage refined boxes of the inference chain; detect() consumes the
// last entry. Exposed so stage-quality measurements can read all of them.
std::vector<std::vector<BBox>> cascade_box_chain(const DetectorModel& model,
                                                 const FeaturePyramid& pyr,
                                                 const std::vector<BBox>& proposals);

std::vector<Detection> detect(const DetectorModel& model, const Tensor& image);
std::vector<Detection> detect(const DetectorModel& model, const Image& img);

}  // namespace tabledet
