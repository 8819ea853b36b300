#include "tabledet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tabledet/rng.hpp"

namespace tabledet {

namespace {

Dense make_dense(int in, int out, SplitMix64& rng) {
    double limit = std::sqrt(6.0 / in);
    std::vector<double> w(static_cast<size_t>(in) * out);
    for (auto& v : w) v = rng.uniform(-limit, limit);
    Dense d;
    d.w = Tensor::from_data({in, out}, std::move(w), true);
    d.b = Tensor::zeros({out}, true);
    return d;
}

constexpr std::array<double, 4> kUnitStds = {1.0, 1.0, 1.0, 1.0};

int pick_level(const BBox& roi, int n_levels, double base) {
    double scale = std::sqrt(std::max(roi.area(), 1e-12));
    if (!std::isfinite(scale)) return n_levels - 1;
    int k = static_cast<int>(std::floor(std::log2(scale / base + 1e-9)));
    return std::clamp(k, 0, n_levels - 1);
}

// label per anchor: >=0 matched gt, -1 negative, -2 ignored band
std::vector<int> assign_rpn(const std::vector<BBox>& anchors, const std::vector<BBox>& gts,
                            double pos_thr, double neg_thr) {
    std::vector<int> labels(anchors.size(), -1);
    if (gts.empty()) return labels;
    std::vector<double> best_gt_iou(gts.size(), 0.0);
    std::vector<int> best_gt_anchor(gts.size(), -1);
    for (size_t a = 0; a < anchors.size(); ++a) {
        double best = 0.0;
        int best_g = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            double v = iou(anchors[a], gts[g]);
            if (v > best) {
                best = v;
                best_g = static_cast<int>(g);
            }
            if (v > best_gt_iou[g]) {
                best_gt_iou[g] = v;
                best_gt_anchor[g] = static_cast<int>(a);
            }
        }
        if (best >= pos_thr)
            labels[a] = best_g;
        else if (best >= neg_thr)
            labels[a] = -2;
    }
    for (size_t g = 0; g < gts.size(); ++g)
        if (best_gt_anchor[g] >= 0 && best_gt_iou[g] > 0.0)
            labels[static_cast<size_t>(best_gt_anchor[g])] = static_cast<int>(g);
    return labels;
}

}  // namespace

void validate_detector_config(const DetectorConfig& cfg) {
    const auto& m = cfg.model;
    if (m.stage_channels.empty() || m.stage_channels.size() != m.stage_blocks.size())
        throw std::invalid_argument("stage_channels/stage_blocks mismatch");
    for (int s : m.fpn_stages)
        if (s < 1 || s > static_cast<int>(m.stage_channels.size()))
            throw std::invalid_argument("fpn_stages out of range");
    if (m.fpn_stages.size() < 2) throw std::invalid_argument("need at least 2 fpn stages");
    if (cfg.anchors.scale <= 0.0) throw std::invalid_argument("anchor scale must be positive");
    for (double r : cfg.anchors.ratios)
        if (r <= 0.0) throw std::invalid_argument("anchor ratios must be positive");
    const auto& c = cfg.cascade;
    if (c.stage_ious.empty() || c.stage_ious.size() != c.stage_stds.size())
        throw std::invalid_argument("stage_ious/stage_stds mismatch");
    for (size_t i = 0; i < c.stage_ious.size(); ++i) {
        if (c.stage_ious[i] <= 0.0 || c.stage_ious[i] >= 1.0)
            throw std::invalid_argument("stage iou thresholds must lie in (0,1)");
        if (i > 0 && c.stage_ious[i] <= c.stage_ious[i - 1])
            throw std::invalid_argument("stage iou thresholds must strictly increase");
    }
    if (c.score_thr < 0.0 || c.score_thr > 1.0)
        throw std::invalid_argument("score_thr must lie in [0,1]");
    if (c.nms_thr <= 0.0 || c.nms_thr >= 1.0)
        throw std::invalid_argument("nms_thr must lie in (0,1)");
    if (cfg.rpn.k_pre < cfg.rpn.k_post) throw std::invalid_argument("rpn k_pre < k_post");
    int down = 1 << static_cast<int>(m.stage_channels.size());
    if (m.input_h % down != 0 || m.input_w % down != 0)
        throw std::invalid_argument("input size must be divisible by " + std::to_string(down));
}

void RpnHead::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".shared.w", shared.w);
    out.emplace_back(prefix + ".shared.b", shared.b);
    out.emplace_back(prefix + ".sharedgn.g", shared_norm.gamma);
    out.emplace_back(prefix + ".sharedgn.b", shared_norm.beta);
    out.emplace_back(prefix + ".obj.w", obj.w);
    out.emplace_back(prefix + ".obj.b", obj.b);
    out.emplace_back(prefix + ".delta.w", delta.w);
    out.emplace_back(prefix + ".delta.b", delta.b);
}

void CascadeHead::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".fc1.w", fc1.w);
    out.emplace_back(prefix + ".fc1.b", fc1.b);
    out.emplace_back(prefix + ".fc2.w", fc2.w);
    out.emplace_back(prefix + ".fc2.b", fc2.b);
    out.emplace_back(prefix + ".cls.w", cls.w);
    out.emplace_back(prefix + ".cls.b", cls.b);
    out.emplace_back(prefix + ".reg.w", reg.w);
    out.emplace_back(prefix + ".reg.b", reg.b);
}

NamedParams DetectorModel::params() const {
    NamedParams out;
    backbone.collect("backbone", out);
    fpn.collect("fpn", out);
    rpn.collect("rpn", out);
    for (size_t i = 0; i < heads.size(); ++i)
        heads[i].collect("head" + std::to_string(i + 1), out);
    return out;
}

DetectorModel make_detector(const DetectorConfig& cfg, uint64_t seed) {
    validate_detector_config(cfg);
    SplitMix64 rng(mix_seed(seed, 0xD37EC7));
    DetectorModel model;
    model.cfg = cfg;

    const auto& m = cfg.model;
    std::vector<StageSpec> specs;
    for (size_t i = 0; i < m.stage_channels.size(); ++i) {
        StageSpec s;
        s.out_channels = m.stage_channels[i];
        s.num_blocks = m.stage_blocks[i];
        s.downsample = true;
        s.deformable = cfg.cascade.deformable_enabled &&
                       std::find(m.deformable_stages.begin(), m.deformable_stages.end(),
                                 static_cast<int>(i) + 1) != m.deformable_stages.end();
        specs.push_back(s);
    }
    model.backbone = make_composite_backbone(1, specs, cfg.cascade.composite_enabled, rng);

    std::vector<int> fpn_in, fpn_strides;
    for (int s : m.fpn_stages) {
        fpn_in.push_back(m.stage_channels[static_cast<size_t>(s) - 1]);
        fpn_strides.push_back(1 << s);
    }
    model.fpn = make_fpn(fpn_in, fpn_strides, m.fpn_channels, rng);

    int n_ratios = static_cast<int>(cfg.anchors.ratios.size());
    model.rpn.shared =
        make_conv_kernel(m.fpn_channels, m.fpn_channels, 3, 3, 1, 1, WeightInit::Xavier, &rng);
    model.rpn.shared_norm = make_group_norm(m.fpn_channels);
    model.rpn.obj = make_conv_kernel(n_ratios, m.fpn_channels, 1, 1, 1, 0, WeightInit::Xavier, &rng);
    model.rpn.delta =
        make_conv_kernel(4 * n_ratios, m.fpn_channels, 1, 1, 1, 0, WeightInit::Xavier, &rng);

    int feat_dim = m.fpn_channels * m.roi_out * m.roi_out;
    for (size_t t = 0; t < cfg.cascade.stage_ious.size(); ++t) {
        CascadeHead head;
        head.fc1 = make_dense(feat_dim, m.head_hidden, rng);
        head.fc2 = make_dense(m.head_hidden, m.head_hidden, rng);
        head.cls = make_dense(m.head_hidden, 1 + m.num_classes, rng);
        head.reg = make_dense(m.head_hidden, 4, rng);
        model.heads.push_back(std::move(head));
    }
    return model;
}

Tensor image_to_input(const Image& img) {
    // ink density, standardised around typical document statistics
    std::vector<double> data(img.pix.size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = (1.0 - img.pix[i] - 0.1) / 0.3;
    return Tensor::from_data({1, img.h, img.w}, std::move(data));
}

std::vector<BBox> gen_anchors(const LevelShape& level, const AnchorSpec& spec) {
    if (level.h <= 0 || level.w <= 0 || level.stride <= 0)
        throw std::invalid_argument("bad level shape");
    double side = spec.scale * level.stride;
    double area = side * side;
    std::vector<BBox> out;
    out.reserve(static_cast<size_t>(level.h) * level.w * spec.ratios.size());
    for (int y = 0; y < level.h; ++y) {
        for (int x = 0; x < level.w; ++x) {
            double cx = (x + 0.5) * level.stride;
            double cy = (y + 0.5) * level.stride;
            for (double ratio : spec.ratios) {
                double w = std::sqrt(area / ratio);
                double h = std::sqrt(area * ratio);
                out.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
            }
        }
    }
    return out;
}

FeaturePyramid backbone_pyramid(const DetectorModel& model, const Tensor& image) {
    std::vector<Tensor> stage_outs = model.backbone.forward(image);
    std::vector<Tensor> selected;
    for (int s : model.cfg.model.fpn_stages)
        selected.push_back(stage_outs[static_cast<size_t>(s) - 1]);
    return model.fpn.forward(selected);
}

RpnOut rpn_forward(const DetectorModel& model, const FeaturePyramid& pyr) {
    if (pyr.levels.empty()) throw std::invalid_argument("empty pyramid");
    RpnOut out;
    for (const auto& level : pyr.levels) {
        Tensor shared = relu(model.rpn.shared_norm.forward(conv2d(level, model.rpn.shared)));
        out.objectness.push_back(conv2d(shared, model.rpn.obj));
        out.deltas.push_back(conv2d(shared, model.rpn.delta));
    }
    return out;
}

namespace {

struct ScoredBox {
    BBox box;
    double score;
    size_t order;
};

// Decodes every anchor of every level into a scored candidate list.
std::vector<ScoredBox> decode_rpn(const RpnOut& out, const std::vector<std::vector<BBox>>& anchors,
                                  int img_h, int img_w) {
    std::vector<ScoredBox> cands;
    size_t order = 0;
    for (size_t l = 0; l < out.objectness.size(); ++l) {
        const Tensor& obj = out.objectness[l];
        const Tensor& del = out.deltas[l];
        int a = obj.dim(0), h = obj.dim(1), w = obj.dim(2);
        int64_t plane = static_cast<int64_t>(h) * w;
        const auto& od = obj.data();
        const auto& dd = del.data();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ai = 0; ai < a; ++ai) {
                    size_t anchor_idx = (static_cast<size_t>(y) * w + x) * a + ai;
                    double logit = od[static_cast<size_t>(ai) * plane + y * w + x];
                    double score = 1.0 / (1.0 + std::exp(-logit));
                    std::array<double, 4> deltas;
                    for (int j = 0; j < 4; ++j)
                        deltas[static_cast<size_t>(j)] =
                            dd[static_cast<size_t>(4 * ai + j) * plane + y * w + x];
                    BBox b = decode_deltas(anchors[l][anchor_idx], deltas, kUnitStds,
                                           ClipRect{static_cast<double>(img_w),
                                                    static_cast<double>(img_h)});
                    // non-finite scores would poison the sort comparators
                    if (b.valid() && std::isfinite(score)) cands.push_back({b, score, order});
                    ++order;
                }
    }
    return cands;
}

}  // namespace

std::vector<BBox> rpn_proposals(const RpnOut& out, const std::vector<std::vector<BBox>>& anchors,
                                int img_h, int img_w, const RpnSpec& spec) {
    if (spec.k_pre < spec.k_post) throw std::invalid_argument("k_pre must be >= k_post");
    std::vector<ScoredBox> cands = decode_rpn(out, anchors, img_h, img_w);
    std::sort(cands.begin(), cands.end(), [](const ScoredBox& a, const ScoredBox& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.order < b.order;
    });
    if (static_cast<int>(cands.size()) > spec.k_pre) cands.resize(static_cast<size_t>(spec.k_pre));

    std::vector<Detection> dets;
    dets.reserve(cands.size());
    for (const auto& c : cands) dets.push_back({c.box, c.score, 1, -1});
    std::vector<Detection> kept = nms(dets, spec.nms_thr);
    if (static_cast<int>(kept.size()) > spec.k_post) kept.resize(static_cast<size_t>(spec.k_post));

    std::vector<BBox> boxes;
    boxes.reserve(kept.size());
    for (const auto& d : kept) boxes.push_back(d.box);
    return boxes;
}

Tensor roi_align(const FeaturePyramid& pyr, const std::vector<BBox>& rois, int out,
                 double level_base) {
    if (pyr.levels.empty()) throw std::invalid_argument("empty pyramid");
    if (out <= 0) throw std::invalid_argument("roi_align output size must be positive");
    for (const auto& r : rois)
        if (!r.valid()) throw std::invalid_argument("degenerate roi");
    int n = static_cast<int>(rois.size());
    int c = pyr.levels[0].dim(0);
    int n_levels = static_cast<int>(pyr.levels.size());

    std::vector<int> levels(rois.size());
    for (size_t i = 0; i < rois.size(); ++i)
        levels[i] = pick_level(rois[i], n_levels, level_base);

    auto sample_plane = [](const double* plane, int h, int w, double y, double x) {
        if (y <= -1.0 || y >= static_cast<double>(h) || x <= -1.0 || x >= static_cast<double>(w))
            return 0.0;
        int yl = static_cast<int>(std::floor(y));
        int xl = static_cast<int>(std::floor(x));
        int yh = yl + 1, xh = xl + 1;
        double wy = y - yl, wx = x - xl;
        double v = 0.0;
        if (yl >= 0 && xl >= 0) v += (1 - wy) * (1 - wx) * plane[yl * w + xl];
        if (yl >= 0 && xh < w) v += (1 - wy) * wx * plane[yl * w + xh];
        if (yh < h && xl >= 0) v += wy * (1 - wx) * plane[yh * w + xl];
        if (yh < h && xh < w) v += wy * wx * plane[yh * w + xh];
        return v;
    };

    std::vector<double> data(static_cast<size_t>(n) * c * out * out, 0.0);
    for (int i = 0; i < n; ++i) {
        const BBox& r = rois[static_cast<size_t>(i)];
        const Tensor& level = pyr.levels[static_cast<size_t>(levels[static_cast<size_t>(i)])];
        int stride = pyr.strides[static_cast<size_t>(levels[static_cast<size_t>(i)])];
        int h = level.dim(1), w = level.dim(2);
        for (int ci = 0; ci < c; ++ci) {
            const double* plane = level.data().data() + static_cast<size_t>(ci) * h * w;
            for (int gy = 0; gy < out; ++gy) {
                double cy = r.y1 + (gy + 0.5) * r.height() / out;
                double fy = cy / stride - 0.5;
                for (int gx = 0; gx < out; ++gx) {
                    double cx = r.x1 + (gx + 0.5) * r.width() / out;
                    double fx = cx / stride - 0.5;
                    data[((static_cast<size_t>(i) * c + ci) * out + gy) * out + gx] =
                        sample_plane(plane, h, w, fy, fx);
                }
            }
        }
    }

    auto node = std::make_shared<TensorNode>();
    node->shape = {n, c, out, out};
    node->data = std::move(data);
    bool needs = false;
    for (const auto& l : pyr.levels) needs = needs || l.requires_grad();
    if (GradMode::enabled() && needs) {
        node->requires_grad = true;
        std::vector<NodePtr> level_nodes;
        for (const auto& l : pyr.levels) level_nodes.push_back(l.node);
        node->parents = level_nodes;
        auto rois_copy = rois;
        auto levels_copy = levels;
        auto strides_copy = pyr.strides;
        node->backward = [=](TensorNode& self) {
            for (size_t i = 0; i < rois_copy.size(); ++i) {
                auto& ln = level_nodes[static_cast<size_t>(levels_copy[i])];
                if (!ln->requires_grad) continue;
                ln->ensure_grad();
                int stride = strides_copy[static_cast<size_t>(levels_copy[i])];
                int h = ln->shape[1], w = ln->shape[2];
                const BBox& r = rois_copy[i];
                for (int ci = 0; ci < c; ++ci) {
                    double* gplane = ln->grad.data() + static_cast<size_t>(ci) * h * w;
                    for (int gy = 0; gy < out; ++gy) {
                        double fy = (r.y1 + (gy + 0.5) * r.height() / out) / stride - 0.5;
                        if (fy <= -1.0 || fy >= static_cast<double>(h)) continue;
                        for (int gx = 0; gx < out; ++gx) {
                            double fx = (r.x1 + (gx + 0.5) * r.width() / out) / stride - 0.5;
                            if (fx <= -1.0 || fx >= static_cast<double>(w)) continue;
                            double g = self.grad[((i * c + ci) * out + gy) * out + gx];
                            if (g == 0.0) continue;
                            int yl = static_cast<int>(std::floor(fy));
                            int xl = static_cast<int>(std::floor(fx));
                            int yh = yl + 1, xh = xl + 1;
                            double wy = fy - yl, wx = fx - xl;
                            if (yl >= 0 && xl >= 0) gplane[yl * w + xl] += (1 - wy) * (1 - wx) * g;
                            if (yl >= 0 && xh < w) gplane[yl * w + xh] += (1 - wy) * wx * g;
                            if (yh < h && xl >= 0) gplane[yh * w + xl] += wy * (1 - wx) * g;
                            if (yh < h && xh < w) gplane[yh * w + xh] += wy * wx * g;
                        }
                    }
                }
            }
        };
    }
    return Tensor(node);
}

HeadOut head_forward(const DetectorModel& model, const Tensor& roi_feats, int head_idx) {
    if (head_idx < 0 || head_idx >= static_cast<int>(model.heads.size()))
        throw std::out_of_range("head index " + std::to_string(head_idx));
    const CascadeHead& head = model.heads[static_cast<size_t>(head_idx)];
    int n = roi_feats.dim(0);
    int feat = static_cast<int>(roi_feats.numel() / n);
    Tensor x = reshape(roi_feats, {n, feat});
    x = relu(head.fc1.forward(x));
    x = relu(head.fc2.forward(x));
    return {head.cls.forward(x), head.reg.forward(x)};
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

struct FlatRpn {
    Tensor obj;                          // [N] logits in anchor order
    Tensor deltas;                       // [N,4]
    std::vector<BBox> anchors;           // flat
    std::vector<std::vector<BBox>> per_level;
};

FlatRpn flatten_rpn(const DetectorModel& model, const RpnOut& out, const FeaturePyramid& pyr) {
    FlatRpn flat;
    std::vector<Tensor> obj_parts, delta_parts;
    for (size_t l = 0; l < out.objectness.size(); ++l) {
        const Tensor& obj = out.objectness[l];
        int a = obj.dim(0), h = obj.dim(1), w = obj.dim(2);
        int64_t plane = static_cast<int64_t>(h) * w;
        std::vector<int64_t> perm, perm4;
        perm.reserve(static_cast<size_t>(a) * plane);
        perm4.reserve(static_cast<size_t>(4 * a) * plane);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ai = 0; ai < a; ++ai) {
                    perm.push_back(static_cast<int64_t>(ai) * plane + y * w + x);
                    for (int j = 0; j < 4; ++j)
                        perm4.push_back(static_cast<int64_t>(4 * ai + j) * plane + y * w + x);
                }
        int count = static_cast<int>(perm.size());
        obj_parts.push_back(gather_flat(obj, std::move(perm), {count}));
        delta_parts.push_back(gather_flat(out.deltas[l], std::move(perm4), {count, 4}));
        LevelShape shape{h, w, pyr.strides[l]};
        flat.per_level.push_back(gen_anchors(shape, model.cfg.anchors));
        flat.anchors.insert(flat.anchors.end(), flat.per_level.back().begin(),
                            flat.per_level.back().end());
    }
    flat.obj = concat0(obj_parts);
    flat.deltas = concat0(delta_parts);
    return flat;
}

}  // namespace

Tensor cascade_loss(const DetectorModel& model, const TrainSample& sample, uint64_t step_seed,
                    TrainPlan& plan, StepLosses* breakdown) {
    const auto& cfg = model.cfg;
    int n_stages = static_cast<int>(cfg.cascade.stage_ious.size());
    int img_h = sample.image.dim(1), img_w = sample.image.dim(2);

    FeaturePyramid pyr = backbone_pyramid(model, sample.image);
    RpnOut rpn_out = rpn_forward(model, pyr);
    FlatRpn flat = flatten_rpn(model, rpn_out, pyr);

    if (!plan.recorded) {
        std::vector<int> labels =
            assign_rpn(flat.anchors, sample.gt_boxes, cfg.rpn.pos_iou, cfg.rpn.neg_iou);
        // compact away the ignore band, sample, then map back to anchor ids
        std::vector<int> cand_ids;
        std::vector<int> cand_assign;
        for (size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == -2) continue;
            cand_ids.push_back(static_cast<int>(i));
            cand_assign.push_back(labels[i] >= 0 ? labels[i] : kBackground);
        }
        std::vector<int> picked = sample_rois(cand_assign, cfg.rpn.sample_pos_ratio,
                                              cfg.rpn.sample_total, mix_seed(step_seed, 1));
        for (int p : picked) {
            int anchor_id = cand_ids[static_cast<size_t>(p)];
            plan.rpn_sampled.push_back(anchor_id);
            int gt = labels[static_cast<size_t>(anchor_id)];
            plan.rpn_obj_targets.push_back(gt >= 0 ? 1.0 : 0.0);
            if (gt >= 0) {
                plan.rpn_pos.push_back(anchor_id);
                plan.rpn_box_targets.push_back(encode_deltas(
                    flat.anchors[static_cast<size_t>(anchor_id)],
                    sample.gt_boxes[static_cast<size_t>(gt)], kUnitStds));
            }
        }
    }

    StepLosses losses;
    losses.stage_cls.assign(static_cast<size_t>(n_stages), 0.0);
    losses.stage_box.assign(static_cast<size_t>(n_stages), 0.0);

    Tensor total = Tensor::scalar(0.0);
    if (!plan.rpn_sampled.empty()) {
        Tensor sampled = gather_flat(flat.obj, plan.rpn_sampled,
                                     {static_cast<int>(plan.rpn_sampled.size())});
        Tensor rpn_cls = sigmoid_bce_with_logits(sampled, plan.rpn_obj_targets);
        losses.rpn_cls = rpn_cls.item();
        total = add(total, rpn_cls);
    }
    if (!plan.rpn_pos.empty()) {
        std::vector<int64_t> idx;
        std::vector<double> tgt;
        for (size_t i = 0; i < plan.rpn_pos.size(); ++i) {
            for (int j = 0; j < 4; ++j) {
                idx.push_back(plan.rpn_pos[i] * 4 + j);
                tgt.push_back(plan.rpn_box_targets[i][static_cast<size_t>(j)]);
            }
        }
        int p = static_cast<int>(plan.rpn_pos.size());
        Tensor pred = gather_flat(flat.deltas, std::move(idx), {p, 4});
        Tensor rpn_box = smooth_l1(pred, Tensor::from_data({p, 4}, std::move(tgt)), 1.0);
        losses.rpn_box = rpn_box.item();
        total = add(total, rpn_box);
    }

    if (!plan.recorded) {
        plan.stage_rois.resize(static_cast<size_t>(n_stages));
        plan.stage_cls_labels.resize(static_cast<size_t>(n_stages));
        plan.stage_pos_rows.resize(static_cast<size_t>(n_stages));
        plan.stage_box_targets.resize(static_cast<size_t>(n_stages));
    }

    std::vector<BBox> current;
    if (!plan.recorded) {
        // selection reads forward values only; keep it off the graph
        NoGradGuard ng;
        current = rpn_proposals(rpn_out, flat.per_level, img_h, img_w, cfg.rpn);
    }

    SplitMix64 jitter_rng(mix_seed(step_seed, 0x717));
    for (int t = 0; t < n_stages; ++t) {
        size_t ut = static_cast<size_t>(t);
        if (!plan.recorded) {
            // GT boxes plus jittered copies join the candidate pool during
            // training: every stage sees positives across the whole IoU band
            // it must score at inference, not just whatever the proposals
            // happen to cover
            for (const BBox& g : sample.gt_boxes) {
                current.push_back(g);
                for (int j = 0; j < 4; ++j) {
                    double dx = jitter_rng.uniform(-0.09, 0.09) * g.width();
                    double dy = jitter_rng.uniform(-0.09, 0.09) * g.height();
                    double sw = 1.0 + jitter_rng.uniform(-0.15, 0.15);
                    double sh = 1.0 + jitter_rng.uniform(-0.15, 0.15);
                    double cx = g.cx() + dx, cy = g.cy() + dy;
                    double w2 = 0.5 * g.width() * sw, h2 = 0.5 * g.height() * sh;
                    BBox jb{cx - w2, cy - h2, cx + w2, cy + h2};
                    jb.x1 = std::clamp(jb.x1, 0.0, static_cast<double>(img_w));
                    jb.x2 = std::clamp(jb.x2, 0.0, static_cast<double>(img_w));
                    jb.y1 = std::clamp(jb.y1, 0.0, static_cast<double>(img_h));
                    jb.y2 = std::clamp(jb.y2, 0.0, static_cast<double>(img_h));
                    if (jb.valid()) current.push_back(jb);
                }
            }
            std::vector<int> labels = assign(current, sample.gt_boxes, cfg.cascade.stage_ious[ut]);
            std::vector<int> picked = sample_rois(labels, cfg.cascade.roi_pos_ratio,
                                                  cfg.cascade.roi_sample_total,
                                                  mix_seed(step_seed, 10 + static_cast<uint64_t>(t)));
            for (size_t row = 0; row < picked.size(); ++row) {
                int p = picked[row];
                int gt = labels[static_cast<size_t>(p)];
                plan.stage_rois[ut].push_back(current[static_cast<size_t>(p)]);
                plan.stage_cls_labels[ut].push_back(
                    gt >= 0 ? sample.gt_classes[static_cast<size_t>(gt)] : 0);
                if (gt >= 0) {
                    plan.stage_pos_rows[ut].push_back(static_cast<int>(row));
                    plan.stage_box_targets[ut].push_back(
                        encode_deltas(current[static_cast<size_t>(p)],
                                      sample.gt_boxes[static_cast<size_t>(gt)],
                                      cfg.cascade.stage_stds[ut]));
                }
            }
        }
        const auto& rois = plan.stage_rois[ut];
        if (rois.empty()) continue;

        Tensor feats = roi_align(pyr, rois, cfg.model.roi_out, cfg.model.roi_level_base);
        HeadOut head = head_forward(model, feats, t);

        Tensor cls_loss = softmax_cross_entropy(head.scores, plan.stage_cls_labels[ut]);
        losses.stage_cls[ut] = cls_loss.item();
        total = add(total, cls_loss);

        if (!plan.stage_pos_rows[ut].empty()) {
            std::vector<int64_t> idx;
            std::vector<double> tgt;
            for (size_t i = 0; i < plan.stage_pos_rows[ut].size(); ++i) {
                for (int j = 0; j < 4; ++j) {
                    idx.push_back(static_cast<int64_t>(plan.stage_pos_rows[ut][i]) * 4 + j);
                    tgt.push_back(plan.stage_box_targets[ut][i][static_cast<size_t>(j)]);
                }
            }
            int p = static_cast<int>(plan.stage_pos_rows[ut].size());
            Tensor pred = gather_flat(head.deltas, std::move(idx), {p, 4});
            Tensor box_loss = smooth_l1(pred, Tensor::from_data({p, 4}, std::move(tgt)), 1.0);
            losses.stage_box[ut] = box_loss.item();
            total = add(total, box_loss);
        }

        if (!plan.recorded && t + 1 < n_stages) {
            // this stage's decoded boxes become the next stage's proposals
            current.clear();
            const auto& dd = head.deltas.data();
            for (size_t row = 0; row < rois.size(); ++row) {
                std::array<double, 4> d = {dd[row * 4], dd[row * 4 + 1], dd[row * 4 + 2],
                                           dd[row * 4 + 3]};
                BBox b = decode_deltas(rois[row], d, cfg.cascade.stage_stds[ut],
                                       ClipRect{static_cast<double>(img_w),
                                                static_cast<double>(img_h)});
                if (b.valid()) current.push_back(b);
            }
        }
    }

    losses.total = total.item();
    if (breakdown) *breakdown = losses;
    plan.recorded = true;
    return total;
}

StepLosses cascade_train_step(const DetectorModel& model, const TrainSample& sample,
                              SgdOptimizer& opt, double lr, uint64_t step_seed) {
    opt.zero_grad();
    TrainPlan plan;
    StepLosses losses;
    Tensor loss = cascade_loss(model, sample, step_seed, plan, &losses);
    backward(loss);
    opt.step(lr);
    return losses;
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

std::vector<std::vector<BBox>> cascade_box_chain(const DetectorModel& model,
                                                 const FeaturePyramid& pyr,
                                                 const std::vector<BBox>& proposals) {
    const auto& cfg = model.cfg;
    double img_w = 0.0, img_h = 0.0;
    // image extent from the finest level
    img_h = static_cast<double>(pyr.levels[0].dim(1) * pyr.strides[0]);
    img_w = static_cast<double>(pyr.levels[0].dim(2) * pyr.strides[0]);

    std::vector<std::vector<BBox>> chain;
    std::vector<BBox> current = proposals;
    for (size_t t = 0; t < model.heads.size(); ++t) {
        if (current.empty()) {
            chain.push_back({});
            continue;
        }
        Tensor feats = roi_align(pyr, current, cfg.model.roi_out, cfg.model.roi_level_base);
        HeadOut head = head_forward(model, feats, static_cast<int>(t));
        const auto& dd = head.deltas.data();
        std::vector<BBox> refined;
        for (size_t row = 0; row < current.size(); ++row) {
            std::array<double, 4> d = {dd[row * 4], dd[row * 4 + 1], dd[row * 4 + 2],
                                       dd[row * 4 + 3]};
            BBox b = decode_deltas(current[row], d, cfg.cascade.stage_stds[t],
                                   ClipRect{img_w, img_h});
            if (b.valid()) refined.push_back(b);
        }
        chain.push_back(refined);
        current = refined;
    }
    return chain;
}

std::vector<Detection> detect(const DetectorModel& model, const Tensor& image) {
    NoGradGuard ng;
    const auto& cfg = model.cfg;
    int img_h = image.dim(1), img_w = image.dim(2);

    FeaturePyramid pyr = backbone_pyramid(model, image);
    RpnOut rpn_out = rpn_forward(model, pyr);
    std::vector<std::vector<BBox>> anchors;
    for (size_t l = 0; l < pyr.levels.size(); ++l) {
        LevelShape shape{pyr.levels[l].dim(1), pyr.levels[l].dim(2), pyr.strides[l]};
        anchors.push_back(gen_anchors(shape, cfg.anchors));
    }
    std::vector<BBox> proposals = rpn_proposals(rpn_out, anchors, img_h, img_w, cfg.rpn);
    if (proposals.empty()) return {};

    std::vector<std::vector<BBox>> chain = cascade_box_chain(model, pyr, proposals);
    const std::vector<BBox>& final_boxes = chain.back();
    if (final_boxes.empty()) return {};

    // final class score: mean of the three heads' posteriors on the final boxes
    Tensor feats = roi_align(pyr, final_boxes, cfg.model.roi_out, cfg.model.roi_level_base);
    int n = static_cast<int>(final_boxes.size());
    int n_cls = 1 + cfg.model.num_classes;
    std::vector<double> mean_probs(static_cast<size_t>(n) * n_cls, 0.0);
    for (size_t t = 0; t < model.heads.size(); ++t) {
        Tensor probs = softmax_rows(head_forward(model, feats, static_cast<int>(t)).scores);
        for (size_t i = 0; i < mean_probs.size(); ++i) mean_probs[i] += probs.data()[i];
    }
    for (auto& v : mean_probs) v /= static_cast<double>(model.heads.size());

    std::vector<Detection> dets;
    for (int i = 0; i < n; ++i) {
        int best_cls = 1;
        double best = -1.0;
        for (int cl = 1; cl < n_cls; ++cl) {
            double p = mean_probs[static_cast<size_t>(i) * n_cls + cl];
            if (p > best) {
                best = p;
                best_cls = cl;
            }
        }
        if (best >= cfg.cascade.score_thr)
            dets.push_back({final_boxes[static_cast<size_t>(i)], best, best_cls, -1});
    }

    // class-wise NMS
    std::vector<Detection> out;
    for (int cl = 1; cl < n_cls; ++cl) {
        std::vector<Detection> cls_dets;
        for (const auto& d : dets)
            if (d.class_id == cl) cls_dets.push_back(d);
        if (cls_dets.empty()) continue;
        std::vector<Detection> kept = nms(cls_dets, cfg.cascade.nms_thr);
        out.insert(out.end(), kept.begin(), kept.end());
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return out;
}

std::vector<Detection> detect(const DetectorModel& model, const Image& img) {
    return detect(model, image_to_input(img));
}

}  // namespace tabledet
