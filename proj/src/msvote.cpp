#include "tabledet/msvote.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace tabledet {

void validate_scale_set(const ScaleSet& scales) {
    if (scales.factors.size() != 7)
        throw std::invalid_argument("scale set must have exactly 7 factors");
    if (!std::is_sorted(scales.factors.begin(), scales.factors.end()))
        throw std::invalid_argument("scale factors must be sorted ascending");
    if (std::find(scales.factors.begin(), scales.factors.end(), 1.0) == scales.factors.end())
        throw std::invalid_argument("scale set must contain 1.0");
    if (scales.quorum < 1 || scales.quorum > 7)
        throw std::invalid_argument("quorum must lie in [1,7]");
    for (double f : scales.factors)
        if (f <= 0.0) throw std::invalid_argument("scale factors must be positive");
}

std::vector<DetectionCluster> cluster_detections(const std::vector<Detection>& dets,
                                                 double iou_thr) {
    if (iou_thr <= 0.0 || iou_thr >= 1.0)
        throw std::invalid_argument("cluster iou_thr must be in (0,1)");
    std::vector<size_t> order(dets.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return a < b;
    });

    std::vector<bool> used(dets.size(), false);
    std::vector<DetectionCluster> clusters;
    for (size_t si = 0; si < order.size(); ++si) {
        size_t seed = order[si];
        if (used[seed]) continue;
        used[seed] = true;
        DetectionCluster cluster;
        cluster.members.push_back(dets[seed]);
        std::set<int> tags = {dets[seed].scale_tag};
        // candidates already come in (score desc, index asc) order, so the
        // first hit per scale tag is the winner
        for (size_t ci = si + 1; ci < order.size(); ++ci) {
            size_t cand = order[ci];
            if (used[cand]) continue;
            if (tags.count(dets[cand].scale_tag)) continue;
            if (iou(dets[seed].box, dets[cand].box) < iou_thr) continue;
            used[cand] = true;
            tags.insert(dets[cand].scale_tag);
            cluster.members.push_back(dets[cand]);
        }
        cluster.fused = fuse_cluster(cluster);
        clusters.push_back(std::move(cluster));
    }
    return clusters;
}

Detection fuse_cluster(const DetectionCluster& cluster, FuseMode mode) {
    if (cluster.members.empty()) throw std::invalid_argument("fuse of empty cluster");
    const Detection& seed = cluster.members.front();
    double score_sum = 0.0;
    for (const auto& m : cluster.members) score_sum += m.score;
    double mean_score = score_sum / static_cast<double>(cluster.members.size());

    Detection out;
    out.class_id = seed.class_id;
    out.scale_tag = -1;
    out.score = mean_score;
    if (mode == FuseMode::KeepSeed || score_sum <= 0.0) {
        out.box = seed.box;
        return out;
    }
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    for (const auto& m : cluster.members) {
        double w = m.score / score_sum;
        x1 += w * m.box.x1;
        y1 += w * m.box.y1;
        x2 += w * m.box.x2;
        y2 += w * m.box.y2;
    }
    out.box = {x1, y1, x2, y2};
    return out;
}

std::vector<Detection> vote_and_fuse(const std::vector<Detection>& dets, double cluster_iou,
                                     int quorum, FuseMode mode) {
    std::vector<Detection> out;
    for (const auto& cluster : cluster_detections(dets, cluster_iou)) {
        std::set<int> tags;
        for (const auto& m : cluster.members) tags.insert(m.scale_tag);
        if (static_cast<int>(tags.size()) < quorum) continue;
        out.push_back(fuse_cluster(cluster, mode));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return out;
}

namespace {

int round_up(int v, int divisor) { return (v + divisor - 1) / divisor * divisor; }

}  // namespace

std::vector<Detection> detect_multiscale(const DetectorModel& model, const Image& img,
                                         const ScaleSet& scales, double cluster_iou,
                                         FuseMode mode) {
    validate_scale_set(scales);
    int divisor = 1 << static_cast<int>(model.cfg.model.stage_channels.size());

    std::vector<Detection> pool;
    for (size_t s = 0; s < scales.factors.size(); ++s) {
        double f = scales.factors[s];
        int sh = std::max(divisor, static_cast<int>(std::lround(img.h * f)));
        int sw = std::max(divisor, static_cast<int>(std::lround(img.w * f)));
        Image scaled = resize_bilinear(img, sh, sw);
        // pad to the backbone divisor; the pad region is background
        int ph = round_up(sh, divisor), pw = round_up(sw, divisor);
        if (ph != sh || pw != sw) {
            Image padded = make_image(ph, pw, 1.0);
            for (int y = 0; y < sh; ++y)
                for (int x = 0; x < sw; ++x) padded.at(y, x) = scaled.at(y, x);
            scaled = std::move(padded);
        }
        double fy = static_cast<double>(sh) / img.h;
        double fx = static_cast<double>(sw) / img.w;
        for (Detection d : detect(model, scaled)) {
            d.box.x1 = std::clamp(d.box.x1 / fx, 0.0, static_cast<double>(img.w));
            d.box.x2 = std::clamp(d.box.x2 / fx, 0.0, static_cast<double>(img.w));
            d.box.y1 = std::clamp(d.box.y1 / fy, 0.0, static_cast<double>(img.h));
            d.box.y2 = std::clamp(d.box.y2 / fy, 0.0, static_cast<double>(img.h));
            if (!d.box.valid()) continue;
            d.scale_tag = static_cast<int>(s);
            pool.push_back(d);
        }
    }
    return vote_and_fuse(pool, cluster_iou, scales.quorum, mode);
}

}  // namespace tabledet
