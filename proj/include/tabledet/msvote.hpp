#pragma once

#include <vector>

#include "tabledet/detector.hpp"
#include "tabledet/geometry.hpp"
#include "tabledet/image.hpp"

namespace tabledet {

// Seven test scales (three below 1, the identity, three above) and the
// consensus quorum: a detection survives only if it appears at >= quorum
// distinct scales.
struct ScaleSet {
    std::vector<double> factors = {0.7, 0.8, 0.9, 1.0, 1.15, 1.3, 1.5};
    int quorum = 4;
};

void validate_scale_set(const ScaleSet& scales);

struct DetectionCluster {
    std::vector<Detection> members;  // unique scale_tags, all IoU >= thr vs the seed
    Detection fused;
};

// Greedy clustering: seed = highest remaining score, absorb every remaining
// box with IoU >= iou_thr against the seed, at most one per scale_tag
// (highest score wins), repeat. Member 0 is always the seed.
std::vector<DetectionCluster> cluster_detections(const std::vector<Detection>& dets,
                                                 double iou_thr);

enum class FuseMode { WeightedMean, KeepSeed };

// WeightedMean: box = score-weighted mean of member corners, score = mean.
// KeepSeed: the seed's box with the cluster's mean score.
Detection fuse_cluster(const DetectionCluster& cluster, FuseMode mode = FuseMode::WeightedMean);

// Clustering + quorum + fusion over an already-gathered detection pool.
std::vector<Detection> vote_and_fuse(const std::vector<Detection>& dets, double cluster_iou,
                                     int quorum, FuseMode mode);

// Runs detect at every factor (image resized, boxes mapped back), then the
// consensus vote.
std::vector<Detection> detect_multiscale(const DetectorModel& model, const Image& img,
                                         const ScaleSet& scales, double cluster_iou,
                                         FuseMode mode = FuseMode::WeightedMean);

}  // namespace tabledet
