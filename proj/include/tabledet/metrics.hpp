#pragma once

#include <map>
#include <string>
#include <vector>

#include "tabledet/geometry.hpp"

namespace tabledet {

// Greedy score-ordered matching of one image's predictions against its GT
// boxes at a fixed IoU threshold (VOC convention).
struct MatchResult {
    int tp = 0, fp = 0, fn = 0;
    struct Pair {
        int pred, gt;
        double iou;
    };
    std::vector<Pair> pairs;
};

MatchResult match(const std::vector<Detection>& preds, const std::vector<BBox>& gts,
                  double iou_thr);

struct Prf {
    double recall = 0.0, precision = 0.0, f1 = 0.0;
};

// Conventions: R = 1 when there is no GT; P = 0 when nothing was predicted
// but GT exists, 1 when both sides are empty; F1 = 0 when P + R = 0.
Prf prf1(const MatchResult& m);

using PredsByImage = std::map<int, std::vector<Detection>>;
using GtsByImage = std::map<int, std::vector<BBox>>;

// Dataset-level counts (micro) or per-image mean (macro).
Prf dataset_prf1(const PredsByImage& preds, const GtsByImage& gts, double iou_thr, bool macro);

enum class ApInterp { AllPoints, ElevenPoint };

// Area under the monotone precision envelope of the global descending-score
// sweep.
double average_precision(const PredsByImage& preds, const GtsByImage& gts, double iou_thr,
                         ApInterp interp = ApInterp::AllPoints);

double map_over_range(const PredsByImage& preds, const GtsByImage& gts, double thr_lo,
                      double thr_hi, double step, ApInterp interp = ApInterp::AllPoints);

struct MetricRow {
    double iou_thr = 0.0;
    double recall = 0.0, precision = 0.0, f1 = 0.0, ap = 0.0;
};

struct MetricReport {
    std::string dataset_id;
    std::string model_id;
    std::vector<MetricRow> rows;
};

MetricReport iou_sweep(const PredsByImage& preds, const GtsByImage& gts,
                       const std::vector<double>& thresholds, const std::string& dataset_id,
                       const std::string& model_id, bool macro = false,
                       ApInterp interp = ApInterp::AllPoints);

std::string format_report(const MetricReport& report);  // aligned text table
void write_report(const MetricReport& report, const std::string& txt_path,
                  const std::string& json_path);
MetricReport read_report(const std::string& json_path);

}  // namespace tabledet
