#pragma once

#include <cstdint>
#include <string>

#include "tabledet/dataset.hpp"
#include "tabledet/detector.hpp"
#include "tabledet/metrics.hpp"
#include "tabledet/msvote.hpp"

namespace tabledet {

struct SplitCounts {
    int train = 20, val = 5, test = 5;
};

// Training schedule. The full-scale defaults (lr 0.00125, 50 epochs, decay
// at 25/40, 500 warmup iterations starting at factor 0.0033, batch 1) stay
// the documented baseline; toy runs override through the config file.
struct TrainSchedule {
    double lr = 0.00125;
    double momentum = 0.9;
    int epochs = 50;
    std::vector<int> decay_epochs = {25, 40};
    double decay_factor = 0.1;
    double warmup_factor = 0.0033;
    int warmup_iters = 500;
    int batch_size = 1;
    int max_iterations = 0;      // 0: run the full epoch schedule
    double clip_grad_norm = 35;  // global L2 clip; 0 disables
};

struct EvalSpec {
    double iou = 0.5;
    double sweep_lo = 0.5, sweep_hi = 0.9, sweep_step = 0.1;
    bool macro_f1 = false;
    std::string interpolation = "all_points";  // or "11point"

    ApInterp interp() const {
        return interpolation == "11point" ? ApInterp::ElevenPoint : ApInterp::AllPoints;
    }
};

struct RunConfig {
    uint64_t seed = 0;
    PageSpec page;
    SplitCounts counts;
    DetectorConfig detector;
    TrainSchedule train;
    ScaleSet scales;
    double cluster_iou = 0.5;
    std::string fuse_mode = "fuse";  // or "keep-seed"
    EvalSpec eval;

    // full-scale input documented by the reference setup; toy runs use
    // detector.model.input_h/w
    int full_scale_h = 1200;
    int full_scale_w = 800;

    FuseMode fuse() const {
        return fuse_mode == "keep-seed" ? FuseMode::KeepSeed : FuseMode::WeightedMean;
    }
};

// Schema-validated load: unknown keys anywhere are rejected, known keys
// override the defaults.
RunConfig load_config(const std::string& path);
RunConfig config_from_json_text(const std::string& text, const std::string& origin);

std::string config_to_json(const RunConfig& cfg);  // fully resolved echo

void validate_config(const RunConfig& cfg);

}  // namespace tabledet
