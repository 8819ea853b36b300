#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tabledet/config.hpp"
#include "tabledet/detector.hpp"
#include "tabledet/metrics.hpp"

namespace tabledet {

// Command implementations backing the CLI verbs. All of them throw on
// error; the CLI maps exceptions to nonzero exit codes.

// Corpus layout written by cmd_synth:
//   <dir>/images/page_NNNNNN.pgm
//   <dir>/annotations_{train,val,test}.json
//   <dir>/splits.json
void cmd_synth(const RunConfig& cfg, const std::string& out_dir);

// Per-iteration `key=value` loss lines go to log_path (and stdout when
// echo is set); the final checkpoint plus a config sidecar land at
// ckpt_path and ckpt_path + ".json".
void cmd_train(const RunConfig& cfg, const std::string& corpus_dir, const std::string& ckpt_path,
               const std::string& log_path, bool echo = false);

struct EvalOptions {
    std::string split = "test";
    bool sweep = false;
    bool multiscale = false;
    std::string ckpt_path;  // one of ckpt_path / pred_path must be set
    std::string pred_path;
};
MetricReport cmd_eval(const RunConfig& cfg, const std::string& corpus_dir,
                      const EvalOptions& opt, const std::string& out_prefix);

struct InferOptions {
    bool multiscale = false;
    std::string overlay_path;  // optional overlay PGM
    std::string ann_path;      // optional GT source for the overlay
};
std::vector<Detection> cmd_infer(const RunConfig& cfg, const std::string& ckpt_path,
                                 const std::string& image_path, const InferOptions& opt,
                                 const std::string& out_pred);

struct AblateRow {
    std::string name;
    double recall = 0.0, precision = 0.0, f1 = 0.0, map = 0.0;
};
// Trains and evaluates cascade-only, +composite, +composite+deformable under
// identical seed and schedule; writes ablation.txt/.json plus per-variant
// checkpoints into out_dir.
std::vector<AblateRow> cmd_ablate(const RunConfig& cfg, const std::string& corpus_dir,
                                  const std::string& out_dir, const std::string& split = "train",
                                  bool echo = false);

// ---- helpers shared with the test suites ----

struct LoadedSample {
    TrainSample train;   // letterboxed to the model input size
    Image original;      // page as stored
    int image_id = 0;
    double scale = 1.0;  // page -> input mapping
    std::vector<BBox> page_gt;  // GT in page coordinates
};

std::vector<LoadedSample> load_split(const RunConfig& cfg, const std::string& corpus_dir,
                                     const std::string& split);

double lr_at(const TrainSchedule& train, int iter, int iters_per_epoch);

DetectorModel load_model(const RunConfig& cfg, const std::string& ckpt_path);

// Detections mapped back to page coordinates.
std::vector<Detection> run_detect(const DetectorModel& model, const RunConfig& cfg,
                                  const Image& page, bool multiscale);

}  // namespace tabledet
