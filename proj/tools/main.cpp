#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tabledet/config.hpp"
#include "tabledet/harness.hpp"

using namespace tabledet;

int main(int argc, char** argv) {
    CLI::App app{"table detection pipeline: synthetic corpus, cascade training, evaluation"};
    app.require_subcommand(0, 1);

    std::string config_path;
    bool print_config = false;
    long long seed_override = -1;
    app.add_option("--config", config_path, "JSON config file (defaults apply otherwise)");
    app.add_option("--seed", seed_override, "override config seed");
    app.add_flag("--print-config", print_config, "echo the fully resolved config and exit");

    auto* synth = app.add_subcommand("synth", "generate the synthetic page corpus");
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train the detector on a corpus");
    std::string train_corpus, train_out, train_log;
    train->add_option("--corpus", train_corpus, "corpus directory")->required();
    train->add_option("--out", train_out, "checkpoint path")->required();
    train->add_option("--log", train_log, "loss log path (default: <out>.log)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or prediction file");
    std::string eval_corpus, eval_out = "report";
    EvalOptions eval_opt;
    eval->add_option("--corpus", eval_corpus, "corpus directory")->required();
    eval->add_option("--split", eval_opt.split, "split name (train/val/test)");
    eval->add_option("--ckpt", eval_opt.ckpt_path, "checkpoint to evaluate");
    eval->add_option("--pred", eval_opt.pred_path, "prediction file to score instead");
    eval->add_flag("--sweep", eval_opt.sweep, "sweep IoU thresholds 0.5-0.9");
    eval->add_flag("--multiscale", eval_opt.multiscale, "multi-scale voting inference");
    eval->add_option("--out", eval_out, "report path prefix");

    auto* infer = app.add_subcommand("infer", "run detection on one image");
    std::string infer_ckpt, infer_image, infer_out = "predictions.json";
    InferOptions infer_opt;
    infer->add_option("--ckpt", infer_ckpt, "checkpoint")->required();
    infer->add_option("--image", infer_image, "input PGM image")->required();
    infer->add_flag("--multiscale", infer_opt.multiscale, "multi-scale voting inference");
    infer->add_option("--overlay", infer_opt.overlay_path, "write an overlay PGM here");
    infer->add_option("--ann", infer_opt.ann_path, "annotation file for GT in the overlay");
    infer->add_option("--out", infer_out, "prediction file path");

    auto* ablate = app.add_subcommand("ablate", "train and score the three model variants");
    std::string ablate_corpus, ablate_out, ablate_split = "train";
    ablate->add_option("--corpus", ablate_corpus, "corpus directory")->required();
    ablate->add_option("--out", ablate_out, "output directory")->required();
    ablate->add_option("--split", ablate_split, "evaluation split");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
        if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
        validate_config(cfg);

        if (print_config) {
            std::cout << config_to_json(cfg);
            return 0;
        }

        if (synth->parsed()) {
            cmd_synth(cfg, synth_out);
        } else if (train->parsed()) {
            if (train_log.empty()) train_log = train_out + ".log";
            cmd_train(cfg, train_corpus, train_out, train_log, true);
        } else if (eval->parsed()) {
            MetricReport report = cmd_eval(cfg, eval_corpus, eval_opt, eval_out);
            std::cout << format_report(report);
        } else if (infer->parsed()) {
            auto dets = cmd_infer(cfg, infer_ckpt, infer_image, infer_opt, infer_out);
            std::cout << dets.size() << " detections -> " << infer_out << "\n";
        } else if (ablate->parsed()) {
            auto rows = cmd_ablate(cfg, ablate_corpus, ablate_out, ablate_split, true);
            for (const auto& r : rows)
                std::cout << r.name << "  R=" << r.recall << " P=" << r.precision << " F1=" << r.f1
                          << " mAP=" << r.map << "\n";
        } else {
            std::cout << app.help();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
