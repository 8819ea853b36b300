#include "tabledet/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <json.hpp>

#include "tabledet/checkpoint.hpp"
#include "tabledet/msvote.hpp"
#include "tabledet/rng.hpp"

namespace fs = std::filesystem;

namespace tabledet {

namespace {

std::vector<DocumentSample> synth_all(const RunConfig& cfg) {
    PageSpec spec = cfg.page;
    spec.seed = cfg.seed;
    int total = cfg.counts.train + cfg.counts.val + cfg.counts.test;
    std::vector<DocumentSample> samples;
    samples.reserve(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) samples.push_back(generate_page(spec, i));
    return samples;
}

std::vector<std::string> split_ids(const SplitManifests& m, const std::string& split) {
    if (split == "train") return m.train;
    if (split == "val") return m.val;
    if (split == "test") return m.test;
    throw std::runtime_error("unknown split '" + split + "'");
}

SplitManifests read_splits(const std::string& corpus_dir) {
    std::ifstream is(corpus_dir + "/splits.json");
    if (!is) throw std::runtime_error("missing splits.json in " + corpus_dir);
    nlohmann::json j = nlohmann::json::parse(is);
    SplitManifests m;
    m.train = j.at("train").get<std::vector<std::string>>();
    m.val = j.at("val").get<std::vector<std::string>>();
    m.test = j.at("test").get<std::vector<std::string>>();
    return m;
}

std::string loss_line(int iter, int epoch, double lr, const StepLosses& l) {
    char buf[512];
    int n = std::snprintf(buf, sizeof(buf),
                          "iter=%d epoch=%d lr=%.8f loss=%.6f rpn_cls=%.6f rpn_box=%.6f", iter,
                          epoch, lr, l.total, l.rpn_cls, l.rpn_box);
    std::string line(buf, static_cast<size_t>(n));
    for (size_t t = 0; t < l.stage_cls.size(); ++t) {
        std::snprintf(buf, sizeof(buf), " s%zu_cls=%.6f s%zu_box=%.6f", t + 1, l.stage_cls[t],
                      t + 1, l.stage_box[t]);
        line += buf;
    }
    return line;
}

}  // namespace

double lr_at(const TrainSchedule& train, int iter, int iters_per_epoch) {
    double lr = train.lr;
    int epoch1 = iter / std::max(1, iters_per_epoch) + 1;
    for (int d : train.decay_epochs)
        if (epoch1 >= d) lr *= train.decay_factor;
    if (train.warmup_iters > 0 && iter < train.warmup_iters) {
        double t = static_cast<double>(iter) / train.warmup_iters;
        lr *= train.warmup_factor + (1.0 - train.warmup_factor) * t;
    }
    return lr;
}

void cmd_synth(const RunConfig& cfg, const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir + "/images", ec);
    if (ec) throw std::runtime_error("cannot create output directory " + out_dir);
    if (!fs::is_directory(out_dir + "/images"))
        throw std::runtime_error("output path is not writable: " + out_dir);

    std::vector<DocumentSample> samples = synth_all(cfg);
    for (const auto& s : samples) write_pgm(s.image, out_dir + "/images/" + s.id + ".pgm");

    SplitManifests m = make_split(cfg.counts.train, cfg.counts.val, cfg.counts.test);
    nlohmann::json j;
    j["train"] = m.train;
    j["val"] = m.val;
    j["test"] = m.test;
    std::ofstream os(out_dir + "/splits.json");
    if (!os) throw std::runtime_error("cannot write splits.json");
    os << j.dump(2) << "\n";
    os.close();

    auto subset = [&samples](const std::vector<std::string>& ids) {
        std::vector<DocumentSample> out;
        for (const auto& id : ids)
            for (const auto& s : samples)
                if (s.id == id) out.push_back(s);
        return out;
    };
    write_annotations(subset(m.train), out_dir + "/annotations_train.json");
    write_annotations(subset(m.val), out_dir + "/annotations_val.json");
    write_annotations(subset(m.test), out_dir + "/annotations_test.json");
}

std::vector<LoadedSample> load_split(const RunConfig& cfg, const std::string& corpus_dir,
                                     const std::string& split) {
    SplitManifests m = read_splits(corpus_dir);
    Annotations ann = read_annotations(corpus_dir + "/annotations_" + split + ".json");
    std::vector<std::string> ids = split_ids(m, split);

    std::vector<LoadedSample> out;
    for (const auto& info : ann.images) {
        if (std::find(ids.begin(), ids.end(), info.file_name.substr(0, info.file_name.size() - 4)) ==
            ids.end())
            throw std::runtime_error("annotation/manifest mismatch for " + info.file_name);
        LoadedSample ls;
        ls.image_id = info.id;
        ls.original = read_pgm(corpus_dir + "/images/" + info.file_name);
        if (ls.original.w != info.width || ls.original.h != info.height)
            throw std::runtime_error("image size disagrees with annotations: " + info.file_name);
        Letterboxed lb =
            letterbox(ls.original, cfg.detector.model.input_h, cfg.detector.model.input_w, 1.0);
        ls.scale = lb.scale;
        ls.train.image = image_to_input(lb.image);
        ls.page_gt = ann.boxes.at(info.id);
        for (size_t b = 0; b < ls.page_gt.size(); ++b) {
            const BBox& g = ls.page_gt[b];
            ls.train.gt_boxes.push_back(
                {g.x1 * lb.scale, g.y1 * lb.scale, g.x2 * lb.scale, g.y2 * lb.scale});
            ls.train.gt_classes.push_back(ann.classes.at(info.id)[b]);
        }
        out.push_back(std::move(ls));
    }
    return out;
}

void cmd_train(const RunConfig& cfg, const std::string& corpus_dir, const std::string& ckpt_path,
               const std::string& log_path, bool echo) {
    std::vector<LoadedSample> samples = load_split(cfg, corpus_dir, "train");
    if (samples.empty()) throw std::runtime_error("train split is empty");

    DetectorModel model = make_detector(cfg.detector, cfg.seed);
    NamedParams params = model.params();
    std::vector<Tensor> tensors;
    for (auto& [name, t] : params) tensors.push_back(t);
    SgdOptimizer opt(tensors, cfg.train.momentum, cfg.train.clip_grad_norm);

    int per_epoch = static_cast<int>(samples.size());
    int total = cfg.train.max_iterations > 0 ? cfg.train.max_iterations
                                             : cfg.train.epochs * per_epoch;

    std::ofstream log(log_path);
    if (!log) throw std::runtime_error("cannot write loss log: " + log_path);
    for (int it = 0; it < total; ++it) {
        const LoadedSample& s = samples[static_cast<size_t>(it % per_epoch)];
        double lr = lr_at(cfg.train, it, per_epoch);
        StepLosses losses =
            cascade_train_step(model, s.train, opt, lr, mix_seed(cfg.seed, 0x7EA1 + static_cast<uint64_t>(it)));
        std::string line = loss_line(it + 1, it / per_epoch + 1, lr, losses);
        log << line << "\n";
        if (echo) std::cout << line << "\n";
    }
    log.close();

    save_checkpoint(ckpt_path, params);
    std::ofstream side(ckpt_path + ".json");
    if (side) side << config_to_json(cfg);
}

DetectorModel load_model(const RunConfig& cfg, const std::string& ckpt_path) {
    DetectorModel model = make_detector(cfg.detector, cfg.seed);
    NamedParams params = model.params();
    load_checkpoint(ckpt_path, params);
    return model;
}

std::vector<Detection> run_detect(const DetectorModel& model, const RunConfig& cfg,
                                  const Image& page, bool multiscale) {
    if (multiscale) return detect_multiscale(model, page, cfg.scales, cfg.cluster_iou, cfg.fuse());

    Letterboxed lb = letterbox(page, cfg.detector.model.input_h, cfg.detector.model.input_w, 1.0);
    std::vector<Detection> dets = detect(model, lb.image);
    for (auto& d : dets) {
        d.box.x1 = std::clamp(d.box.x1 / lb.scale, 0.0, static_cast<double>(page.w));
        d.box.x2 = std::clamp(d.box.x2 / lb.scale, 0.0, static_cast<double>(page.w));
        d.box.y1 = std::clamp(d.box.y1 / lb.scale, 0.0, static_cast<double>(page.h));
        d.box.y2 = std::clamp(d.box.y2 / lb.scale, 0.0, static_cast<double>(page.h));
    }
    dets.erase(std::remove_if(dets.begin(), dets.end(),
                              [](const Detection& d) { return !d.box.valid(); }),
               dets.end());
    return dets;
}

MetricReport cmd_eval(const RunConfig& cfg, const std::string& corpus_dir, const EvalOptions& opt,
                      const std::string& out_prefix) {
    if (opt.ckpt_path.empty() == opt.pred_path.empty())
        throw std::runtime_error("eval needs exactly one of --ckpt / --pred");

    std::vector<LoadedSample> samples = load_split(cfg, corpus_dir, opt.split);
    GtsByImage gts;
    for (const auto& s : samples) gts[s.image_id] = s.page_gt;

    PredsByImage preds;
    std::string model_id;
    if (!opt.pred_path.empty()) {
        preds = read_predictions(opt.pred_path);
        model_id = opt.pred_path;
    } else {
        DetectorModel model = load_model(cfg, opt.ckpt_path);
        for (const auto& s : samples)
            preds[s.image_id] = run_detect(model, cfg, s.original, opt.multiscale);
        model_id = opt.ckpt_path;
    }

    std::vector<double> thresholds;
    if (opt.sweep) {
        int n = static_cast<int>(std::lround((cfg.eval.sweep_hi - cfg.eval.sweep_lo) /
                                             cfg.eval.sweep_step));
        for (int i = 0; i <= n; ++i) thresholds.push_back(cfg.eval.sweep_lo + i * cfg.eval.sweep_step);
    } else {
        thresholds.push_back(cfg.eval.iou);
    }
    MetricReport report = iou_sweep(preds, gts, thresholds, corpus_dir + ":" + opt.split, model_id,
                                    cfg.eval.macro_f1, cfg.eval.interp());
    if (!out_prefix.empty()) write_report(report, out_prefix + ".txt", out_prefix + ".json");
    return report;
}

std::vector<Detection> cmd_infer(const RunConfig& cfg, const std::string& ckpt_path,
                                 const std::string& image_path, const InferOptions& opt,
                                 const std::string& out_pred) {
    Image page = read_pgm(image_path);
    DetectorModel model = load_model(cfg, ckpt_path);
    std::vector<Detection> dets = run_detect(model, cfg, page, opt.multiscale);

    std::string stem = fs::path(image_path).stem().string();
    int image_id = 0;
    if (stem.rfind("page_", 0) == 0) {
        try {
            image_id = std::stoi(stem.substr(5));
        } catch (...) {
            image_id = 0;
        }
    }
    if (!out_pred.empty()) write_predictions({{image_id, dets}}, out_pred);

    if (!opt.overlay_path.empty()) {
        Image overlay = page;
        if (!opt.ann_path.empty()) {
            Annotations ann = read_annotations(opt.ann_path);
            for (const auto& info : ann.images)
                if (info.file_name == fs::path(image_path).filename().string())
                    for (const auto& g : ann.boxes.at(info.id))
                        draw_rect(overlay, g, 0.0, 2, false);
        }
        for (const auto& d : dets) draw_rect(overlay, d.box, 0.45, 2, true);
        write_pgm(overlay, opt.overlay_path);
    }
    return dets;
}

std::vector<AblateRow> cmd_ablate(const RunConfig& cfg, const std::string& corpus_dir,
                                  const std::string& out_dir, const std::string& split, bool echo) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);

    struct Variant {
        std::string name;
        bool composite, deformable;
    };
    const std::vector<Variant> variants = {{"cascade", false, false},
                                           {"cascade+composite", true, false},
                                           {"cascade+composite+deformable", true, true}};

    std::vector<AblateRow> rows;
    for (const auto& v : variants) {
        RunConfig vcfg = cfg;
        vcfg.detector.cascade.composite_enabled = v.composite;
        vcfg.detector.cascade.deformable_enabled = v.deformable;
        std::string ckpt = out_dir + "/ablate_" + std::to_string(rows.size()) + ".ckpt";
        cmd_train(vcfg, corpus_dir, ckpt, out_dir + "/ablate_" + std::to_string(rows.size()) + ".log",
                  echo);
        EvalOptions eopt;
        eopt.split = split;
        eopt.ckpt_path = ckpt;
        MetricReport rep = cmd_eval(vcfg, corpus_dir, eopt,
                                    out_dir + "/ablate_" + std::to_string(rows.size()) + "_report");
        const MetricRow& r = rep.rows.front();
        rows.push_back({v.name, r.recall, r.precision, r.f1, r.ap});
    }

    char buf[160];
    std::string table = "model                                R      P     F1    mAP\n";
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-34s %5.3f  %5.3f  %5.3f  %5.3f\n", r.name.c_str(),
                      r.recall, r.precision, r.f1, r.map);
        table += buf;
        j.push_back({{"model", r.name},
                     {"recall", r.recall},
                     {"precision", r.precision},
                     {"f1", r.f1},
                     {"map", r.map}});
    }
    std::ofstream os(out_dir + "/ablation.txt");
    if (!os) throw std::runtime_error("cannot write ablation table");
    os << table;
    std::ofstream js(out_dir + "/ablation.json");
    js << j.dump(2) << "\n";
    return rows;
}

}  // namespace tabledet
