#include "tabledet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace tabledet {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& origin, const std::string& what) {
    throw std::runtime_error("config " + origin + ": " + what);
}

// Applies `src` onto the known keys listed in `apply`, rejecting anything
// else so typos never pass silently.
struct Section {
    const json& src;
    const std::string origin;
    const std::string path;
    std::set<std::string> seen;

    Section(const json& s, std::string orig, std::string p)
        : src(s), origin(std::move(orig)), path(std::move(p)) {
        if (!src.is_object()) bad(origin, path + " must be an object");
    }
    ~Section() = default;

    bool has(const std::string& key) {
        seen.insert(key);
        return src.contains(key);
    }
    template <typename T>
    void get(const std::string& key, T& out) {
        if (!has(key)) return;
        try {
            out = src.at(key).get<T>();
        } catch (const json::exception& e) {
            bad(origin, path + "." + key + ": " + e.what());
        }
    }
    const json* sub(const std::string& key) {
        if (!has(key)) return nullptr;
        return &src.at(key);
    }
    void finish() {
        for (auto it = src.begin(); it != src.end(); ++it)
            if (!seen.count(it.key()))
                bad(origin, "unknown key '" + path + "." + it.key() + "'");
    }
};

void parse_stds(const json& j, const std::string& origin,
                std::vector<std::array<double, 4>>& out) {
    if (!j.is_array()) bad(origin, "cascade.stage_stds must be an array of 4-float arrays");
    out.clear();
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != 4)
            bad(origin, "cascade.stage_stds rows must have 4 entries");
        out.push_back({row[0].get<double>(), row[1].get<double>(), row[2].get<double>(),
                       row[3].get<double>()});
    }
}

}  // namespace

RunConfig config_from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        bad(origin, e.what());
    }
    RunConfig cfg;

    Section root(j, origin, "");
    root.get("seed", cfg.seed);
    root.get("full_scale_h", cfg.full_scale_h);
    root.get("full_scale_w", cfg.full_scale_w);
    root.get("cluster_iou", cfg.cluster_iou);
    root.get("fuse_mode", cfg.fuse_mode);

    if (const json* p = root.sub("page")) {
        Section s(*p, origin, "page");
        s.get("height", cfg.page.height);
        s.get("width", cfg.page.width);
        s.get("tables_min", cfg.page.tables_min);
        s.get("tables_max", cfg.page.tables_max);
        s.get("rows_min", cfg.page.rows_min);
        s.get("rows_max", cfg.page.rows_max);
        s.get("cols_min", cfg.page.cols_min);
        s.get("cols_max", cfg.page.cols_max);
        s.get("ruling_prob", cfg.page.ruling_prob);
        s.get("figures_min", cfg.page.figures_min);
        s.get("figures_max", cfg.page.figures_max);
        s.get("noise", cfg.page.noise);
        s.finish();
    }
    if (const json* p = root.sub("counts")) {
        Section s(*p, origin, "counts");
        s.get("train", cfg.counts.train);
        s.get("val", cfg.counts.val);
        s.get("test", cfg.counts.test);
        s.finish();
    }
    if (const json* p = root.sub("model")) {
        Section s(*p, origin, "model");
        auto& m = cfg.detector.model;
        s.get("input_h", m.input_h);
        s.get("input_w", m.input_w);
        s.get("stage_channels", m.stage_channels);
        s.get("stage_blocks", m.stage_blocks);
        s.get("deformable_stages", m.deformable_stages);
        s.get("fpn_stages", m.fpn_stages);
        s.get("fpn_channels", m.fpn_channels);
        s.get("head_hidden", m.head_hidden);
        s.get("num_classes", m.num_classes);
        s.get("roi_out", m.roi_out);
        s.get("roi_level_base", m.roi_level_base);
        s.finish();
    }
    if (const json* p = root.sub("anchors")) {
        Section s(*p, origin, "anchors");
        s.get("ratios", cfg.detector.anchors.ratios);
        s.get("scale", cfg.detector.anchors.scale);
        s.finish();
    }
    if (const json* p = root.sub("rpn")) {
        Section s(*p, origin, "rpn");
        auto& r = cfg.detector.rpn;
        s.get("pos_iou", r.pos_iou);
        s.get("neg_iou", r.neg_iou);
        s.get("sample_total", r.sample_total);
        s.get("sample_pos_ratio", r.sample_pos_ratio);
        s.get("k_pre", r.k_pre);
        s.get("k_post", r.k_post);
        s.get("nms_thr", r.nms_thr);
        s.finish();
    }
    if (const json* p = root.sub("cascade")) {
        Section s(*p, origin, "cascade");
        auto& c = cfg.detector.cascade;
        s.get("stage_ious", c.stage_ious);
        if (s.has("stage_stds")) parse_stds(p->at("stage_stds"), origin, c.stage_stds);
        s.get("roi_sample_total", c.roi_sample_total);
        s.get("roi_pos_ratio", c.roi_pos_ratio);
        s.get("score_thr", c.score_thr);
        s.get("nms_thr", c.nms_thr);
        s.get("composite_enabled", c.composite_enabled);
        s.get("deformable_enabled", c.deformable_enabled);
        s.finish();
    }
    if (const json* p = root.sub("train")) {
        Section s(*p, origin, "train");
        auto& t = cfg.train;
        s.get("lr", t.lr);
        s.get("momentum", t.momentum);
        s.get("epochs", t.epochs);
        s.get("decay_epochs", t.decay_epochs);
        s.get("decay_factor", t.decay_factor);
        s.get("warmup_factor", t.warmup_factor);
        s.get("warmup_iters", t.warmup_iters);
        s.get("batch_size", t.batch_size);
        s.get("max_iterations", t.max_iterations);
        s.get("clip_grad_norm", t.clip_grad_norm);
        s.finish();
    }
    if (const json* p = root.sub("test")) {
        Section s(*p, origin, "test");
        s.get("scales", cfg.scales.factors);
        s.get("quorum", cfg.scales.quorum);
        s.finish();
    }
    if (const json* p = root.sub("eval")) {
        Section s(*p, origin, "eval");
        auto& e = cfg.eval;
        s.get("iou", e.iou);
        s.get("sweep_lo", e.sweep_lo);
        s.get("sweep_hi", e.sweep_hi);
        s.get("sweep_step", e.sweep_step);
        s.get("macro_f1", e.macro_f1);
        s.get("interpolation", e.interpolation);
        s.finish();
    }
    root.finish();

    validate_config(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return config_from_json_text(ss.str(), path);
}

std::string config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["full_scale_h"] = cfg.full_scale_h;
    j["full_scale_w"] = cfg.full_scale_w;
    j["cluster_iou"] = cfg.cluster_iou;
    j["fuse_mode"] = cfg.fuse_mode;
    j["page"] = {{"height", cfg.page.height},       {"width", cfg.page.width},
                 {"tables_min", cfg.page.tables_min}, {"tables_max", cfg.page.tables_max},
                 {"rows_min", cfg.page.rows_min},   {"rows_max", cfg.page.rows_max},
                 {"cols_min", cfg.page.cols_min},   {"cols_max", cfg.page.cols_max},
                 {"ruling_prob", cfg.page.ruling_prob}, {"figures_min", cfg.page.figures_min},
                 {"figures_max", cfg.page.figures_max}, {"noise", cfg.page.noise}};
    j["counts"] = {{"train", cfg.counts.train}, {"val", cfg.counts.val}, {"test", cfg.counts.test}};
    const auto& m = cfg.detector.model;
    j["model"] = {{"input_h", m.input_h},
                  {"input_w", m.input_w},
                  {"stage_channels", m.stage_channels},
                  {"stage_blocks", m.stage_blocks},
                  {"deformable_stages", m.deformable_stages},
                  {"fpn_stages", m.fpn_stages},
                  {"fpn_channels", m.fpn_channels},
                  {"head_hidden", m.head_hidden},
                  {"num_classes", m.num_classes},
                  {"roi_out", m.roi_out},
                  {"roi_level_base", m.roi_level_base}};
    j["anchors"] = {{"ratios", cfg.detector.anchors.ratios}, {"scale", cfg.detector.anchors.scale}};
    const auto& r = cfg.detector.rpn;
    j["rpn"] = {{"pos_iou", r.pos_iou},   {"neg_iou", r.neg_iou},
                {"sample_total", r.sample_total}, {"sample_pos_ratio", r.sample_pos_ratio},
                {"k_pre", r.k_pre},       {"k_post", r.k_post},
                {"nms_thr", r.nms_thr}};
    const auto& c = cfg.detector.cascade;
    json stds = json::array();
    for (const auto& s : c.stage_stds) stds.push_back({s[0], s[1], s[2], s[3]});
    j["cascade"] = {{"stage_ious", c.stage_ious},
                    {"stage_stds", stds},
                    {"roi_sample_total", c.roi_sample_total},
                    {"roi_pos_ratio", c.roi_pos_ratio},
                    {"score_thr", c.score_thr},
                    {"nms_thr", c.nms_thr},
                    {"composite_enabled", c.composite_enabled},
                    {"deformable_enabled", c.deformable_enabled}};
    const auto& t = cfg.train;
    j["train"] = {{"lr", t.lr},
                  {"momentum", t.momentum},
                  {"epochs", t.epochs},
                  {"decay_epochs", t.decay_epochs},
                  {"decay_factor", t.decay_factor},
                  {"warmup_factor", t.warmup_factor},
                  {"warmup_iters", t.warmup_iters},
                  {"batch_size", t.batch_size},
                  {"max_iterations", t.max_iterations},
                  {"clip_grad_norm", t.clip_grad_norm}};
    j["test"] = {{"scales", cfg.scales.factors}, {"quorum", cfg.scales.quorum}};
    j["eval"] = {{"iou", cfg.eval.iou},
                 {"sweep_lo", cfg.eval.sweep_lo},
                 {"sweep_hi", cfg.eval.sweep_hi},
                 {"sweep_step", cfg.eval.sweep_step},
                 {"macro_f1", cfg.eval.macro_f1},
                 {"interpolation", cfg.eval.interpolation}};
    return j.dump(2) + "\n";
}

void validate_config(const RunConfig& cfg) {
    validate_detector_config(cfg.detector);
    validate_scale_set(cfg.scales);
    if (cfg.train.batch_size != 1)
        throw std::runtime_error("config: only batch_size 1 is supported");
    if (cfg.train.lr <= 0.0) throw std::runtime_error("config: lr must be positive");
    if (cfg.counts.train < 0 || cfg.counts.val < 0 || cfg.counts.test < 0)
        throw std::runtime_error("config: negative split count");
    if (cfg.fuse_mode != "fuse" && cfg.fuse_mode != "keep-seed")
        throw std::runtime_error("config: fuse_mode must be 'fuse' or 'keep-seed'");
    if (cfg.eval.interpolation != "all_points" && cfg.eval.interpolation != "11point")
        throw std::runtime_error("config: interpolation must be 'all_points' or '11point'");
    if (cfg.eval.sweep_lo >= cfg.eval.sweep_hi || cfg.eval.sweep_step <= 0.0)
        throw std::runtime_error("config: bad sweep range");
    if (cfg.cluster_iou <= 0.0 || cfg.cluster_iou >= 1.0)
        throw std::runtime_error("config: cluster_iou must be in (0,1)");
}

}  // namespace tabledet
