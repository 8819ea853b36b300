#include "tabledet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace tabledet {

MatchResult match(const std::vector<Detection>& preds, const std::vector<BBox>& gts,
                  double iou_thr) {
    if (iou_thr <= 0.0 || iou_thr > 1.0) throw std::invalid_argument("match iou_thr must be in (0,1]");
    std::vector<size_t> order(preds.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (preds[a].score != preds[b].score) return preds[a].score > preds[b].score;
        return a < b;
    });

    MatchResult res;
    std::vector<bool> gt_used(gts.size(), false);
    for (size_t oi : order) {
        double best = 0.0;
        int best_g = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gt_used[g]) continue;
            double v = iou(preds[oi].box, gts[g]);
            if (v >= iou_thr && v > best) {
                best = v;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0) {
            gt_used[static_cast<size_t>(best_g)] = true;
            ++res.tp;
            res.pairs.push_back({static_cast<int>(oi), best_g, best});
        } else {
            ++res.fp;
        }
    }
    res.fn = static_cast<int>(gts.size()) - res.tp;
    return res;
}

Prf prf1(const MatchResult& m) {
    Prf out;
    int gt_total = m.tp + m.fn;
    int pred_total = m.tp + m.fp;
    out.recall = gt_total > 0 ? static_cast<double>(m.tp) / gt_total : 1.0;
    if (pred_total > 0)
        out.precision = static_cast<double>(m.tp) / pred_total;
    else
        out.precision = gt_total == 0 ? 1.0 : 0.0;
    double pr = out.precision + out.recall;
    out.f1 = pr > 0.0 ? 2.0 * out.precision * out.recall / pr : 0.0;
    return out;
}

Prf dataset_prf1(const PredsByImage& preds, const GtsByImage& gts, double iou_thr, bool macro) {
    if (!macro) {
        MatchResult total;
        for (const auto& [img, gt] : gts) {
            auto it = preds.find(img);
            static const std::vector<Detection> kEmpty;
            MatchResult m = match(it != preds.end() ? it->second : kEmpty, gt, iou_thr);
            total.tp += m.tp;
            total.fp += m.fp;
            total.fn += m.fn;
        }
        for (const auto& [img, ps] : preds)
            if (!gts.count(img)) total.fp += static_cast<int>(ps.size());
        return prf1(total);
    }
    // macro: mean of per-image metrics over the union of image ids
    std::vector<int> ids;
    for (const auto& [img, _] : gts) ids.push_back(img);
    for (const auto& [img, _] : preds)
        if (!gts.count(img)) ids.push_back(img);
    std::sort(ids.begin(), ids.end());
    Prf acc;
    for (int img : ids) {
        static const std::vector<Detection> kEmptyP;
        static const std::vector<BBox> kEmptyG;
        auto ip = preds.find(img);
        auto ig = gts.find(img);
        Prf one = prf1(match(ip != preds.end() ? ip->second : kEmptyP,
                             ig != gts.end() ? ig->second : kEmptyG, iou_thr));
        acc.recall += one.recall;
        acc.precision += one.precision;
        acc.f1 += one.f1;
    }
    double n = ids.empty() ? 1.0 : static_cast<double>(ids.size());
    return {acc.recall / n, acc.precision / n, acc.f1 / n};
}

double average_precision(const PredsByImage& preds, const GtsByImage& gts, double iou_thr,
                         ApInterp interp) {
    int n_gt = 0;
    for (const auto& [_, g] : gts) n_gt += static_cast<int>(g.size());
    int n_pred = 0;
    for (const auto& [_, p] : preds) n_pred += static_cast<int>(p.size());
    if (n_gt == 0) return n_pred == 0 ? 1.0 : 0.0;
    if (n_pred == 0) return 0.0;

    // global descending-score sweep; ties broken by (image id, input order)
    struct Entry {
        double score;
        int img;
        size_t idx;
    };
    std::vector<Entry> entries;
    for (const auto& [img, ps] : preds)
        for (size_t i = 0; i < ps.size(); ++i) entries.push_back({ps[i].score, img, i});
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.img != b.img) return a.img < b.img;
        return a.idx < b.idx;
    });

    std::map<int, std::vector<bool>> gt_used;
    for (const auto& [img, g] : gts) gt_used[img].assign(g.size(), false);

    std::vector<double> prec, rec;
    int tp = 0, fp = 0;
    for (const auto& e : entries) {
        const Detection& d = preds.at(e.img)[e.idx];
        auto git = gts.find(e.img);
        double best = 0.0;
        int best_g = -1;
        if (git != gts.end()) {
            auto& used = gt_used[e.img];
            for (size_t g = 0; g < git->second.size(); ++g) {
                if (used[g]) continue;
                double v = iou(d.box, git->second[g]);
                if (v >= iou_thr && v > best) {
                    best = v;
                    best_g = static_cast<int>(g);
                }
            }
        }
        if (best_g >= 0) {
            gt_used[e.img][static_cast<size_t>(best_g)] = true;
            ++tp;
        } else {
            ++fp;
        }
        prec.push_back(static_cast<double>(tp) / (tp + fp));
        rec.push_back(static_cast<double>(tp) / n_gt);
    }

    if (interp == ApInterp::ElevenPoint) {
        double ap = 0.0;
        for (int k = 0; k <= 10; ++k) {
            double r = k / 10.0;
            double pmax = 0.0;
            for (size_t i = 0; i < rec.size(); ++i)
                if (rec[i] >= r) pmax = std::max(pmax, prec[i]);
            ap += pmax / 11.0;
        }
        return ap;
    }

    // all-points: integrate the monotone (right-to-left max) envelope
    std::vector<double> env = prec;
    for (int i = static_cast<int>(env.size()) - 2; i >= 0; --i)
        env[static_cast<size_t>(i)] = std::max(env[static_cast<size_t>(i)],
                                               env[static_cast<size_t>(i) + 1]);
    double ap = 0.0;
    double prev_r = 0.0;
    for (size_t i = 0; i < rec.size(); ++i) {
        ap += (rec[i] - prev_r) * env[i];
        prev_r = rec[i];
    }
    return ap;
}

double map_over_range(const PredsByImage& preds, const GtsByImage& gts, double thr_lo,
                      double thr_hi, double step, ApInterp interp) {
    if (thr_lo >= thr_hi) throw std::invalid_argument("map_over_range needs lo < hi");
    if (step <= 0.0) throw std::invalid_argument("map_over_range needs positive step");
    int n = static_cast<int>(std::lround((thr_hi - thr_lo) / step));
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) acc += average_precision(preds, gts, thr_lo + i * step, interp);
    return acc / (n + 1);
}

MetricReport iou_sweep(const PredsByImage& preds, const GtsByImage& gts,
                       const std::vector<double>& thresholds, const std::string& dataset_id,
                       const std::string& model_id, bool macro, ApInterp interp) {
    if (thresholds.empty()) throw std::invalid_argument("iou_sweep needs thresholds");
    if (!std::is_sorted(thresholds.begin(), thresholds.end()))
        throw std::invalid_argument("iou_sweep thresholds must be sorted");
    MetricReport report;
    report.dataset_id = dataset_id;
    report.model_id = model_id;
    for (double thr : thresholds) {
        Prf p = dataset_prf1(preds, gts, thr, macro);
        MetricRow row;
        row.iou_thr = thr;
        row.recall = p.recall;
        row.precision = p.precision;
        row.f1 = p.f1;
        row.ap = average_precision(preds, gts, thr, interp);
        report.rows.push_back(row);
    }
    return report;
}

std::string format_report(const MetricReport& report) {
    std::ostringstream os;
    os << "dataset: " << report.dataset_id << "\nmodel:   " << report.model_id << "\n";
    os << "  IoU      R      P     F1    mAP\n";
    char buf[96];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), " %4.2f  %5.3f  %5.3f  %5.3f  %5.3f\n", r.iou_thr,
                      r.recall, r.precision, r.f1, r.ap);
        os << buf;
    }
    return os.str();
}

void write_report(const MetricReport& report, const std::string& txt_path,
                  const std::string& json_path) {
    {
        std::ofstream os(txt_path);
        if (!os) throw std::runtime_error("cannot write report: " + txt_path);
        os << format_report(report);
    }
    nlohmann::json j;
    j["dataset_id"] = report.dataset_id;
    j["model_id"] = report.model_id;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : report.rows)
        j["rows"].push_back({{"iou_thr", r.iou_thr},
                             {"recall", r.recall},
                             {"precision", r.precision},
                             {"f1", r.f1},
                             {"map", r.ap}});
    std::ofstream os(json_path);
    if (!os) throw std::runtime_error("cannot write report: " + json_path);
    os << j.dump(2) << "\n";
}

MetricReport read_report(const std::string& json_path) {
    std::ifstream is(json_path);
    if (!is) throw std::runtime_error("cannot open report: " + json_path);
    nlohmann::json j = nlohmann::json::parse(is);
    MetricReport report;
    report.dataset_id = j.at("dataset_id").get<std::string>();
    report.model_id = j.at("model_id").get<std::string>();
    for (const auto& rj : j.at("rows")) {
        MetricRow r;
        r.iou_thr = rj.at("iou_thr").get<double>();
        r.recall = rj.at("recall").get<double>();
        r.precision = rj.at("precision").get<double>();
        r.f1 = rj.at("f1").get<double>();
        r.ap = rj.at("map").get<double>();
        report.rows.push_back(r);
    }
    return report;
}

}  // namespace tabledet
