#include "tabledet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "tabledet/rng.hpp"

namespace tabledet {

namespace {

constexpr double kPaper = 0.94;
constexpr double kInk = 0.12;
constexpr double kLightInk = 0.35;

struct IRect {
    int x1, y1, x2, y2;  // half-open pixel rect
    int w() const { return x2 - x1; }
    int h() const { return y2 - y1; }
};

bool too_close(const IRect& a, const IRect& b, int margin) {
    return a.x1 - margin < b.x2 && b.x1 - margin < a.x2 && a.y1 - margin < b.y2 &&
           b.y1 - margin < a.y2;
}

void fill_rect(Image& img, const IRect& r, double v) {
    for (int y = std::max(0, r.y1); y < std::min(img.h, r.y2); ++y)
        for (int x = std::max(0, r.x1); x < std::min(img.w, r.x2); ++x) img.at(y, x) = v;
}

void hline(Image& img, int y, int x1, int x2, int thick, double v) {
    fill_rect(img, {x1, y, x2, y + thick}, v);
}

void vline(Image& img, int x, int y1, int y2, int thick, double v) {
    fill_rect(img, {x, y1, x + thick, y2}, v);
}

void render_text_lines(Image& img, SplitMix64& rng) {
    int y = 8 + static_cast<int>(rng.below(6));
    while (y < img.h - 10) {
        if (rng.uniform() < 0.85) {
            int x = 10 + static_cast<int>(rng.below(8));
            int line_h = rng.range(2, 3);
            while (x < img.w - 14) {
                int word = rng.range(8, 24);
                word = std::min(word, img.w - 12 - x);
                if (word > 2) fill_rect(img, {x, y, x + word, y + line_h}, 0.25);
                x += word + rng.range(4, 10);
            }
        }
        y += rng.range(10, 16);
    }
}

void render_table(Image& img, const IRect& r, const PageSpec& spec, SplitMix64& rng) {
    fill_rect(img, {r.x1 - 2, r.y1 - 2, r.x2 + 2, r.y2 + 2}, 0.97);
    int rows = rng.range(spec.rows_min, spec.rows_max);
    int cols = rng.range(spec.cols_min, spec.cols_max);
    rows = std::max(1, std::min(rows, r.h() / 8));
    cols = std::max(1, std::min(cols, r.w() / 10));

    // outer border always present
    hline(img, r.y1, r.x1, r.x2, 2, kInk);
    hline(img, r.y2 - 2, r.x1, r.x2, 2, kInk);
    vline(img, r.x1, r.y1, r.y2, 2, kInk);
    vline(img, r.x2 - 2, r.y1, r.y2, 2, kInk);

    // interior rulings, each present with the configured probability
    for (int i = 1; i < rows; ++i) {
        int y = r.y1 + i * r.h() / rows;
        if (rng.uniform() < spec.ruling_prob) hline(img, y, r.x1, r.x2, 1, kInk);
    }
    for (int j = 1; j < cols; ++j) {
        int x = r.x1 + j * r.w() / cols;
        if (rng.uniform() < spec.ruling_prob) vline(img, x, r.y1, r.y2, 1, kInk);
    }

    // sparse cell content dashes
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            if (rng.uniform() >= 0.7) continue;
            int cx = r.x1 + j * r.w() / cols + 3;
            int cy = r.y1 + i * r.h() / rows + std::max(2, r.h() / rows / 2);
            int len = std::min(rng.range(4, r.w() / cols - 4), r.x2 - 4 - cx);
            if (len > 2 && cy + 1 < r.y2 - 2) fill_rect(img, {cx, cy, cx + len, cy + 1}, kLightInk);
        }
}

// Dense-line figures that are not tables: bar charts and signal plots.
void render_figure(Image& img, const IRect& r, SplitMix64& rng) {
    fill_rect(img, {r.x1 - 2, r.y1 - 2, r.x2 + 2, r.y2 + 2}, 0.97);
    if (rng.below(2) == 0) {
        // bar chart: axis plus outlined vertical bars of varying height
        hline(img, r.y2 - 2, r.x1, r.x2, 1, kInk);
        vline(img, r.x1, r.y1, r.y2, 1, kInk);
        int n = rng.range(4, 8);
        int bw = std::max(3, r.w() / (2 * n));
        for (int i = 0; i < n; ++i) {
            int x = r.x1 + 3 + i * (r.w() - 6) / n;
            int bh = rng.range(r.h() / 4, r.h() - 6);
            int top = r.y2 - 2 - bh;
            vline(img, x, top, r.y2 - 2, 1, kInk);
            vline(img, x + bw, top, r.y2 - 2, 1, kInk);
            hline(img, top, x, x + bw + 1, 1, kInk);
        }
    } else {
        // signal plot: many horizontal strokes with tick marks
        int n = rng.range(5, 9);
        for (int i = 0; i < n; ++i) {
            int y = r.y1 + 2 + i * (r.h() - 4) / n;
            int x1 = r.x1 + static_cast<int>(rng.below(static_cast<uint64_t>(r.w() / 3)));
            int x2 = r.x2 - static_cast<int>(rng.below(static_cast<uint64_t>(r.w() / 3)));
            if (x2 > x1 + 4) hline(img, y, x1, x2, 1, kInk);
            int tick = x1 + static_cast<int>(rng.below(static_cast<uint64_t>(std::max(1, x2 - x1))));
            vline(img, tick, y - 2, y + 3, 1, kInk);
        }
    }
}

}  // namespace

std::string page_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "page_%06d", index);
    return buf;
}

DocumentSample generate_page(const PageSpec& spec, int index) {
    if (spec.height < 48 || spec.width < 48) throw std::invalid_argument("page too small");
    if (spec.tables_min < 0 || spec.tables_max < spec.tables_min)
        throw std::invalid_argument("bad table count range");
    if (spec.ruling_prob < 0.0 || spec.ruling_prob > 1.0)
        throw std::invalid_argument("ruling_prob outside [0,1]");

    SplitMix64 rng(mix_seed(spec.seed, 0xD0C0 + static_cast<uint64_t>(index)));
    DocumentSample sample;
    sample.id = page_id(index);
    sample.image = make_image(spec.height, spec.width, kPaper);
    Image& img = sample.image;

    int n_tables = rng.range(spec.tables_min, spec.tables_max);
    int n_figures = rng.range(spec.figures_min, spec.figures_max);

    // placement first: tables, then figures, all mutually >= 8 px apart
    std::vector<IRect> placed;
    std::vector<IRect> tables, figures;
    auto try_place = [&](int min_w, int max_w, int min_h, int max_h) -> std::pair<bool, IRect> {
        int avail_w = spec.width - 16, avail_h = spec.height - 16;
        min_w = std::min(min_w, avail_w);
        min_h = std::min(min_h, avail_h);
        for (int attempt = 0; attempt < 40; ++attempt) {
            int w = rng.range(min_w, std::min(max_w, avail_w));
            int h = rng.range(min_h, std::min(max_h, avail_h));
            int x = 8 + static_cast<int>(rng.below(static_cast<uint64_t>(avail_w - w + 1)));
            int y = 8 + static_cast<int>(rng.below(static_cast<uint64_t>(avail_h - h + 1)));
            IRect r{x, y, x + w, y + h};
            bool ok = true;
            for (const auto& other : placed)
                if (too_close(r, other, 8)) ok = false;
            if (ok) return {true, r};
        }
        return {false, {}};
    };
    for (int i = 0; i < n_tables; ++i) {
        auto [ok, r] = try_place(56, 150, 40, 120);
        if (!ok) continue;  // bounded retries exhausted: emit fewer tables
        placed.push_back(r);
        tables.push_back(r);
    }
    for (int i = 0; i < n_figures; ++i) {
        auto [ok, r] = try_place(40, 110, 30, 90);
        if (!ok) continue;
        placed.push_back(r);
        figures.push_back(r);
    }

    render_text_lines(img, rng);
    for (const auto& r : tables) {
        render_table(img, r, spec, rng);
        sample.gt_boxes.push_back({static_cast<double>(r.x1), static_cast<double>(r.y1),
                                   static_cast<double>(r.x2), static_cast<double>(r.y2)});
        sample.gt_classes.push_back(1);
    }
    for (const auto& r : figures) render_figure(img, r, rng);

    if (spec.noise > 0.0)
        for (auto& v : img.pix)
            v = std::clamp(v + (rng.uniform() - 0.5) * 2.0 * spec.noise, 0.0, 1.0);
    return sample;
}

SplitManifests make_split(int n_train, int n_val, int n_test) {
    if (n_train < 0 || n_val < 0 || n_test < 0) throw std::invalid_argument("negative split size");
    SplitManifests m;
    int idx = 0;
    for (int i = 0; i < n_train; ++i) m.train.push_back(page_id(idx++));
    for (int i = 0; i < n_val; ++i) m.val.push_back(page_id(idx++));
    for (int i = 0; i < n_test; ++i) m.test.push_back(page_id(idx++));
    return m;
}

void write_annotations(const std::vector<DocumentSample>& samples, const std::string& path) {
    nlohmann::json j;
    j["images"] = nlohmann::json::array();
    j["annotations"] = nlohmann::json::array();
    j["categories"] = nlohmann::json::array({{{"id", 1}, {"name", "table"}}});
    int ann_id = 1;
    for (const auto& s : samples) {
        int img_id = std::stoi(s.id.substr(5));
        j["images"].push_back({{"id", img_id},
                               {"file_name", s.id + ".pgm"},
                               {"width", s.image.w},
                               {"height", s.image.h}});
        for (size_t b = 0; b < s.gt_boxes.size(); ++b) {
            const BBox& box = s.gt_boxes[b];
            j["annotations"].push_back(
                {{"id", ann_id++},
                 {"image_id", img_id},
                 {"category_id", s.gt_classes[b]},
                 {"bbox", {box.x1, box.y1, box.x2 - box.x1, box.y2 - box.y1}}});
        }
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write annotations: " + path);
    os << j.dump(2) << "\n";
}

namespace {

[[noreturn]] void malformed(const std::string& path, const std::string& what) {
    throw std::runtime_error("malformed annotation file " + path + ": " + what);
}

}  // namespace

Annotations read_annotations(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open annotations: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        malformed(path, e.what());
    }
    Annotations out;
    if (!j.contains("images") || !j["images"].is_array()) malformed(path, "missing images array");
    if (!j.contains("annotations") || !j["annotations"].is_array())
        malformed(path, "missing annotations array");
    if (!j.contains("categories") || !j["categories"].is_array())
        malformed(path, "missing categories array");
    for (const auto& ji : j["images"]) {
        Annotations::ImageInfo info;
        if (!ji.contains("id") || !ji["id"].is_number_integer()) malformed(path, "images[].id");
        info.id = ji["id"].get<int>();
        if (!ji.contains("file_name") || !ji["file_name"].is_string())
            malformed(path, "images[].file_name");
        info.file_name = ji["file_name"].get<std::string>();
        if (!ji.contains("width") || !ji.contains("height"))
            malformed(path, "images[].width/height");
        info.width = ji["width"].get<int>();
        info.height = ji["height"].get<int>();
        out.images.push_back(std::move(info));
        out.boxes[out.images.back().id];  // ensure key exists even with no boxes
        out.classes[out.images.back().id];
    }
    for (const auto& ja : j["annotations"]) {
        if (!ja.contains("image_id") || !ja.contains("bbox") || !ja.contains("category_id"))
            malformed(path, "annotations[] missing image_id/bbox/category_id");
        const auto& bb = ja["bbox"];
        if (!bb.is_array() || bb.size() != 4) malformed(path, "annotations[].bbox must be [x,y,w,h]");
        int img_id = ja["image_id"].get<int>();
        double x = bb[0].get<double>(), y = bb[1].get<double>();
        double w = bb[2].get<double>(), h = bb[3].get<double>();
        out.boxes[img_id].push_back({x, y, x + w, y + h});
        out.classes[img_id].push_back(ja["category_id"].get<int>());
    }
    for (const auto& jc : j["categories"])
        out.categories.emplace_back(jc.at("id").get<int>(), jc.at("name").get<std::string>());
    return out;
}

void write_predictions(const std::map<int, std::vector<Detection>>& dets,
                       const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [img_id, ds] : dets) {
        std::vector<Detection> sorted = ds;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const Detection& a, const Detection& b) { return a.score > b.score; });
        for (const auto& d : sorted)
            arr.push_back({{"image_id", img_id},
                           {"category_id", d.class_id},
                           {"bbox", {d.box.x1, d.box.y1, d.box.width(), d.box.height()}},
                           {"score", d.score}});
    }
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write predictions: " + path);
    os << arr.dump(2) << "\n";
}

std::map<int, std::vector<Detection>> read_predictions(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open predictions: " + path);
    nlohmann::json arr;
    try {
        arr = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("malformed prediction file " + path + ": " + e.what());
    }
    if (!arr.is_array()) throw std::runtime_error("prediction file must be a JSON array: " + path);
    std::map<int, std::vector<Detection>> out;
    for (const auto& jd : arr) {
        const auto& bb = jd.at("bbox");
        Detection d;
        d.box = {bb[0].get<double>(), bb[1].get<double>(),
                 bb[0].get<double>() + bb[2].get<double>(),
                 bb[1].get<double>() + bb[3].get<double>()};
        d.score = jd.at("score").get<double>();
        d.class_id = jd.at("category_id").get<int>();
        out[jd.at("image_id").get<int>()].push_back(d);
    }
    return out;
}

}  // namespace tabledet
