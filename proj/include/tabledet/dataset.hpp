#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tabledet/geometry.hpp"
#include "tabledet/image.hpp"

namespace tabledet {

struct DocumentSample {
    Image image;
    std::vector<BBox> gt_boxes;
    std::vector<int> gt_classes;
    std::string id;
};

// Knobs for the synthetic page corpus: ruled tables (GT), text-line bands
// and dense-line distractor figures (clutter), all fully determined by
// (seed, index).
struct PageSpec {
    int height = 256;
    int width = 192;
    int tables_min = 1, tables_max = 3;
    int rows_min = 2, rows_max = 6;
    int cols_min = 2, cols_max = 5;
    double ruling_prob = 0.85;
    int figures_min = 0, figures_max = 2;
    double noise = 0.02;
    uint64_t seed = 0;
};

DocumentSample generate_page(const PageSpec& spec, int index);

std::string page_id(int index);

struct SplitManifests {
    std::vector<std::string> train, val, test;
};

// Disjoint, consecutive index ranges: [0,n_train), then val, then test.
SplitManifests make_split(int n_train, int n_val, int n_test);

// COCO-style annotation records:
//   images[{id, file_name, width, height}]
//   annotations[{id, image_id, category_id, bbox:[x,y,w,h]}]
//   categories[{id, name}]
void write_annotations(const std::vector<DocumentSample>& samples, const std::string& path);

struct Annotations {
    struct ImageInfo {
        int id = 0;
        std::string file_name;
        int width = 0, height = 0;
    };
    std::vector<ImageInfo> images;
    std::map<int, std::vector<BBox>> boxes;
    std::map<int, std::vector<int>> classes;
    std::vector<std::pair<int, std::string>> categories;
};

Annotations read_annotations(const std::string& path);

// COCO-result-style records [{image_id, category_id, bbox, score}], sorted
// by (image_id, -score).
void write_predictions(const std::map<int, std::vector<Detection>>& dets, const std::string& path);
std::map<int, std::vector<Detection>> read_predictions(const std::string& path);

}  // namespace tabledet
