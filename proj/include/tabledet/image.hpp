#pragma once

#include <string>
#include <vector>

#include "tabledet/geometry.hpp"

namespace tabledet {

// Single-channel image, values in [0,1], row-major.
struct Image {
    int h = 0, w = 0;
    std::vector<double> pix;

    double at(int y, int x) const { return pix[static_cast<size_t>(y) * w + x]; }
    double& at(int y, int x) { return pix[static_cast<size_t>(y) * w + x]; }
};

Image make_image(int h, int w, double fill);

// Binary PGM (P5, maxval 255).
void write_pgm(const Image& img, const std::string& path);
Image read_pgm(const std::string& path);

Image resize_bilinear(const Image& img, int out_h, int out_w);

// Aspect-preserving fit into out_h x out_w, content at the top-left, the
// remainder filled with `fill`. scale maps source coords to output coords.
struct Letterboxed {
    Image image;
    double scale = 1.0;
};
Letterboxed letterbox(const Image& img, int out_h, int out_w, double fill);

// Rectangle outline; dashed strokes distinguish predictions from GT on a
// grayscale overlay.
void draw_rect(Image& img, const BBox& box, double value, int thickness, bool dashed);

}  // namespace tabledet
