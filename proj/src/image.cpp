#include "tabledet/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace tabledet {

Image make_image(int h, int w, double fill) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("bad image size");
    Image img;
    img.h = h;
    img.w = w;
    img.pix.assign(static_cast<size_t>(h) * w, fill);
    return img;
}

void write_pgm(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "P5\n" << img.w << " " << img.h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(img.w));
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            double v = std::clamp(img.at(y, x), 0.0, 1.0);
            row[static_cast<size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        os.write(reinterpret_cast<const char*>(row.data()), img.w);
    }
    if (!os) throw std::runtime_error("write failure: " + path);
}

Image read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open image: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw std::runtime_error("not a binary PGM (P5): " + path);
    auto next_int = [&is, &path]() {
        // skip whitespace and '#' comment lines
        while (true) {
            int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (c != EOF && std::isspace(static_cast<unsigned char>(c))) {
                is.get();
            } else {
                break;
            }
        }
        int v;
        if (!(is >> v)) throw std::runtime_error("malformed PGM header: " + path);
        return v;
    };
    int w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255) throw std::runtime_error("unsupported PGM maxval: " + path);
    is.get();  // single whitespace after header
    Image img = make_image(h, w, 0.0);
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw std::runtime_error("truncated PGM data: " + path);
    for (size_t i = 0; i < buf.size(); ++i) img.pix[i] = buf[i] / 255.0;
    return img;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    Image out = make_image(out_h, out_w, 0.0);
    double sy = static_cast<double>(img.h) / out_h;
    double sx = static_cast<double>(img.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int ya = std::clamp(y0, 0, img.h - 1);
        int yb = std::clamp(y0 + 1, 0, img.h - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int xa = std::clamp(x0, 0, img.w - 1);
            int xb = std::clamp(x0 + 1, 0, img.w - 1);
            out.at(y, x) = (1 - wy) * ((1 - wx) * img.at(ya, xa) + wx * img.at(ya, xb)) +
                           wy * ((1 - wx) * img.at(yb, xa) + wx * img.at(yb, xb));
        }
    }
    return out;
}

Letterboxed letterbox(const Image& img, int out_h, int out_w, double fill) {
    Letterboxed res;
    if (img.h == out_h && img.w == out_w) {
        res.image = img;
        res.scale = 1.0;
        return res;
    }
    double scale = std::min(static_cast<double>(out_h) / img.h, static_cast<double>(out_w) / img.w);
    int sh = std::max(1, static_cast<int>(std::lround(img.h * scale)));
    int sw = std::max(1, static_cast<int>(std::lround(img.w * scale)));
    Image scaled = resize_bilinear(img, sh, sw);
    res.image = make_image(out_h, out_w, fill);
    for (int y = 0; y < sh; ++y)
        for (int x = 0; x < sw; ++x) res.image.at(y, x) = scaled.at(y, x);
    res.scale = scale;
    return res;
}

void draw_rect(Image& img, const BBox& box, double value, int thickness, bool dashed) {
    int x1 = std::clamp(static_cast<int>(std::lround(box.x1)), 0, img.w - 1);
    int y1 = std::clamp(static_cast<int>(std::lround(box.y1)), 0, img.h - 1);
    int x2 = std::clamp(static_cast<int>(std::lround(box.x2)) - 1, 0, img.w - 1);
    int y2 = std::clamp(static_cast<int>(std::lround(box.y2)) - 1, 0, img.h - 1);
    auto on = [dashed](int t) { return !dashed || (t / 4) % 2 == 0; };
    for (int t = 0; t < thickness; ++t) {
        for (int x = x1; x <= x2; ++x) {
            if (!on(x)) continue;
            if (y1 + t < img.h) img.at(y1 + t, x) = value;
            if (y2 - t >= 0) img.at(y2 - t, x) = value;
        }
        for (int y = y1; y <= y2; ++y) {
            if (!on(y)) continue;
            if (x1 + t < img.w) img.at(y, x1 + t) = value;
            if (x2 - t >= 0) img.at(y, x2 - t) = value;
        }
    }
}

}  // namespace tabledet
