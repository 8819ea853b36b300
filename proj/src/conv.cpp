#include "tabledet/conv.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tabledet {

namespace {

void check_kernel(const ConvKernel& k) {
    if (k.w.rank() != 4) throw std::invalid_argument("kernel weights must be [O,C,kh,kw]");
    if (k.b.rank() != 1 || k.b.dim(0) != k.out_channels())
        throw std::invalid_argument("kernel bias must be [out_ch]");
    if (k.kh() % 2 == 0 || k.kw() % 2 == 0)
        throw std::invalid_argument("kernel size must be odd, got " + std::to_string(k.kh()) +
                                    "x" + std::to_string(k.kw()));
    if (k.stride <= 0 || k.pad < 0) throw std::invalid_argument("bad stride/pad");
}

// Single bilinear read with zero phantom neighbours, following the usual
// deformable-convolution CPU kernels: fully outside (-1,H)x(-1,W) is 0.
inline double bilinear_at(const double* im, int h, int w, double y, double x) {
    if (y <= -1.0 || y >= static_cast<double>(h) || x <= -1.0 || x >= static_cast<double>(w))
        return 0.0;
    int yl = static_cast<int>(std::floor(y));
    int xl = static_cast<int>(std::floor(x));
    int yh = yl + 1, xh = xl + 1;
    double wy = y - yl, wx = x - xl;
    double v = 0.0;
    if (yl >= 0 && xl >= 0) v += (1.0 - wy) * (1.0 - wx) * im[yl * w + xl];
    if (yl >= 0 && xh < w) v += (1.0 - wy) * wx * im[yl * w + xh];
    if (yh < h && xl >= 0) v += wy * (1.0 - wx) * im[yh * w + xl];
    if (yh < h && xh < w) v += wy * wx * im[yh * w + xh];
    return v;
}

// Scatters g into the four neighbours of (y,x).
inline void bilinear_scatter(double* gim, int h, int w, double y, double x, double g) {
    if (y <= -1.0 || y >= static_cast<double>(h) || x <= -1.0 || x >= static_cast<double>(w))
        return;
    int yl = static_cast<int>(std::floor(y));
    int xl = static_cast<int>(std::floor(x));
    int yh = yl + 1, xh = xl + 1;
    double wy = y - yl, wx = x - xl;
    if (yl >= 0 && xl >= 0) gim[yl * w + xl] += (1.0 - wy) * (1.0 - wx) * g;
    if (yl >= 0 && xh < w) gim[yl * w + xh] += (1.0 - wy) * wx * g;
    if (yh < h && xl >= 0) gim[yh * w + xl] += wy * (1.0 - wx) * g;
    if (yh < h && xh < w) gim[yh * w + xh] += wy * wx * g;
}

// d(sample)/dy and d(sample)/dx at (y,x).
inline void bilinear_coord_grad(const double* im, int h, int w, double y, double x,
                                double* dy, double* dx) {
    *dy = 0.0;
    *dx = 0.0;
    if (y <= -1.0 || y >= static_cast<double>(h) || x <= -1.0 || x >= static_cast<double>(w))
        return;
    int yl = static_cast<int>(std::floor(y));
    int xl = static_cast<int>(std::floor(x));
    int yh = yl + 1, xh = xl + 1;
    double wy = y - yl, wx = x - xl;
    double vll = (yl >= 0 && xl >= 0) ? im[yl * w + xl] : 0.0;
    double vlh = (yl >= 0 && xh < w) ? im[yl * w + xh] : 0.0;
    double vhl = (yh < h && xl >= 0) ? im[yh * w + xl] : 0.0;
    double vhh = (yh < h && xh < w) ? im[yh * w + xh] : 0.0;
    *dy = (1.0 - wx) * (vhl - vll) + wx * (vhh - vlh);
    *dx = (1.0 - wy) * (vlh - vll) + wy * (vhh - vhl);
}

}  // namespace

int conv_out_size(int in, int k, int stride, int pad) {
    int span = in + 2 * pad - k;
    if (span < 0)
        throw std::invalid_argument("kernel " + std::to_string(k) + " exceeds padded input " +
                                    std::to_string(in + 2 * pad));
    return span / stride + 1;
}

ConvKernel make_conv_kernel(int out_ch, int in_ch, int kh, int kw, int stride, int pad,
                            WeightInit init, SplitMix64* rng) {
    ConvKernel k;
    k.stride = stride;
    k.pad = pad;
    if (init == WeightInit::Zero) {
        k.w = Tensor::zeros({out_ch, in_ch, kh, kw}, true);
    } else {
        // He uniform: keeps activation variance stable through the relu trunk
        double fan_in = static_cast<double>(in_ch) * kh * kw;
        double limit = std::sqrt(6.0 / fan_in);
        std::vector<double> w(static_cast<size_t>(out_ch) * in_ch * kh * kw);
        for (auto& v : w) v = rng->uniform(-limit, limit);
        k.w = Tensor::from_data({out_ch, in_ch, kh, kw}, std::move(w), true);
    }
    k.b = Tensor::zeros({out_ch}, true);
    check_kernel(k);
    return k;
}

Tensor conv2d(const Tensor& x, const ConvKernel& k) {
    check_kernel(k);
    if (x.rank() != 3) throw std::invalid_argument("conv2d input must be [C,H,W]");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (c != k.in_channels())
        throw std::invalid_argument("conv2d channel mismatch: input " + std::to_string(c) +
                                    " vs kernel " + std::to_string(k.in_channels()));
    int kh = k.kh(), kw = k.kw(), o = k.out_channels();
    int oh = conv_out_size(h, kh, k.stride, k.pad);
    int ow = conv_out_size(w, kw, k.stride, k.pad);
    int taps = kh * kw;

    std::vector<double> out(static_cast<size_t>(o) * oh * ow);
    const double* xp = x.data().data();
    const double* wp = k.w.data().data();
    const double* bp = k.b.data().data();
    // per-location sample buffer shared with the deformable path so both
    // accumulate contributions in the identical (ic, grid point) order
    std::vector<double> sampled(static_cast<size_t>(c) * taps);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            int iy0 = oy * k.stride - k.pad;
            int ix0 = ox * k.stride - k.pad;
            for (int ic = 0; ic < c; ++ic) {
                const double* plane = xp + static_cast<size_t>(ic) * h * w;
                double* srow = sampled.data() + static_cast<size_t>(ic) * taps;
                for (int ky = 0; ky < kh; ++ky) {
                    int iy = iy0 + ky;
                    for (int kx = 0; kx < kw; ++kx) {
                        int ix = ix0 + kx;
                        srow[ky * kw + kx] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                                 ? plane[iy * w + ix]
                                                 : 0.0;
                    }
                }
            }
            for (int oc = 0; oc < o; ++oc) {
                double acc = bp[oc];
                const double* wrow = wp + static_cast<size_t>(oc) * c * taps;
                for (int j = 0; j < c * taps; ++j) acc += wrow[j] * sampled[static_cast<size_t>(j)];
                out[(static_cast<size_t>(oc) * oh + oy) * ow + ox] = acc;
            }
        }
    }

    auto node = std::make_shared<TensorNode>();
    node->shape = {o, oh, ow};
    node->data = std::move(out);
    if (GradMode::enabled() && (x.requires_grad() || k.w.requires_grad() || k.b.requires_grad())) {
        node->requires_grad = true;
        node->parents = {x.node, k.w.node, k.b.node};
        auto xn = x.node, wn = k.w.node, bn = k.b.node;
        int stride = k.stride, pad = k.pad;
        node->backward = [=](TensorNode& self) {
            const double* g = self.grad.data();
            bool need_x = xn->requires_grad, need_w = wn->requires_grad, need_b = bn->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_w) wn->ensure_grad();
            if (need_b) bn->ensure_grad();
            int taps = kh * kw;
            std::vector<double> sampled(static_cast<size_t>(c) * taps);
            std::vector<double> dsamp(static_cast<size_t>(c) * taps);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    int iy0 = oy * stride - pad;
                    int ix0 = ox * stride - pad;
                    if (need_w) {
                        for (int ic = 0; ic < c; ++ic) {
                            const double* plane = xn->data.data() + static_cast<size_t>(ic) * h * w;
                            double* srow = sampled.data() + static_cast<size_t>(ic) * taps;
                            for (int ky = 0; ky < kh; ++ky) {
                                int iy = iy0 + ky;
                                for (int kx = 0; kx < kw; ++kx) {
                                    int ix = ix0 + kx;
                                    srow[ky * kw + kx] =
                                        (iy >= 0 && iy < h && ix >= 0 && ix < w) ? plane[iy * w + ix]
                                                                                 : 0.0;
                                }
                            }
                        }
                    }
                    std::fill(dsamp.begin(), dsamp.end(), 0.0);
                    for (int oc = 0; oc < o; ++oc) {
                        double go = g[(static_cast<size_t>(oc) * oh + oy) * ow + ox];
                        if (go == 0.0) continue;
                        if (need_b) bn->grad[static_cast<size_t>(oc)] += go;
                        const double* wrow = wn->data.data() + static_cast<size_t>(oc) * c * taps;
                        double* dwrow = need_w ? wn->grad.data() + static_cast<size_t>(oc) * c * taps
                                               : nullptr;
                        for (int j = 0; j < c * taps; ++j) {
                            if (need_w) dwrow[j] += go * sampled[static_cast<size_t>(j)];
                            if (need_x) dsamp[static_cast<size_t>(j)] += go * wrow[j];
                        }
                    }
                    if (need_x) {
                        for (int ic = 0; ic < c; ++ic) {
                            double* gplane = xn->grad.data() + static_cast<size_t>(ic) * h * w;
                            const double* drow = dsamp.data() + static_cast<size_t>(ic) * taps;
                            for (int ky = 0; ky < kh; ++ky) {
                                int iy = iy0 + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    int ix = ix0 + kx;
                                    if (ix < 0 || ix >= w) continue;
                                    gplane[iy * w + ix] += drow[ky * kw + kx];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return Tensor(node);
}

Tensor bilinear_sample(const Tensor& x, const Tensor& points) {
    if (x.rank() != 3) throw std::invalid_argument("bilinear_sample input must be [C,H,W]");
    if (points.rank() != 2 || points.dim(1) != 2)
        throw std::invalid_argument("bilinear_sample points must be [n,2]");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int n = points.dim(0);
    std::vector<double> out(static_cast<size_t>(c) * n);
    const double* xp = x.data().data();
    const double* pp = points.data().data();
    for (int ic = 0; ic < c; ++ic) {
        const double* plane = xp + static_cast<size_t>(ic) * h * w;
        for (int i = 0; i < n; ++i)
            out[static_cast<size_t>(ic) * n + i] = bilinear_at(plane, h, w, pp[2 * i], pp[2 * i + 1]);
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = {c, n};
    node->data = std::move(out);
    if (GradMode::enabled() && (x.requires_grad() || points.requires_grad())) {
        node->requires_grad = true;
        node->parents = {x.node, points.node};
        auto xn = x.node, ptn = points.node;
        node->backward = [=](TensorNode& self) {
            const double* g = self.grad.data();
            const double* pts = ptn->data.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int ic = 0; ic < c; ++ic) {
                    double* gplane = xn->grad.data() + static_cast<size_t>(ic) * h * w;
                    for (int i = 0; i < n; ++i)
                        bilinear_scatter(gplane, h, w, pts[2 * i], pts[2 * i + 1],
                                         g[static_cast<size_t>(ic) * n + i]);
                }
            }
            if (ptn->requires_grad) {
                ptn->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    double gy = 0.0, gx = 0.0;
                    for (int ic = 0; ic < c; ++ic) {
                        const double* plane = xn->data.data() + static_cast<size_t>(ic) * h * w;
                        double dy, dx;
                        bilinear_coord_grad(plane, h, w, pts[2 * i], pts[2 * i + 1], &dy, &dx);
                        double go = g[static_cast<size_t>(ic) * n + i];
                        gy += go * dy;
                        gx += go * dx;
                    }
                    ptn->grad[static_cast<size_t>(2 * i)] += gy;
                    ptn->grad[static_cast<size_t>(2 * i + 1)] += gx;
                }
            }
        };
    }
    return Tensor(node);
}

Tensor deform_conv2d(const Tensor& x, const ConvKernel& k, const Tensor& offsets) {
    check_kernel(k);
    if (x.rank() != 3) throw std::invalid_argument("deform_conv2d input must be [C,H,W]");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (c != k.in_channels())
        throw std::invalid_argument("deform_conv2d channel mismatch: input " + std::to_string(c) +
                                    " vs kernel " + std::to_string(k.in_channels()));
    int kh = k.kh(), kw = k.kw(), o = k.out_channels();
    int taps = kh * kw;
    int oh = conv_out_size(h, kh, k.stride, k.pad);
    int ow = conv_out_size(w, kw, k.stride, k.pad);
    if (offsets.rank() != 3 || offsets.dim(0) != 2 * taps)
        throw std::invalid_argument("offset field must have " + std::to_string(2 * taps) +
                                    " channels, got " + shape_str(offsets.shape()));
    if (offsets.dim(1) != oh || offsets.dim(2) != ow)
        throw std::invalid_argument("offset field " + shape_str(offsets.shape()) +
                                    " does not match output grid " + std::to_string(oh) + "x" +
                                    std::to_string(ow));

    std::vector<double> out(static_cast<size_t>(o) * oh * ow);
    const double* xp = x.data().data();
    const double* wp = k.w.data().data();
    const double* bp = k.b.data().data();
    const double* op = offsets.data().data();
    int64_t plane_sz = static_cast<int64_t>(oh) * ow;
    std::vector<double> sampled(static_cast<size_t>(c) * taps);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            int iy0 = oy * k.stride - k.pad;
            int ix0 = ox * k.stride - k.pad;
            for (int ic = 0; ic < c; ++ic) {
                const double* plane = xp + static_cast<size_t>(ic) * h * w;
                double* srow = sampled.data() + static_cast<size_t>(ic) * taps;
                for (int t = 0; t < taps; ++t) {
                    double sy = iy0 + t / kw + op[(2 * t) * plane_sz + oy * ow + ox];
                    double sx = ix0 + t % kw + op[(2 * t + 1) * plane_sz + oy * ow + ox];
                    srow[t] = bilinear_at(plane, h, w, sy, sx);
                }
            }
            for (int oc = 0; oc < o; ++oc) {
                double acc = bp[oc];
                const double* wrow = wp + static_cast<size_t>(oc) * c * taps;
                for (int j = 0; j < c * taps; ++j) acc += wrow[j] * sampled[static_cast<size_t>(j)];
                out[(static_cast<size_t>(oc) * oh + oy) * ow + ox] = acc;
            }
        }
    }

    auto node = std::make_shared<TensorNode>();
    node->shape = {o, oh, ow};
    node->data = std::move(out);
    if (GradMode::enabled() &&
        (x.requires_grad() || k.w.requires_grad() || k.b.requires_grad() || offsets.requires_grad())) {
        node->requires_grad = true;
        node->parents = {x.node, k.w.node, k.b.node, offsets.node};
        auto xn = x.node, wn = k.w.node, bn = k.b.node, on = offsets.node;
        int stride = k.stride, pad = k.pad;
        node->backward = [=](TensorNode& self) {
            const double* g = self.grad.data();
            const double* off = on->data.data();
            bool need_x = xn->requires_grad, need_w = wn->requires_grad;
            bool need_b = bn->requires_grad, need_o = on->requires_grad;
            if (need_x) xn->ensure_grad();
            if (need_w) wn->ensure_grad();
            if (need_b) bn->ensure_grad();
            if (need_o) on->ensure_grad();
            std::vector<double> sampled(static_cast<size_t>(c) * taps);
            std::vector<double> dsamp(static_cast<size_t>(c) * taps);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    int iy0 = oy * stride - pad;
                    int ix0 = ox * stride - pad;
                    if (need_w) {
                        for (int ic = 0; ic < c; ++ic) {
                            const double* plane = xn->data.data() + static_cast<size_t>(ic) * h * w;
                            double* srow = sampled.data() + static_cast<size_t>(ic) * taps;
                            for (int t = 0; t < taps; ++t) {
                                double sy = iy0 + t / kw + off[(2 * t) * plane_sz + oy * ow + ox];
                                double sx = ix0 + t % kw + off[(2 * t + 1) * plane_sz + oy * ow + ox];
                                srow[t] = bilinear_at(plane, h, w, sy, sx);
                            }
                        }
                    }
                    std::fill(dsamp.begin(), dsamp.end(), 0.0);
                    for (int oc = 0; oc < o; ++oc) {
                        double go = g[(static_cast<size_t>(oc) * oh + oy) * ow + ox];
                        if (go == 0.0) continue;
                        if (need_b) bn->grad[static_cast<size_t>(oc)] += go;
                        const double* wrow = wn->data.data() + static_cast<size_t>(oc) * c * taps;
                        double* dwrow = need_w ? wn->grad.data() + static_cast<size_t>(oc) * c * taps
                                               : nullptr;
                        for (int j = 0; j < c * taps; ++j) {
                            if (need_w) dwrow[j] += go * sampled[static_cast<size_t>(j)];
                            dsamp[static_cast<size_t>(j)] += go * wrow[j];
                        }
                    }
                    if (need_x || need_o) {
                        for (int t = 0; t < taps; ++t) {
                            double sy = iy0 + t / kw + off[(2 * t) * plane_sz + oy * ow + ox];
                            double sx = ix0 + t % kw + off[(2 * t + 1) * plane_sz + oy * ow + ox];
                            double gy_acc = 0.0, gx_acc = 0.0;
                            for (int ic = 0; ic < c; ++ic) {
                                double ds = dsamp[static_cast<size_t>(ic) * taps + t];
                                if (ds == 0.0) continue;
                                if (need_x)
                                    bilinear_scatter(xn->grad.data() + static_cast<size_t>(ic) * h * w,
                                                     h, w, sy, sx, ds);
                                if (need_o) {
                                    double dy, dx;
                                    bilinear_coord_grad(
                                        xn->data.data() + static_cast<size_t>(ic) * h * w, h, w, sy,
                                        sx, &dy, &dx);
                                    gy_acc += ds * dy;
                                    gx_acc += ds * dx;
                                }
                            }
                            if (need_o) {
                                on->grad[static_cast<size_t>((2 * t) * plane_sz + oy * ow + ox)] +=
                                    gy_acc;
                                on->grad[static_cast<size_t>((2 * t + 1) * plane_sz + oy * ow + ox)] +=
                                    gx_acc;
                            }
                        }
                    }
                }
            }
        };
    }
    return Tensor(node);
}

OffsetHead make_offset_head(int in_ch, int kh, int kw, int stride, int pad) {
    OffsetHead head;
    head.conv = make_conv_kernel(2 * kh * kw, in_ch, kh, kw, stride, pad, WeightInit::Zero, nullptr);
    return head;
}

}  // namespace tabledet
