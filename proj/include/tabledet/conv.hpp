#pragma once

#include <vector>

#include "tabledet/rng.hpp"
#include "tabledet/tensor.hpp"

namespace tabledet {

// 2D convolution kernel. Weights are [out_ch, in_ch, kh, kw] with kh, kw odd
// so the sampling grid is centred on each output location; the kh*kw grid
// points are enumerated row-major.
struct ConvKernel {
    Tensor w;
    Tensor b;
    int stride = 1;
    int pad = 0;

    int out_channels() const { return w.dim(0); }
    int in_channels() const { return w.dim(1); }
    int kh() const { return w.dim(2); }
    int kw() const { return w.dim(3); }
};

enum class WeightInit { Zero, Xavier };

ConvKernel make_conv_kernel(int out_ch, int in_ch, int kh, int kw, int stride, int pad,
                            WeightInit init, SplitMix64* rng);

// Output spatial size of a convolution along one axis (floor convention,
// zero padding). Throws when the padded input is smaller than the kernel.
int conv_out_size(int in, int k, int stride, int pad);

// y(o) = bias + sum over grid points of w . x(o*stride - pad + point),
// reads outside the input count as zero.
Tensor conv2d(const Tensor& x, const ConvKernel& k);

// Bilinear interpolation of a [C,H,W] map at fractional (y,x) points given
// as a [n,2] tensor. Points outside [0,H-1]x[0,W-1] interpolate against
// zero-valued phantom neighbours, so the op is total and differentiable in
// both the map and the point coordinates.
Tensor bilinear_sample(const Tensor& x, const Tensor& points);

// Same as conv2d but every grid point of every output location is displaced
// by a learned (dy,dx) pair before sampling bilinearly. offsets is
// [2*kh*kw, H_out, W_out], channel 2n carrying dy and 2n+1 dx of grid point
// n. Gradients flow to the input, the weights, and the offsets.
Tensor deform_conv2d(const Tensor& x, const ConvKernel& k, const Tensor& offsets);

// Offset-prediction layer paired with a deformable kernel: a plain conv2d
// with 2*kh*kw output channels and identical stride/pad, zero-initialised so
// that training starts exactly at the regular-convolution baseline.
struct OffsetHead {
    ConvKernel conv;
};

OffsetHead make_offset_head(int in_ch, int kh, int kw, int stride, int pad);

inline Tensor offset_field(const OffsetHead& head, const Tensor& x) {
    return conv2d(x, head.conv);
}

}  // namespace tabledet
