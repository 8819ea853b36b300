#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support/testutil.hpp"
#include "tabledet/conv.hpp"
#include "tabledet/tensor.hpp"

using namespace tabledet;
using testutil::finite_diff_check;
using testutil::random_tensor;

namespace {

ConvKernel random_kernel(int o, int c, int k, int stride, int pad, SplitMix64& rng) {
    ConvKernel kk = make_conv_kernel(o, c, k, k, stride, pad, WeightInit::Xavier, &rng);
    for (auto& v : kk.b.mutable_data()) v = rng.uniform(-0.5, 0.5);
    return kk;
}

// offsets kept away from the integer lattice so central differences stay on
// one side of the bilinear kinks
Tensor random_offsets(int taps, int oh, int ow, SplitMix64& rng, bool requires_grad) {
    std::vector<double> data(static_cast<size_t>(2 * taps) * oh * ow);
    for (auto& v : data) {
        double frac = rng.uniform(0.15, 0.85);
        v = (rng.below(2) ? 1.0 : -1.0) * (rng.below(2) + frac);
    }
    return Tensor::from_data({2 * taps, oh, ow}, std::move(data), requires_grad);
}

}  // namespace

TEST_CASE("1x1 identity kernel passes input through") {
    SplitMix64 rng(1);
    Tensor x = random_tensor({1, 4, 5}, rng);
    ConvKernel k = make_conv_kernel(1, 1, 1, 1, 1, 0, WeightInit::Zero, nullptr);
    k.w.mutable_data()[0] = 1.0;
    Tensor y = conv2d(x, k);
    CHECK(y.shape() == x.shape());
    CHECK(y.data() == x.data());
}

TEST_CASE("3x3 all-ones kernel sums a 3x3 patch") {
    Tensor x = Tensor::full({1, 3, 3}, 1.0);
    ConvKernel k = make_conv_kernel(1, 1, 3, 3, 1, 0, WeightInit::Zero, nullptr);
    for (auto& v : k.w.mutable_data()) v = 1.0;
    Tensor y = conv2d(x, k);
    CHECK(y.shape() == std::vector<int>{1, 1, 1});
    CHECK(y.item() == 9.0);
}

TEST_CASE("conv2d matches the naive-loop reference exactly on 50 random cases") {
    for (uint64_t seed = 0; seed < 50; ++seed) {
        SplitMix64 rng(seed * 131 + 7);
        int c = rng.range(1, 3), o = rng.range(1, 3);
        int k = 2 * rng.range(0, 1) + 1;
        int h = rng.range(k, 7), w = rng.range(k, 7);
        int stride = rng.range(1, 2), pad = rng.range(0, 1);
        Tensor x = random_tensor({c, h, w}, rng);
        ConvKernel kk = random_kernel(o, c, k, stride, pad, rng);
        Tensor got = conv2d(x, kk);
        Tensor want = testutil::naive_conv2d(x, kk.w, kk.b, stride, pad);
        REQUIRE(got.shape() == want.shape());
        CHECK(got.data() == want.data());
    }
}

TEST_CASE("conv2d error cases") {
    SplitMix64 rng(2);
    Tensor x = random_tensor({2, 5, 5}, rng);
    ConvKernel k = random_kernel(1, 3, 3, 1, 1, rng);
    CHECK_THROWS_AS(conv2d(x, k), std::invalid_argument);  // channel mismatch

    ConvKernel big = random_kernel(1, 2, 7, 1, 0, rng);
    CHECK_THROWS_AS(conv2d(x, big), std::invalid_argument);  // kernel exceeds input
}

TEST_CASE("conv2d gradients vs finite differences") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        SplitMix64 rng(seed + 400);
        Tensor x = random_tensor({2, 5, 5}, rng, -1, 1, true);
        ConvKernel k = random_kernel(3, 2, 3, 1, 1, rng);
        auto loss = [&] {
            Tensor y = conv2d(x, k);
            return sum(mul(y, y));
        };
        CHECK(finite_diff_check(loss, x).ok(1e-4));
        CHECK(finite_diff_check(loss, k.w).ok(1e-4));
        CHECK(finite_diff_check(loss, k.b).ok(1e-4));
    }
}

TEST_CASE("bilinear sampling basics") {
    SplitMix64 rng(3);
    Tensor x = random_tensor({2, 4, 4}, rng);
    Tensor p = Tensor::from_data({1, 2}, {1.0, 1.0});
    Tensor s = bilinear_sample(x, p);
    CHECK(s.data()[0] == x.data()[1 * 4 + 1]);
    CHECK(s.data()[1] == x.data()[16 + 1 * 4 + 1]);

    // midpoint between two rows of a column
    Tensor col = Tensor::from_data({1, 2, 1}, {1.0, 3.0});
    Tensor mid = bilinear_sample(col, Tensor::from_data({1, 2}, {0.5, 0.0}));
    CHECK(mid.data()[0] == doctest::Approx(2.0));
}

TEST_CASE("out-of-bounds samples stay within data bounds") {
    SplitMix64 rng(4);
    Tensor x = random_tensor({1, 4, 4}, rng, 0.2, 1.0);
    double lo = *std::min_element(x.data().begin(), x.data().end());
    double hi = *std::max_element(x.data().begin(), x.data().end());
    std::vector<double> pts = {-5.0, 2.0,  2.0, -5.0, -0.5, -0.5, 3.5,  3.5,
                               10.0, 10.0, 1.5, 4.2,  -1.0, 0.0,  3.99, 0.5};
    Tensor s = bilinear_sample(x, Tensor::from_data({8, 2}, std::move(pts)));
    for (double v : s.data()) {
        CHECK(std::isfinite(v));
        CHECK(v >= std::min(0.0, lo));
        CHECK(v <= hi);
    }
}

TEST_CASE("bilinear point-coordinate gradient vs finite differences") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        SplitMix64 rng(seed + 900);
        Tensor x = random_tensor({1, 4, 4}, rng, -1, 1, true);
        std::vector<double> pts;
        for (int i = 0; i < 5; ++i) {
            pts.push_back(rng.range(0, 2) + rng.uniform(0.2, 0.8));
            pts.push_back(rng.range(0, 2) + rng.uniform(0.2, 0.8));
        }
        Tensor p = Tensor::from_data({5, 2}, std::move(pts), true);
        auto loss = [&] {
            Tensor s = bilinear_sample(x, p);
            return sum(mul(s, s));
        };
        CHECK(finite_diff_check(loss, p).ok(1e-4));
        CHECK(finite_diff_check(loss, x).ok(1e-4));
    }
}

TEST_CASE("zero offsets reduce deformable conv to regular conv bit-exactly") {
    for (uint64_t seed = 0; seed < 50; ++seed) {
        SplitMix64 rng(seed * 31 + 5);
        int c = rng.range(1, 3), o = rng.range(1, 3);
        int k = 2 * rng.range(0, 1) + 1;
        int h = rng.range(k, 8), w = rng.range(k, 8);
        int stride = rng.range(1, 2), pad = rng.range(0, 1);
        Tensor x = random_tensor({c, h, w}, rng);
        ConvKernel kk = random_kernel(o, c, k, stride, pad, rng);
        int oh = conv_out_size(h, k, stride, pad);
        int ow = conv_out_size(w, k, stride, pad);
        Tensor zero_off = Tensor::zeros({2 * k * k, oh, ow});
        Tensor a = deform_conv2d(x, kk, zero_off);
        Tensor b = conv2d(x, kk);
        REQUIRE(a.shape() == b.shape());
        CHECK(a.data() == b.data());
    }
}

TEST_CASE("constant (0,1) offset shifts a ramp one column left") {
    // 1x1 identity kernel over a horizontal ramp: sampling at x+1 makes
    // output(x) = input(x+1), with zero filling the vacated last column
    std::vector<double> ramp = {0, 1, 2, 3, 0, 1, 2, 3};
    Tensor x = Tensor::from_data({1, 2, 4}, ramp);
    ConvKernel k = make_conv_kernel(1, 1, 1, 1, 1, 0, WeightInit::Zero, nullptr);
    k.w.mutable_data()[0] = 1.0;
    std::vector<double> off(2 * 1 * 2 * 4, 0.0);
    for (int i = 8; i < 16; ++i) off[static_cast<size_t>(i)] = 1.0;  // dx channel
    Tensor y = deform_conv2d(x, k, Tensor::from_data({2, 2, 4}, std::move(off)));
    CHECK(y.data() == std::vector<double>{1, 2, 3, 0, 1, 2, 3, 0});
}

TEST_CASE("half-pixel offset interpolates between rows") {
    Tensor x = Tensor::from_data({1, 2, 1}, {0.0, 2.0});
    ConvKernel k = make_conv_kernel(1, 1, 1, 1, 1, 0, WeightInit::Zero, nullptr);
    k.w.mutable_data()[0] = 1.0;
    std::vector<double> off = {0.5, 0.0, 0.0, 0.0};  // dy=0.5 at first location
    Tensor y = deform_conv2d(x, k, Tensor::from_data({2, 2, 1}, std::move(off)));
    CHECK(y.data()[0] == doctest::Approx(1.0));
    CHECK(y.data()[1] == doctest::Approx(2.0));
}

TEST_CASE("deform_conv2d rejects mismatched offset fields") {
    SplitMix64 rng(6);
    Tensor x = random_tensor({1, 5, 5}, rng);
    ConvKernel k = random_kernel(1, 1, 3, 1, 1, rng);
    CHECK_THROWS_AS(deform_conv2d(x, k, Tensor::zeros({4, 5, 5})), std::invalid_argument);
    CHECK_THROWS_AS(deform_conv2d(x, k, Tensor::zeros({18, 4, 5})), std::invalid_argument);
}

TEST_CASE("all three deformable gradient paths vs finite differences") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        SplitMix64 rng(seed + 1200);
        Tensor x = random_tensor({2, 6, 6}, rng, -1, 1, true);
        ConvKernel k = random_kernel(2, 2, 3, 1, 1, rng);
        Tensor off = random_offsets(9, 6, 6, rng, true);
        auto loss = [&] {
            Tensor y = deform_conv2d(x, k, off);
            return sum(mul(y, y));
        };
        CHECK(finite_diff_check(loss, x).ok(1e-4));
        CHECK(finite_diff_check(loss, k.w).ok(1e-4));
        CHECK(finite_diff_check(loss, k.b).ok(1e-4));
        CHECK(finite_diff_check(loss, off).ok(1e-4));
    }
}

TEST_CASE("offset head starts at the regular-convolution baseline") {
    SplitMix64 rng(7);
    Tensor x = random_tensor({2, 6, 6}, rng);
    OffsetHead head = make_offset_head(2, 3, 3, 1, 1);
    Tensor off = offset_field(head, x);
    for (double v : off.data()) CHECK(v == 0.0);

    ConvKernel k = random_kernel(2, 2, 3, 1, 1, rng);
    Tensor a = deform_conv2d(x, k, off);
    Tensor b = conv2d(x, k);
    CHECK(a.data() == b.data());
}

TEST_CASE("one training step moves offsets away from zero") {
    SplitMix64 rng(8);
    Tensor x = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
    ConvKernel k = random_kernel(1, 1, 3, 1, 1, rng);
    OffsetHead head = make_offset_head(1, 3, 3, 1, 1);
    SgdOptimizer opt({head.conv.w, head.conv.b, k.w, k.b}, 0.0);

    opt.zero_grad();
    Tensor off = offset_field(head, x);
    Tensor y = deform_conv2d(x, k, off);
    Tensor target = random_tensor({1, 6, 6}, rng, 0.0, 1.0);
    backward(smooth_l1(y, target, 1.0));
    opt.step(0.5);

    Tensor off2 = offset_field(head, x);
    bool moved = false;
    for (double v : off2.data())
        if (v != 0.0) moved = true;
    CHECK(moved);
}
