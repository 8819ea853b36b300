#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "support/testutil.hpp"
#include "tabledet/geometry.hpp"

using namespace tabledet;
using testutil::random_box;

TEST_CASE("iou basics") {
    BBox a{0, 0, 2, 2};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, BBox{5, 5, 6, 6}) == 0.0);
    CHECK(iou(a, BBox{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("iou is symmetric on random boxes") {
    SplitMix64 rng(31);
    for (int i = 0; i < 200; ++i) {
        BBox a = random_box(rng), b = random_box(rng);
        CHECK(iou(a, b) == iou(b, a));
        CHECK(iou(a, a) == 1.0);
    }
}

TEST_CASE("delta encoding fixed points and hand values") {
    std::array<double, 4> unit{1, 1, 1, 1};
    BBox anchor{0, 0, 2, 2};
    auto zero = encode_deltas(anchor, anchor, unit);
    for (double v : zero) CHECK(v == 0.0);

    auto d = encode_deltas(anchor, BBox{0, 0, 4, 4}, unit);
    CHECK(d[0] == doctest::Approx(0.5));
    CHECK(d[1] == doctest::Approx(0.5));
    CHECK(d[2] == doctest::Approx(std::log(2.0)));
    CHECK(d[3] == doctest::Approx(std::log(2.0)));

    // zero deltas decode to the anchor; dw = ln 2 doubles width on centre
    BBox same = decode_deltas(anchor, {0, 0, 0, 0}, unit);
    CHECK(same.x1 == doctest::Approx(0.0));
    CHECK(same.x2 == doctest::Approx(2.0));
    BBox wide = decode_deltas(anchor, {0, 0, std::log(2.0), 0}, unit);
    CHECK(wide.cx() == doctest::Approx(anchor.cx()));
    CHECK(wide.width() == doctest::Approx(4.0));
    CHECK(wide.height() == doctest::Approx(2.0));
}

TEST_CASE("encode/decode are exact inverses on 100 random pairs") {
    SplitMix64 rng(32);
    std::array<double, 4> stds{0.1, 0.1, 0.2, 0.2};
    for (int i = 0; i < 100; ++i) {
        BBox anchor = random_box(rng);
        BBox target = random_box(rng);
        BBox back = decode_deltas(anchor, encode_deltas(anchor, target, stds), stds);
        CHECK(std::fabs(back.x1 - target.x1) < 1e-9);
        CHECK(std::fabs(back.y1 - target.y1) < 1e-9);
        CHECK(std::fabs(back.x2 - target.x2) < 1e-9);
        CHECK(std::fabs(back.y2 - target.y2) < 1e-9);
    }
}

TEST_CASE("decode clips and flags degenerate boxes") {
    BBox anchor{-4, -4, -1, -1};
    BBox clipped = decode_deltas(anchor, {0, 0, 0, 0}, {1, 1, 1, 1}, ClipRect{10, 10});
    CHECK_FALSE(clipped.valid());  // fully outside collapses to a zero-area box

    BBox inside = decode_deltas(BBox{2, 2, 6, 6}, {0, 0, 0, 0}, {1, 1, 1, 1}, ClipRect{10, 10});
    CHECK(inside.valid());
}

TEST_CASE("nms keeps the right winners") {
    std::vector<Detection> dup = {{{0, 0, 2, 2}, 0.9, 1, -1}, {{0, 0, 2, 2}, 0.8, 1, -1}};
    auto kept = nms(dup, 0.5);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);

    std::vector<Detection> disjoint = {{{0, 0, 1, 1}, 0.5, 1, -1}, {{5, 5, 6, 6}, 0.4, 1, -1}};
    CHECK(nms(disjoint, 0.5).size() == 2);

    CHECK_THROWS_AS(nms(dup, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(nms(dup, 1.0), std::invalid_argument);
}

TEST_CASE("nms equals the brute-force reference on random instances") {
    SplitMix64 rng(33);
    for (int inst = 0; inst < 250; ++inst) {
        int n = rng.range(0, 20);
        std::vector<Detection> dets;
        for (int i = 0; i < n; ++i)
            dets.push_back({random_box(rng, 6.0), rng.uniform(), 1, -1});
        double thr = rng.uniform(0.2, 0.8);
        auto got = nms(dets, thr);
        auto want = testutil::reference_nms(dets, thr);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].score == want[i].score);
            CHECK(got[i].box.x1 == want[i].box.x1);
        }
        // kept boxes are a subset with pairwise IoU <= thr
        for (size_t i = 0; i < got.size(); ++i)
            for (size_t j = i + 1; j < got.size(); ++j)
                CHECK(iou(got[i].box, got[j].box) <= thr);
    }
}

TEST_CASE("assignment thresholds and rescue") {
    std::vector<BBox> gts = {{0, 0, 4, 4}};
    CHECK(assign({{0, 0, 4, 4}}, gts, 0.5)[0] == 0);
    CHECK(assign({{10, 10, 12, 12}}, gts, 0.5)[0] != 0);  // rescue is the only exception

    // IoU exactly in (0.5, 0.6): positive at 0.5, background at 0.6 once a
    // better proposal occupies the rescue slot
    BBox gt{0, 0, 10, 10};
    BBox prop{0, 0, 10, 5.5};  // IoU = 0.55
    std::vector<BBox> props = {prop, {0, 0, 10, 9.8}};
    CHECK(iou(prop, gt) == doctest::Approx(0.55));
    CHECK(assign(props, {gt}, 0.5)[0] == 0);
    CHECK(assign(props, {gt}, 0.6)[0] == kBackground);

    // the cascade relabeling effect: positives shrink as the threshold rises
    SplitMix64 rng(34);
    for (int inst = 0; inst < 50; ++inst) {
        std::vector<BBox> p, g;
        for (int i = 0; i < 12; ++i) p.push_back(random_box(rng, 8.0));
        for (int i = 0; i < 3; ++i) g.push_back(random_box(rng, 8.0));
        int prev = 13;
        for (double thr : {0.3, 0.5, 0.7, 0.9}) {
            auto labels = assign(p, g, thr);
            int pos = 0;
            for (int v : labels) pos += v != kBackground;
            CHECK(pos <= prev);
            prev = pos;
        }
    }
}

TEST_CASE("roi sampling caps positives and is seed-deterministic") {
    std::vector<int> all_pos(10, 0);
    auto s = sample_rois(all_pos, 0.25, 8, 42);
    CHECK(s.size() == 2);  // cap = floor(0.25 * 8), no negatives to fill

    std::vector<int> all_neg(10, kBackground);
    auto sn = sample_rois(all_neg, 0.25, 8, 42);
    CHECK(sn.size() == 8);
    for (int i : sn) CHECK(all_neg[static_cast<size_t>(i)] == kBackground);

    std::vector<int> mixed = {0, kBackground, 1, kBackground, kBackground, 0, kBackground};
    auto a = sample_rois(mixed, 0.5, 4, 7);
    auto b = sample_rois(mixed, 0.5, 4, 7);
    CHECK(a == b);
    auto c = sample_rois(mixed, 0.5, 4, 8);
    CHECK(a.size() == c.size());  // same counts, likely different picks

    // indices are unique and valid
    std::set<int> uniq(a.begin(), a.end());
    CHECK(uniq.size() == a.size());
    for (int i : a) CHECK((i >= 0 && i < static_cast<int>(mixed.size())));
}
