#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "support/testutil.hpp"
#include "tabledet/metrics.hpp"

using namespace tabledet;

namespace {

Detection det(BBox b, double score) { return {b, score, 1, -1}; }

}  // namespace

TEST_CASE("match basics") {
    std::vector<BBox> gts = {{0, 0, 10, 10}, {20, 20, 30, 30}, {40, 40, 50, 50}};
    std::vector<Detection> perfect;
    for (const auto& g : gts) perfect.push_back(det(g, 0.9));
    MatchResult m = match(perfect, gts, 0.5);
    CHECK(m.tp == 3);
    CHECK(m.fp == 0);
    CHECK(m.fn == 0);

    MatchResult none = match({}, gts, 0.5);
    CHECK(none.fn == 3);
    CHECK(none.tp == 0);

    // two predictions on one GT: higher-scored one matches, other is FP
    std::vector<Detection> two = {det({0, 0, 10, 9}, 0.7), det({0, 0, 10, 10}, 0.9)};
    MatchResult t = match(two, {{0, 0, 10, 10}}, 0.5);
    CHECK(t.tp == 1);
    CHECK(t.fp == 1);
    REQUIRE(t.pairs.size() == 1);
    CHECK(t.pairs[0].pred == 1);  // the 0.9-scored prediction wins
}

TEST_CASE("match invariants and oracle equality on random instances") {
    SplitMix64 rng(21);
    for (int inst = 0; inst < 300; ++inst) {
        std::vector<Detection> preds;
        std::vector<BBox> gts;
        int np = rng.range(0, 10), ng = rng.range(0, 10);
        for (int i = 0; i < np; ++i) preds.push_back(det(testutil::random_box(rng, 8.0), rng.uniform()));
        for (int i = 0; i < ng; ++i) gts.push_back(testutil::random_box(rng, 8.0));
        double thr = rng.uniform(0.1, 0.9);
        MatchResult got = match(preds, gts, thr);
        MatchResult want = testutil::reference_match(preds, gts, thr);
        CHECK(got.tp == want.tp);
        CHECK(got.fp == want.fp);
        CHECK(got.fn == want.fn);
        CHECK(got.tp + got.fn == ng);
        CHECK(got.tp + got.fp == np);
        // no GT or prediction matched twice
        std::set<int> seen_g, seen_p;
        for (const auto& pr : got.pairs) {
            CHECK(seen_g.insert(pr.gt).second);
            CHECK(seen_p.insert(pr.pred).second);
        }
    }
}

TEST_CASE("precision/recall/f1 conventions") {
    MatchResult m;
    m.tp = 9;
    m.fp = 1;
    m.fn = 1;
    Prf p = prf1(m);
    CHECK(p.precision == doctest::Approx(0.9));
    CHECK(p.recall == doctest::Approx(0.9));
    CHECK(p.f1 == doctest::Approx(0.9));

    MatchResult empty_preds;
    empty_preds.fn = 5;
    Prf e = prf1(empty_preds);
    CHECK(e.recall == 0.0);
    CHECK(e.precision == 0.0);
    CHECK(e.f1 == 0.0);

    MatchResult half;
    half.tp = 1;
    half.fn = 1;
    Prf h = prf1(half);
    CHECK(h.precision == 1.0);
    CHECK(h.recall == 0.5);
    CHECK(h.f1 == doctest::Approx(2.0 / 3.0));

    MatchResult nothing;  // no GT, no preds
    Prf n = prf1(nothing);
    CHECK(n.recall == 1.0);
    CHECK(n.precision == 1.0);
}

TEST_CASE("average precision hand cases") {
    GtsByImage gts = {{0, {{0, 0, 10, 10}}}};
    PredsByImage perfect = {{0, {det({0, 0, 10, 10}, 0.9)}}};
    CHECK(average_precision(perfect, gts, 0.5) == doctest::Approx(1.0));

    // miss at 0.9, hit at 0.8: envelope precision 1/2 at recall 1 -> AP 0.5
    PredsByImage mixed = {{0, {det({40, 40, 44, 44}, 0.9), det({0, 0, 10, 10}, 0.8)}}};
    CHECK(average_precision(mixed, gts, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("average precision equals the exhaustive curve enumeration") {
    SplitMix64 rng(23);
    for (int inst = 0; inst < 300; ++inst) {
        PredsByImage preds;
        GtsByImage gts;
        int n_img = rng.range(1, 5);
        for (int img = 0; img < n_img; ++img) {
            int ng = rng.range(0, 3);
            for (int i = 0; i < ng; ++i) gts[img].push_back(testutil::random_box(rng, 8.0));
            int np = rng.range(0, 3);
            for (int i = 0; i < np; ++i)
                preds[img].push_back(det(testutil::random_box(rng, 8.0), rng.uniform()));
        }
        double thr = rng.uniform(0.2, 0.8);
        double got = average_precision(preds, gts, thr);
        double want = testutil::reference_ap(preds, gts, thr);
        CHECK(std::fabs(got - want) < 1e-12);
    }
}

TEST_CASE("map over a range") {
    GtsByImage gts = {{0, {{0, 0, 10, 10}}}};
    PredsByImage perfect = {{0, {det({0, 0, 10, 10}, 0.9)}}};
    CHECK(map_over_range(perfect, gts, 0.5, 0.9, 0.1) == doctest::Approx(1.0));

    // a coarser detection: AP is non-increasing in the threshold, so the
    // range mean never exceeds AP at the lowest threshold
    PredsByImage coarse = {{0, {det({0.8, 0.8, 10, 10}, 0.9)}}};
    double lo = average_precision(coarse, gts, 0.5);
    CHECK(map_over_range(coarse, gts, 0.5, 0.9, 0.1) <= lo + 1e-12);

    CHECK_THROWS_AS(map_over_range(perfect, gts, 0.9, 0.5, 0.1), std::invalid_argument);

    // range narrower than the step degenerates to a single threshold
    CHECK(map_over_range(coarse, gts, 0.5, 0.55, 0.1) ==
          doctest::Approx(average_precision(coarse, gts, 0.5)));
}

TEST_CASE("iou sweep shape and monotone f1") {
    GtsByImage gts = {{0, {{0, 0, 10, 10}, {30, 30, 50, 50}}}};
    PredsByImage preds = {{0, {det({0.5, 0.5, 10, 10}, 0.9), det({31, 30, 50, 50}, 0.8)}}};
    MetricReport rep = iou_sweep(preds, gts, {0.5, 0.6, 0.7, 0.8, 0.9}, "synthetic", "test");
    REQUIRE(rep.rows.size() == 5);
    for (size_t i = 1; i < rep.rows.size(); ++i) CHECK(rep.rows[i].f1 <= rep.rows[i - 1].f1 + 1e-12);

    // perfect detector: all-ones everywhere
    PredsByImage perfect = {{0, {det({0, 0, 10, 10}, 1.0), det({30, 30, 50, 50}, 1.0)}}};
    MetricReport prep = iou_sweep(perfect, gts, {0.5, 0.6, 0.7, 0.8, 0.9}, "synthetic", "oracle");
    for (const auto& row : prep.rows) {
        CHECK(row.recall == 1.0);
        CHECK(row.precision == 1.0);
        CHECK(row.f1 == 1.0);
        CHECK(row.ap == 1.0);
    }
}

TEST_CASE("f1 is non-increasing in threshold across random prediction sets") {
    SplitMix64 rng(29);
    for (int inst = 0; inst < 100; ++inst) {
        PredsByImage preds;
        GtsByImage gts;
        int n_img = rng.range(1, 4);
        for (int img = 0; img < n_img; ++img) {
            int ng = rng.range(0, 4);
            for (int i = 0; i < ng; ++i) gts[img].push_back(testutil::random_box(rng, 8.0));
            int np = rng.range(0, 4);
            for (int i = 0; i < np; ++i)
                preds[img].push_back(det(testutil::random_box(rng, 8.0), rng.uniform()));
        }
        MetricReport rep = iou_sweep(preds, gts, {0.5, 0.6, 0.7, 0.8, 0.9}, "rand", "rand");
        for (size_t i = 1; i < rep.rows.size(); ++i)
            CHECK(rep.rows[i].f1 <= rep.rows[i - 1].f1 + 1e-12);
    }
}

TEST_CASE("report files round-trip") {
    MetricReport rep = iou_sweep({{0, {det({0, 0, 4, 4}, 0.5)}}}, {{0, {{0, 0, 4, 4}}}},
                                 {0.5, 0.75}, "ds", "model");
    write_report(rep, "rep_test.txt", "rep_test.json");
    MetricReport back = read_report("rep_test.json");
    CHECK(back.dataset_id == rep.dataset_id);
    REQUIRE(back.rows.size() == rep.rows.size());
    for (size_t i = 0; i < back.rows.size(); ++i) {
        CHECK(back.rows[i].iou_thr == rep.rows[i].iou_thr);
        CHECK(back.rows[i].f1 == rep.rows[i].f1);
        CHECK(back.rows[i].ap == rep.rows[i].ap);
    }
    std::remove("rep_test.txt");
    std::remove("rep_test.json");
}

TEST_CASE("macro aggregation differs from micro when image sizes differ") {
    GtsByImage gts = {{0, {{0, 0, 10, 10}}},
                      {1, {{0, 0, 10, 10}, {20, 20, 30, 30}, {40, 40, 50, 50}}}};
    PredsByImage preds = {{0, {det({0, 0, 10, 10}, 0.9)}}, {1, {det({0, 0, 10, 10}, 0.9)}}};
    Prf micro = dataset_prf1(preds, gts, 0.5, false);
    Prf macro = dataset_prf1(preds, gts, 0.5, true);
    CHECK(micro.recall == doctest::Approx(0.5));          // 2 of 4 boxes
    CHECK(macro.recall == doctest::Approx((1.0 + 1.0 / 3.0) / 2.0));
}
