#include <doctest.h>

#include <vector>

#include "refmatch/error.hpp"
#include "refmatch/metrics.hpp"
#include "refmatch/rng.hpp"

using namespace refmatch;

namespace {

BBox random_box(Rng& rng) {
    BBox box;
    box.x = rng.uniform(0.0, 0.8);
    box.y = rng.uniform(0.0, 0.8);
    box.w = rng.uniform(0.02, 1.0 - box.x);
    box.h = rng.uniform(0.02, 1.0 - box.y);
    return box;
}

}  // namespace

TEST_CASE("average_precision trivial cases") {
    std::vector<double> t50{0.5};
    GroundTruthBox gt{{0.1, 0.1, 0.2, 0.2}, "liver"};

    std::vector<Detection> perfect{{gt.box, 0.9, "liver"}};
    CHECK(average_precision(perfect, std::vector<GroundTruthBox>{gt}, t50) ==
          doctest::Approx(1.0));

    std::vector<Detection> none;
    CHECK(average_precision(none, std::vector<GroundTruthBox>{gt}, t50) == doctest::Approx(0.0));
}

TEST_CASE("average_precision: TP ranked above FP keeps full area") {
    // PR points: (R=1, P=1) then (R=1, P=0.5); all-point area = 1.
    GroundTruthBox gt{{0.1, 0.1, 0.2, 0.2}, "liver"};
    std::vector<Detection> preds{{gt.box, 0.9, "liver"},
                                 {{0.6, 0.6, 0.2, 0.2}, 0.5, "liver"}};
    std::vector<double> t50{0.5};
    CHECK(average_precision(preds, std::vector<GroundTruthBox>{gt}, t50) == doctest::Approx(1.0));
    // The reverse ranking halves the interpolated area.
    std::vector<Detection> swapped{{{0.6, 0.6, 0.2, 0.2}, 0.9, "liver"}, {gt.box, 0.5, "liver"}};
    CHECK(average_precision(swapped, std::vector<GroundTruthBox>{gt}, t50) ==
          doctest::Approx(0.5));
}

TEST_CASE("average_precision validates thresholds") {
    GroundTruthBox gt{{0.1, 0.1, 0.2, 0.2}, "a"};
    std::vector<Detection> preds{{gt.box, 1.0, "a"}};
    std::vector<GroundTruthBox> gts{gt};
    CHECK_THROWS_AS(average_precision(preds, gts, std::vector<double>{}), Error);
    CHECK_THROWS_AS(average_precision(preds, gts, std::vector<double>{0.5, 0.5}), Error);
    CHECK_THROWS_AS(average_precision(preds, gts, std::vector<double>{0.0, 0.5}), Error);
}

TEST_CASE("average_precision invariant to confidence rescaling") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<GroundTruthBox> gts;
        int n_gt = rng.uniform_int(1, 4);
        for (int g = 0; g < n_gt; ++g) {
            gts.push_back({random_box(rng), g % 2 == 0 ? "a" : "b"});
        }
        std::vector<Detection> preds;
        int n_pred = rng.uniform_int(1, 6);
        for (int p = 0; p < n_pred; ++p) {
            preds.push_back({random_box(rng), rng.uniform(0.05, 1.0), p % 2 == 0 ? "a" : "b"});
        }
        std::vector<double> thresholds{0.3, 0.5, 0.7};
        double base = average_precision(preds, gts, thresholds);
        double scale = rng.uniform(0.1, 9.0);
        std::vector<Detection> rescaled = preds;
        for (Detection& d : rescaled) d.confidence *= scale;
        CHECK(average_precision(rescaled, gts, thresholds) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("AP non-increasing in the IoU threshold") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<GroundTruthBox> gts;
        for (int g = 0; g < 3; ++g) gts.push_back({random_box(rng), "a"});
        std::vector<Detection> preds;
        for (int p = 0; p < 5; ++p) {
            preds.push_back({random_box(rng), rng.uniform(0.0, 1.0), "a"});
        }
        double previous = 1.0;
        for (double threshold : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            double ap = average_precision(preds, gts, std::vector<double>{threshold});
            CHECK(ap <= previous + 1e-12);
            previous = ap;
        }
    }
}

TEST_CASE("aggregate_report means and accuracy") {
    SampleResult perfect;
    perfect.label = "liver";
    perfect.label_correct = true;
    perfect.dice = 1.0;
    perfect.giou = 1.0;
    perfect.iou = 1.0;
    MetricReport single = aggregate_report(std::vector<SampleResult>{perfect});
    CHECK(single.mean_dice == doctest::Approx(1.0));
    CHECK(single.mean_giou == doctest::Approx(1.0));
    CHECK(single.accuracy == doctest::Approx(1.0));

    SampleResult zero = perfect;
    zero.dice = 0.0;
    zero.label_correct = false;
    MetricReport two = aggregate_report(std::vector<SampleResult>{perfect, zero});
    CHECK(two.mean_dice == doctest::Approx(0.5));
    CHECK(two.accuracy == doctest::Approx(0.5));

    SampleResult half = perfect;
    half.giou = 0.5;
    SampleResult none = perfect;
    none.giou = 0.0;
    MetricReport three = aggregate_report(std::vector<SampleResult>{perfect, half, none});
    CHECK(three.mean_giou == doctest::Approx(0.5));

    CHECK_THROWS_AS(aggregate_report(std::vector<SampleResult>{}), Error);
}

TEST_CASE("aggregate_report pooled giou uses pixel counts") {
    SampleResult a;
    a.label = "x";
    a.giou = 1.0;
    a.mask_intersection = 80;
    a.mask_union = 80;
    SampleResult b;
    b.label = "x";
    b.giou = 0.0;
    b.mask_intersection = 0;
    b.mask_union = 20;
    std::vector<SampleResult> samples{a, b};
    MetricReport per_sample = aggregate_report(samples, GiouAggregation::PerSampleMean);
    CHECK(per_sample.mean_giou == doctest::Approx(0.5));
    MetricReport pooled = aggregate_report(samples, GiouAggregation::DatasetPooled);
    CHECK(pooled.mean_giou == doctest::Approx(0.8));
}

TEST_CASE("report JSON round-trips bit-exactly with fixed key order") {
    MetricReport report;
    report.per_label["liver"] = {0.123456789012345678, 0.5, 1.0 / 3.0, 0.25};
    report.per_label["kidney"] = {0.9, -0.25, 0.75, 1.0};
    report.mean_dice = 0.51172839450617283;
    report.mean_giou = 0.125;
    report.accuracy = 2.0 / 3.0;

    std::string serialized = dump_json(report_to_json(report));
    CHECK(serialized.find("\"per_label\"") < serialized.find("\"mean_dice\""));
    CHECK(serialized.find("\"mean_dice\"") < serialized.find("\"mean_giou\""));
    CHECK(serialized.find("\"mean_giou\"") < serialized.find("\"accuracy\""));

    MetricReport parsed = report_from_json(parse_json(serialized, "test"));
    CHECK(parsed.mean_dice == report.mean_dice);
    CHECK(parsed.accuracy == report.accuracy);
    CHECK(parsed.per_label.at("liver").iou == report.per_label.at("liver").iou);
    CHECK(dump_json(report_to_json(parsed)) == serialized);
}
