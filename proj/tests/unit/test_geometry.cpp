#include <doctest.h>

#include <cmath>

#include "refmatch/error.hpp"
#include "refmatch/geometry.hpp"
#include "refmatch/rng.hpp"

using namespace refmatch;

namespace {

// Independent oracle: rasterize both boxes on a fine pixel grid and count.
double iou_by_rasterization(const BBox& a, const BBox& b, int resolution) {
    long inter = 0, uni = 0;
    for (int y = 0; y < resolution; ++y) {
        double cy = (y + 0.5) / resolution;
        for (int x = 0; x < resolution; ++x) {
            double cx = (x + 0.5) / resolution;
            bool in_a = cx >= a.x && cx < a.x2() && cy >= a.y && cy < a.y2();
            bool in_b = cx >= b.x && cx < b.x2() && cy >= b.y && cy < b.y2();
            inter += in_a && in_b;
            uni += in_a || in_b;
        }
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BBox random_box(Rng& rng) {
    BBox box;
    box.x = rng.uniform(0.0, 0.85);
    box.y = rng.uniform(0.0, 0.85);
    box.w = rng.uniform(0.01, 1.0 - box.x);
    box.h = rng.uniform(0.01, 1.0 - box.y);
    return box;
}

}  // namespace

TEST_CASE("box_iou identity and disjoint cases") {
    BBox a{0.1, 0.2, 0.3, 0.3};
    CHECK(box_iou(a, a) == doctest::Approx(1.0));
    CHECK(box_iou({0, 0, 0.1, 0.1}, {0.5, 0.5, 0.1, 0.1}) == 0.0);
}

TEST_CASE("box_iou overlap matches closed form and rasterization oracle") {
    BBox a{0.0, 0.0, 0.2, 0.2};
    BBox b{0.1, 0.1, 0.2, 0.2};
    double expected = 1.0 / 7.0;
    CHECK(box_iou(a, b) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(iou_by_rasterization(a, b, 1000) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("box_giou hand cases") {
    BBox a{0, 0, 0.1, 0.1};
    CHECK(box_giou(a, a) == doctest::Approx(1.0));
    // Disjoint with enclosing (0,0,.3,.3): 0 - (0.09 - 0.02)/0.09 = -7/9.
    CHECK(box_giou(a, {0.2, 0.2, 0.1, 0.1}) == doctest::Approx(-7.0 / 9.0).epsilon(1e-12));
    // Touching boxes: enclosing equals union.
    CHECK(box_giou(a, {0.1, 0.0, 0.1, 0.1}) == doctest::Approx(0.0));
}

TEST_CASE("box_iou properties over random boxes") {
    Rng rng(42);
    for (int i = 0; i < 200; ++i) {
        BBox a = random_box(rng);
        BBox b = random_box(rng);
        a.validate();
        b.validate();
        double iou = box_iou(a, b);
        CHECK(iou == doctest::Approx(box_iou(b, a)));
        CHECK(iou >= 0.0);
        CHECK(iou <= 1.0);
        CHECK(box_iou(a, a) == doctest::Approx(1.0));
        double giou = box_giou(a, b);
        CHECK(giou <= iou + 1e-12);
        CHECK(giou >= -1.0);
    }
}

TEST_CASE("giou equals iou iff enclosing box equals union") {
    // Containment: enclosing box is the outer box, which is also the union.
    BBox outer{0.1, 0.1, 0.5, 0.5};
    BBox inner{0.2, 0.2, 0.1, 0.1};
    CHECK(box_giou(outer, inner) == doctest::Approx(box_iou(outer, inner)));
    // Overlapping but not nested: strict inequality.
    BBox a{0.0, 0.0, 0.2, 0.2};
    BBox b{0.1, 0.1, 0.2, 0.2};
    CHECK(box_giou(a, b) < box_iou(a, b));
}

TEST_CASE("bbox validation rejects bad boxes") {
    CHECK_THROWS_AS(BBox{-0.1, 0, 0.2, 0.2}.validate(), Error);
    CHECK_THROWS_AS(BBox{0, 0, 0.0, 0.2}.validate(), Error);
    CHECK_THROWS_AS(BBox{0.9, 0.9, 0.2, 0.2}.validate(), Error);
    CHECK_NOTHROW(BBox{0.0, 0.0, 1.0, 1.0}.validate());
}

TEST_CASE("mask_dice identity, disjoint and half overlap") {
    Mask a = Mask::zeros(4, 1);
    a.at(0, 0) = 1.0;
    a.at(1, 0) = 1.0;
    Mask b = Mask::zeros(4, 1);
    b.at(1, 0) = 1.0;
    b.at(2, 0) = 1.0;
    CHECK(mask_dice(a, a) == doctest::Approx(1.0).epsilon(1e-7));
    Mask disjoint = Mask::zeros(4, 1);
    disjoint.at(3, 0) = 1.0;
    CHECK(mask_dice(a, disjoint) == doctest::Approx(0.0).epsilon(1e-7));
    // 2-pixel masks overlapping in one pixel: 2*1/(2+2).
    CHECK(mask_dice(a, b) == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(mask_dice(a, b) == doctest::Approx(mask_dice(b, a)));
}

TEST_CASE("mask_dice monotone as overlap pixels are removed") {
    Mask gt = Mask::zeros(8, 1);
    Mask pred = Mask::zeros(8, 1);
    for (int x = 0; x < 6; ++x) {
        gt.at(x, 0) = 1.0;
        pred.at(x, 0) = 1.0;
    }
    double previous = mask_dice(pred, gt);
    for (int x = 5; x >= 0; --x) {
        pred.at(x, 0) = 0.0;
        double current = mask_dice(pred, gt);
        CHECK(current <= previous + 1e-12);
        previous = current;
    }
}

TEST_CASE("mask_bce closed forms") {
    Mask gt = Mask::zeros(2, 2);
    gt.at(0, 0) = 1.0;
    gt.at(1, 1) = 1.0;
    CHECK(mask_bce(gt, gt) < 1e-6);

    Mask half = Mask::zeros(2, 2);
    for (double& v : half.values) v = 0.5;
    CHECK(mask_bce(half, gt) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Mask pred = Mask::zeros(1, 1);
    pred.at(0, 0) = 0.9;
    Mask one = Mask::zeros(1, 1);
    one.at(0, 0) = 1.0;
    CHECK(mask_bce(pred, one) == doctest::Approx(-std::log(0.9)).epsilon(1e-12));
}

TEST_CASE("mask ops reject dimension mismatches") {
    Mask a = Mask::zeros(2, 2);
    Mask b = Mask::zeros(3, 2);
    CHECK_THROWS_AS(mask_dice(a, b), Error);
    CHECK_THROWS_AS(mask_bce(a, b), Error);
    CHECK_THROWS_AS(mask_iou(a, b), Error);
}

TEST_CASE("mask_bounds is the tight pixel box") {
    Mask m = Mask::zeros(10, 10);
    m.at(2, 3) = 1.0;
    m.at(5, 7) = 1.0;
    BBox box = mask_bounds(m);
    CHECK(box.x == doctest::Approx(0.2));
    CHECK(box.y == doctest::Approx(0.3));
    CHECK(box.x2() == doctest::Approx(0.6));
    CHECK(box.y2() == doctest::Approx(0.8));
    CHECK_THROWS_AS(mask_bounds(Mask::zeros(4, 4)), Error);
}
