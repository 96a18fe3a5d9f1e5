#include "saldet/geometry.hpp"
#include "saldet/rng.hpp"
#include "saldet/scalar.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace saldet;

namespace {

// Area oracle: fraction of sample-cell centers inside the region, scanned over
// a padded domain covering both boxes. Independent of the analytic formulas.
template <class Pred>
double raster_area(Pred inside, double x0, double y0, double x1, double y1, int n) {
    double w = x1 - x0, h = y1 - y0;
    long long hits = 0;
    for (int i = 0; i < n; ++i) {
        double y = y0 + (i + 0.5) / n * h;
        for (int j = 0; j < n; ++j) {
            double x = x0 + (j + 0.5) / n * w;
            if (inside(x, y)) ++hits;
        }
    }
    return static_cast<double>(hits) / (static_cast<double>(n) * n) * w * h;
}

struct RasterScores {
    double iou;
    double giou;
};

RasterScores raster_scores(const BoxXYXY& a, const BoxXYXY& b, int n = 1200) {
    double x0 = std::min(a.x0, b.x0) - 0.05, x1 = std::max(a.x1, b.x1) + 0.05;
    double y0 = std::min(a.y0, b.y0) - 0.05, y1 = std::max(a.y1, b.y1) + 0.05;
    auto in = [](const BoxXYXY& bx, double x, double y) {
        return x > bx.x0 && x < bx.x1 && y > bx.y0 && y < bx.y1;
    };
    double inter = raster_area([&](double x, double y) { return in(a, x, y) && in(b, x, y); }, x0, y0, x1, y1, n);
    double uni = raster_area([&](double x, double y) { return in(a, x, y) || in(b, x, y); }, x0, y0, x1, y1, n);
    double ew = std::max(a.x1, b.x1) - std::min(a.x0, b.x0);
    double eh = std::max(a.y1, b.y1) - std::min(a.y0, b.y0);
    double enc = ew * eh;
    double iou = uni <= 0 ? 0 : inter / uni;
    return {iou, iou - (enc - uni) / enc};
}

BoxXYXY random_box(Rng& rng) {
    double xa = rng.uniform(), xb = rng.uniform(), ya = rng.uniform(), yb = rng.uniform();
    return {std::min(xa, xb), std::min(ya, yb), std::max(xa, xb), std::max(ya, yb)};
}

} // namespace

TEST_CASE("box from point and side distances") {
    BoxXYXY b = box_from_point_sides({0.4, 0.6}, {0.1, 0.2, 0.3, 0.05});
    CHECK(b.x0 == Catch::Approx(0.3));
    CHECK(b.y0 == Catch::Approx(0.4));
    CHECK(b.x1 == Catch::Approx(0.7));
    CHECK(b.y1 == Catch::Approx(0.65));

    SideDistances s = sides_from_point_box({0.4, 0.6}, b);
    CHECK(s.left == Catch::Approx(0.1));
    CHECK(s.top == Catch::Approx(0.2));
    CHECK(s.right == Catch::Approx(0.3));
    CHECK(s.bottom == Catch::Approx(0.05));
}

TEST_CASE("point and sides round trip randomly") {
    Rng rng(7001);
    for (int i = 0; i < 200; ++i) {
        Point2 p{rng.uniform(), rng.uniform()};
        SideDistances s{rng.uniform(0, 0.5), rng.uniform(0, 0.5), rng.uniform(0, 0.5), rng.uniform(0, 0.5)};
        BoxXYXY b = box_from_point_sides(p, s);
        REQUIRE(b.valid());
        SideDistances r = sides_from_point_box(p, b);
        for (int c = 0; c < 4; ++c) REQUIRE(r[c] == Catch::Approx(s[c]).margin(1e-12));
        REQUIRE(box_contains(b, p));
    }
}

TEST_CASE("iou pinned values") {
    CHECK(box_iou({0, 0, 1, 1}, {0.5, 0, 1.5, 1}) == Catch::Approx(1.0 / 3.0));
    CHECK(box_iou({0, 0, 1, 1}, {0, 0, 1, 1}) == Catch::Approx(1.0));
    CHECK(box_iou({0, 0, 1, 1}, {2, 2, 3, 3}) == Catch::Approx(0.0));
    // quarter overlap
    CHECK(box_iou({0, 0, 2, 2}, {1, 1, 3, 3}) == Catch::Approx(1.0 / 7.0));
}

TEST_CASE("giou pinned values") {
    CHECK(box_giou({0, 0, 1, 1}, {0, 0, 1, 1}) == Catch::Approx(1.0));
    // corner-touching diagonal pair: iou 0, union 2, enclosure 4
    CHECK(box_giou({0, 0, 1, 1}, {1, 1, 2, 2}) == Catch::Approx(-0.5));
    // disjoint side by side with a gap: iou 0, union 2, enclosure 3
    CHECK(box_giou({0, 0, 1, 1}, {2, 0, 3, 1}) == Catch::Approx(-1.0 / 3.0));
    // far apart: approaches -1
    CHECK(box_giou({0, 0, 0.1, 0.1}, {9.9, 9.9, 10, 10}) < -0.97);
}

TEST_CASE("iou and giou agree with rasterization oracle") {
    Rng rng(7002);
    for (int i = 0; i < 25; ++i) {
        BoxXYXY a = random_box(rng);
        BoxXYXY b = random_box(rng);
        if (a.area() < 1e-3 || b.area() < 1e-3) continue;
        RasterScores o = raster_scores(a, b);
        REQUIRE(box_iou(a, b) == Catch::Approx(o.iou).margin(6e-3));
        REQUIRE(box_giou(a, b) == Catch::Approx(o.giou).margin(6e-3));
    }
}

TEST_CASE("iou and giou invariants") {
    Rng rng(7003);
    for (int i = 0; i < 2000; ++i) {
        BoxXYXY a = random_box(rng);
        BoxXYXY b = random_box(rng);
        double iou = box_iou(a, b);
        double giou = box_giou(a, b);
        REQUIRE(iou >= 0.0);
        REQUIRE(iou <= 1.0 + 1e-12);
        REQUIRE(giou <= iou + 1e-12);
        REQUIRE(giou >= -1.0 - 1e-12);
        // symmetry is exact: the formulas use only min/max over the pair
        REQUIRE(box_iou(b, a) == iou);
        REQUIRE(box_giou(b, a) == giou);
    }
}

TEST_CASE("degenerate boxes are legal") {
    BoxXYXY point{0.5, 0.5, 0.5, 0.5};
    CHECK(box_iou(point, point) == 0.0);
    CHECK(box_giou(point, point) == 0.0);
    CHECK(box_iou(point, {0, 0, 1, 1}) == 0.0);
    // zero-width box inside a unit box: union 1, enclosure 1
    CHECK(box_giou(point, {0, 0, 1, 1}) == Catch::Approx(0.0));
    // separated degenerate box still earns the enclosure penalty
    CHECK(box_giou({2, 2, 2, 2}, {0, 0, 1, 1}) == Catch::Approx(0.0 - (4.0 - 1.0) / 4.0));
}

TEST_CASE("invalid boxes are rejected") {
    CHECK_THROWS_AS(box_iou({1, 0, 0, 1}, {0, 0, 1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(box_giou({0, 1, 1, 0}, {0, 0, 1, 1}), std::invalid_argument);
}

TEST_CASE("box membership is boundary inclusive") {
    BoxXYXY b{0.25, 0.25, 0.75, 0.75};
    CHECK(box_contains(b, {0.25, 0.25}));
    CHECK(box_contains(b, {0.75, 0.75}));
    CHECK(box_contains(b, {0.5, 0.25}));
    CHECK_FALSE(box_contains(b, {0.75 + 1e-12, 0.5}));
}

TEST_CASE("grid cells are half open") {
    GridCell c{{0.25, 0.5}, 0.125, 0.125};
    CHECK(c.contains({0.25, 0.5}));
    CHECK(c.contains({0.25 + 0.125 - 1e-12, 0.5 + 0.125 - 1e-12}));
    CHECK_FALSE(c.contains({0.375, 0.5625}));
    CHECK_FALSE(c.contains({0.3, 0.625}));
    CHECK_FALSE(c.contains({0.25 - 1e-12, 0.5625}));
}

TEST_CASE("sigmoid utilities") {
    CHECK(sigmoid(0.0) == Catch::Approx(0.5));
    CHECK(inverse_sigmoid(0.5) == Catch::Approx(0.0).margin(1e-15));
    // round trip inside the clamp band
    Rng rng(7004);
    for (int i = 0; i < 500; ++i) {
        double p = rng.uniform(0.002, 0.998);
        REQUIRE(sigmoid(inverse_sigmoid(p)) == Catch::Approx(p).margin(1e-12));
    }
    // clamp band: saturated inputs map to the band edge, not infinity
    CHECK(inverse_sigmoid(0.0) == Catch::Approx(-kLogitClamp));
    CHECK(inverse_sigmoid(1.0) == Catch::Approx(kLogitClamp));
    CHECK(std::isfinite(inverse_sigmoid(-5.0)));
    CHECK_THROWS_AS(inverse_sigmoid(0.5, 0.7), std::invalid_argument);
    // the frozen clamp constant matches its definition
    CHECK(kLogitClamp == Catch::Approx(std::log(0.999 / 0.001)).epsilon(1e-14));
}
