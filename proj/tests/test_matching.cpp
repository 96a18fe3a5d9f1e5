#include "saldet/gradcheck.hpp"
#include "saldet/matching.hpp"
#include "saldet/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace saldet;

namespace {

// Exhaustive assignment oracle: minimum total cost over all injections of
// columns (gts) into rows (queries). Feasible only for small instances.
double brute_force_min_cost(const Tensor& cost) {
    int n = cost.size(0), m = cost.size(1);
    std::vector<int> rows(static_cast<size_t>(n));
    std::iota(rows.begin(), rows.end(), 0);
    double best = 1e300;
    // permute rows, take the first m as the assignment for gts 0..m-1
    std::sort(rows.begin(), rows.end());
    std::vector<int> pick(static_cast<size_t>(m));
    std::vector<char> used(static_cast<size_t>(n), 0);
    // no branch-and-bound pruning: entries may be negative, so a partial sum
    // above the incumbent says nothing about the completed assignment
    std::function<void(int, double)> rec = [&](int g, double acc) {
        if (g == m) {
            best = std::min(best, acc);
            return;
        }
        for (int q = 0; q < n; ++q)
            if (!used[static_cast<size_t>(q)]) {
                used[static_cast<size_t>(q)] = 1;
                rec(g + 1, acc + cost(q, g));
                used[static_cast<size_t>(q)] = 0;
            }
    };
    rec(0, 0.0);
    return best;
}

Tensor random_cost(Rng& rng, int n, int m, double lo = -10.0, double hi = 10.0) {
    Tensor c({n, m});
    for (std::int64_t i = 0; i < c.numel(); ++i) c[i] = rng.uniform(lo, hi);
    return c;
}

LayerGraph make_layer(const Tensor& boxes, const Tensor& logits, std::vector<Point2> refs) {
    return {leaf(boxes), leaf(logits), std::move(refs)};
}

} // namespace

TEST_CASE("inner cost is a boundary-inclusive step") {
    BoxXYXY box{0.2, 0.2, 0.6, 0.8};
    CHECK(inner_cost(box, {0.4, 0.5}, 9999.0) == 0.0);
    CHECK(inner_cost(box, {0.1, 0.5}, 9999.0) == 9999.0);
    CHECK(inner_cost(box, {0.7, 0.5}, 1e5) == 1e5);
    CHECK(inner_cost(box, {0.2, 0.2}, 9999.0) == 0.0); // corner counts as inside
    CHECK(inner_cost(box, {0.6, 0.5}, 9999.0) == 0.0); // edge counts as inside
    CHECK_THROWS_AS(inner_cost(box, {0.4, 0.5}, 0.0), std::invalid_argument);
}

TEST_CASE("match cost components") {
    Tensor boxes({2, 4}, {0, 0, 1, 1, 0.2, 0.2, 0.6, 0.7});
    Tensor logits({2, 2}, {14.0, -14.0, 14.0, -14.0});
    CostWeights w;

    SECTION("l1 worked example contributes weight times coordinate gap") {
        GtObject gt{{0, 0, 0.9, 1}, 0};
        CostComponents c = match_cost_components(boxes, logits, {0.5, 0.5}, 0, gt, w);
        CHECK(c.l1 == Catch::Approx(0.1).margin(1e-12));
        CHECK(w.l1 * c.l1 == Catch::Approx(0.5).margin(1e-12));
        CHECK(c.inner == 0.0);
    }
    SECTION("perfect prediction approaches minus the giou weight") {
        GtObject gt{{0.2, 0.2, 0.6, 0.7}, 0};
        CostComponents c = match_cost_components(boxes, logits, {0.4, 0.5}, 1, gt, w);
        CHECK(c.cls == Catch::Approx(0.0).margin(1e-9));
        CHECK(c.l1 == Catch::Approx(0.0).margin(1e-12));
        CHECK(c.giou == Catch::Approx(1.0).margin(1e-12));
        CHECK(c.total == Catch::Approx(-w.giou).margin(1e-8));
    }
    SECTION("an inner violation dominates every compliant pair") {
        Rng rng(11001);
        double worst_compliant = -1e300, best_violating = 1e300;
        for (int i = 0; i < 500; ++i) {
            Tensor b({1, 4});
            double xa = rng.uniform(), xb = rng.uniform(), ya = rng.uniform(), yb = rng.uniform();
            b(0, 0) = std::min(xa, xb);
            b(0, 1) = std::min(ya, yb);
            b(0, 2) = std::max(xa, xb);
            b(0, 3) = std::max(ya, yb);
            Tensor lg({1, 2}, {rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0)});
            GtObject gt{{0.3, 0.3, 0.7, 0.7}, rng.uniform_int(0, 1)};
            CostComponents inside = match_cost_components(b, lg, {0.5, 0.5}, 0, gt, w);
            CostComponents outside = match_cost_components(b, lg, {0.1, 0.9}, 0, gt, w);
            worst_compliant = std::max(worst_compliant, inside.total);
            best_violating = std::min(best_violating, outside.total);
        }
        REQUIRE(best_violating > worst_compliant + 9000.0);
    }
}

TEST_CASE("hungarian pinned instances") {
    SECTION("diagonal zeros pick the identity") {
        Tensor c = Tensor::ones({4, 4});
        for (int i = 0; i < 4; ++i) c(i, i) = 0.0;
        MatchAssignment a = hungarian(c);
        for (int g = 0; g < 4; ++g) REQUIRE(a.gt_to_query[static_cast<size_t>(g)] == g);
        REQUIRE(a.total_cost == 0.0);
    }
    SECTION("two by two") {
        Tensor c({2, 2}, {1, 2, 2, 1});
        MatchAssignment a = hungarian(c);
        REQUIRE(a.gt_to_query == std::vector<int>{0, 1});
        REQUIRE(a.total_cost == Catch::Approx(2.0));
    }
    SECTION("more objects than queries is infeasible") {
        CHECK_THROWS_AS(hungarian(Tensor({2, 3})), std::invalid_argument);
    }
    SECTION("ties resolve to the lowest query index") {
        MatchAssignment a = hungarian(Tensor::zeros({3, 2}));
        REQUIRE(a.gt_to_query == std::vector<int>{0, 1});
        Tensor c({3, 2}, {3, 1, 3, 1, 3, 1});
        MatchAssignment b = hungarian(c);
        REQUIRE(b.gt_to_query == std::vector<int>{0, 1});
    }
}

TEST_CASE("hungarian matches brute force on random instances") {
    Rng rng(11002);
    for (int trial = 0; trial < 1000; ++trial) {
        int n = rng.uniform_int(1, 7);
        int m = rng.uniform_int(1, n);
        Tensor c = random_cost(rng, n, m);
        MatchAssignment a = hungarian(c);
        // validity: one query per gt, no reuse
        std::vector<char> seen(static_cast<size_t>(n), 0);
        for (int g = 0; g < m; ++g) {
            int q = a.gt_to_query[static_cast<size_t>(g)];
            REQUIRE(q >= 0);
            REQUIRE(q < n);
            REQUIRE_FALSE(seen[static_cast<size_t>(q)]);
            seen[static_cast<size_t>(q)] = 1;
        }
        REQUIRE(a.total_cost == Catch::Approx(brute_force_min_cost(c)).margin(1e-9));
    }
}

TEST_CASE("hungarian matches brute force on six by four instances") {
    Rng rng(11003);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor c = random_cost(rng, 6, 4);
        REQUIRE(hungarian(c).total_cost == Catch::Approx(brute_force_min_cost(c)).margin(1e-9));
    }
}

TEST_CASE("hungarian is consistent under query permutation") {
    Rng rng(11004);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 8, m = 3;
        Tensor c = random_cost(rng, n, m);
        MatchAssignment base = hungarian(c);

        std::vector<int> perm(static_cast<size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = n - 1; i > 0; --i) std::swap(perm[static_cast<size_t>(i)], perm[rng.uniform_index(static_cast<std::uint64_t>(i + 1))]);

        Tensor shuffled({n, m});
        for (int j = 0; j < n; ++j)
            for (int g = 0; g < m; ++g) shuffled(j, g) = c(perm[static_cast<size_t>(j)], g);
        MatchAssignment mapped = hungarian(shuffled);
        REQUIRE(mapped.total_cost == Catch::Approx(base.total_cost).margin(1e-9));
        // continuous random costs make the optimum unique, so the permuted
        // assignment must select the same underlying queries
        for (int g = 0; g < m; ++g)
            REQUIRE(perm[static_cast<size_t>(mapped.gt_to_query[static_cast<size_t>(g)])] ==
                    base.gt_to_query[static_cast<size_t>(g)]);
    }
}

TEST_CASE("focal loss values") {
    SECTION("perfect confidence costs nothing") {
        Var logits = leaf(Tensor({2, 2}, {40.0, -40.0, -40.0, 40.0}));
        Tensor targets({2, 2}, {1, 0, 0, 1});
        REQUIRE(focal_loss(logits, targets)->value.item() == Catch::Approx(0.0).margin(1e-10));
    }
    SECTION("pinned half-probability positive") {
        Var logits = leaf(Tensor({1, 1}, {0.0}));
        Tensor targets({1, 1}, {1.0});
        // 0.25 * 0.5^2 * ln 2
        REQUIRE(focal_loss(logits, targets)->value.item() ==
                Catch::Approx(0.25 * 0.25 * 0.6931471805599453).margin(1e-12));
    }
    SECTION("mean is over queries") {
        Var one = leaf(Tensor({1, 1}, {0.0}));
        Var two = leaf(Tensor({2, 1}, {0.0, -50.0}));
        Tensor t1({1, 1}, {1.0});
        Tensor t2({2, 1}, {1.0, 0.0});
        double a = focal_loss(one, t1)->value.item();
        double b = focal_loss(two, t2)->value.item();
        REQUIRE(b == Catch::Approx(a / 2.0).margin(1e-10));
    }
    SECTION("shape mismatch throws") {
        CHECK_THROWS_AS(focal_loss(leaf(Tensor({2, 2})), Tensor({2, 3})), std::invalid_argument);
    }
    SECTION("gradient matches finite differences") {
        Rng rng(11005);
        Tensor lv({4, 3});
        for (std::int64_t i = 0; i < lv.numel(); ++i) lv[i] = rng.uniform(-3.0, 3.0);
        Var logits = leaf(lv);
        Tensor targets({4, 3});
        for (int q = 0; q < 4; ++q) targets(q, rng.uniform_int(0, 2)) = 1.0;
        GradCheckResult res = grad_check([&] { return focal_loss(logits, targets); }, {{"logits", logits}});
        REQUIRE(res.finite);
        REQUIRE(res.max_rel_err <= 1e-6);
    }
}

TEST_CASE("graph giou agrees with the analytic value") {
    Rng rng(11006);
    for (int trial = 0; trial < 300; ++trial) {
        auto rb = [&] {
            double xa = rng.uniform(), xb = rng.uniform(), ya = rng.uniform(), yb = rng.uniform();
            return BoxXYXY{std::min(xa, xb), std::min(ya, yb), std::max(xa, xb) + 0.05, std::max(ya, yb) + 0.05};
        };
        BoxXYXY a = rb(), b = rb();
        Var pa = leaf(Tensor({1, 4}, {a.x0, a.y0, a.x1, a.y1}));
        Var pb = constant(Tensor({1, 4}, {b.x0, b.y0, b.x1, b.y1}));
        Var g = detail::giou_rows(pa, pb);
        REQUIRE(g->value.item() == Catch::Approx(box_giou(a, b)).margin(1e-12));
    }
}

TEST_CASE("set criterion with no objects reduces to background classification") {
    Rng rng(11007);
    Tensor boxes({4, 4});
    for (int q = 0; q < 4; ++q) {
        boxes(q, 0) = 0.1;
        boxes(q, 1) = 0.1;
        boxes(q, 2) = 0.4;
        boxes(q, 3) = 0.4;
    }
    Tensor logits({4, 2});
    for (std::int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-2.0, 2.0);
    std::vector<LayerGraph> layers = {make_layer(boxes, logits, std::vector<Point2>(4, {0.2, 0.2}))};
    CriterionResult res = set_criterion(layers, {});
    REQUIRE(res.breakdown.layers.size() == 1);
    CHECK(res.breakdown.l1 == 0.0);
    CHECK(res.breakdown.giou == 0.0);
    CHECK(res.breakdown.cls ==
          Catch::Approx(focal_loss(layers[0].class_logits, Tensor({4, 2}))->value.item()).margin(1e-12));
    CHECK(res.breakdown.total == Catch::Approx(res.breakdown.cls).margin(1e-12));
}

TEST_CASE("duplicating a layer doubles the total") {
    Rng rng(11008);
    Tensor boxes({6, 4});
    for (int q = 0; q < 6; ++q) {
        double x = rng.uniform(0.0, 0.5), y = rng.uniform(0.0, 0.5);
        boxes(q, 0) = x;
        boxes(q, 1) = y;
        boxes(q, 2) = x + rng.uniform(0.1, 0.4);
        boxes(q, 3) = y + rng.uniform(0.1, 0.4);
    }
    Tensor logits({6, 2});
    for (std::int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-2.0, 2.0);
    std::vector<Point2> refs;
    for (int q = 0; q < 6; ++q) refs.push_back({rng.uniform(), rng.uniform()});
    std::vector<GtObject> gts = {{{0.1, 0.1, 0.5, 0.6}, 0}, {{0.4, 0.3, 0.9, 0.8}, 1}};

    std::vector<LayerGraph> single = {make_layer(boxes, logits, refs)};
    std::vector<LayerGraph> doubled = {single[0], single[0]};
    double one = set_criterion(single, gts).breakdown.total;
    double two = set_criterion(doubled, gts).breakdown.total;
    REQUIRE(two == Catch::Approx(2.0 * one).margin(1e-9));
}

TEST_CASE("breakdown total applies the configured layer weights") {
    Rng rng(11009);
    Tensor boxes({5, 4});
    for (int q = 0; q < 5; ++q) {
        double x = rng.uniform(0.0, 0.5), y = rng.uniform(0.0, 0.5);
        boxes(q, 0) = x;
        boxes(q, 1) = y;
        boxes(q, 2) = x + 0.3;
        boxes(q, 3) = y + 0.3;
    }
    Tensor logits({5, 3});
    for (std::int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-1.0, 1.0);
    std::vector<Point2> refs(5, Point2{0.3, 0.3});
    std::vector<GtObject> gts = {{{0.2, 0.2, 0.6, 0.6}, 1}};
    std::vector<LayerGraph> layers = {make_layer(boxes, logits, refs), make_layer(boxes, logits, refs)};
    CriterionResult res = set_criterion(layers, gts);
    double manual = 0;
    for (const LayerLossTerms& t : res.breakdown.layers) manual += 1.0 * t.cls + 5.0 * t.l1 + 2.0 * t.giou;
    REQUIRE(res.breakdown.total == Catch::Approx(manual).margin(1e-12));
    REQUIRE(res.assignments.size() == 2);
}

TEST_CASE("inner cost flips an otherwise better assignment") {
    // q0: exact box, confident class, reference OUTSIDE the gt
    // q1: sloppy box, lukewarm class, reference INSIDE the gt
    Tensor boxes({2, 4}, {0.3, 0.3, 0.7, 0.7, 0.25, 0.2, 0.8, 0.75});
    Tensor logits({2, 2}, {9.0, -9.0, 0.0, 0.0});
    std::vector<Point2> refs = {{0.1, 0.1}, {0.5, 0.5}};
    std::vector<GtObject> gts = {{{0.3, 0.3, 0.7, 0.7}, 0}};
    LayerGraph layer = make_layer(boxes, logits, refs);

    CostWeights with_inner;
    CostWeights without_inner;
    without_inner.inner = 1e-9;
    MatchAssignment a = hungarian(match_cost_matrix(layer, gts, with_inner));
    MatchAssignment b = hungarian(match_cost_matrix(layer, gts, without_inner));
    REQUIRE(a.gt_to_query[0] == 1);
    REQUIRE(b.gt_to_query[0] == 0);
}

TEST_CASE("inner guarantee on constructed scenes") {
    Rng rng(11010);
    for (int scene = 0; scene < 200; ++scene) {
        // reference points on a 3x3 grid
        std::vector<Point2> refs;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) refs.push_back({(j + 0.5) / 3.0, (i + 0.5) / 3.0});
        int n = static_cast<int>(refs.size());
        int m = rng.uniform_int(1, 4);
        // each gt box is drawn to contain a distinct grid point
        std::vector<int> cells(9);
        std::iota(cells.begin(), cells.end(), 0);
        for (int i = 8; i > 0; --i) std::swap(cells[static_cast<size_t>(i)], cells[rng.uniform_index(static_cast<std::uint64_t>(i + 1))]);
        std::vector<GtObject> gts;
        for (int g = 0; g < m; ++g) {
            Point2 c = refs[static_cast<size_t>(cells[static_cast<size_t>(g)])];
            BoxXYXY box{rng.uniform(0.0, c.x), rng.uniform(0.0, c.y), rng.uniform(c.x, 1.0), rng.uniform(c.y, 1.0)};
            gts.push_back({box, rng.uniform_int(0, 1)});
        }
        Tensor boxes({n, 4});
        Tensor logits({n, 2});
        for (int q = 0; q < n; ++q) {
            double xa = rng.uniform(), xb = rng.uniform(), ya = rng.uniform(), yb = rng.uniform();
            boxes(q, 0) = std::min(xa, xb);
            boxes(q, 1) = std::min(ya, yb);
            boxes(q, 2) = std::max(xa, xb);
            boxes(q, 3) = std::max(ya, yb);
            logits(q, 0) = rng.uniform(-5.0, 5.0);
            logits(q, 1) = rng.uniform(-5.0, 5.0);
        }
        LayerGraph layer = make_layer(boxes, logits, refs);
        MatchAssignment a = hungarian(match_cost_matrix(layer, gts, CostWeights{}));
        for (int g = 0; g < m; ++g) {
            INFO("scene " << scene << " gt " << g);
            REQUIRE(box_contains(gts[static_cast<size_t>(g)].box,
                                 refs[static_cast<size_t>(a.gt_to_query[static_cast<size_t>(g)])]));
        }
    }
}

TEST_CASE("criterion gradients match finite differences with frozen matching") {
    Rng rng(11011);
    Tensor bv({4, 4});
    for (int q = 0; q < 4; ++q) {
        double x = rng.uniform(0.05, 0.4), y = rng.uniform(0.05, 0.4);
        bv(q, 0) = x;
        bv(q, 1) = y;
        bv(q, 2) = x + rng.uniform(0.2, 0.5);
        bv(q, 3) = y + rng.uniform(0.2, 0.5);
    }
    Tensor lv({4, 2});
    for (std::int64_t i = 0; i < lv.numel(); ++i) lv[i] = rng.uniform(-2.0, 2.0);
    Var boxes = leaf(bv);
    Var logits = leaf(lv);
    std::vector<Point2> refs = {{0.2, 0.2}, {0.6, 0.3}, {0.3, 0.7}, {0.7, 0.7}};
    std::vector<GtObject> gts = {{{0.1, 0.1, 0.5, 0.5}, 0}, {{0.45, 0.5, 0.95, 0.95}, 1}};

    std::vector<LayerGraph> layers = {{boxes, logits, refs}, {boxes, logits, refs}};
    std::vector<MatchAssignment> frozen = set_criterion(layers, gts).assignments;

    GradCheckResult res = grad_check(
        [&] { return set_criterion(layers, gts, CostWeights{}, LossWeights{}, &frozen).loss; },
        {{"boxes", boxes}, {"logits", logits}});
    INFO("worst " << res.worst.param << "[" << res.worst.index << "] analytic " << res.worst.analytic << " numeric "
                  << res.worst.numeric);
    REQUIRE(res.finite);
    REQUIRE(res.max_rel_err <= 1e-6);
}

TEST_CASE("unmatched queries receive no box gradient") {
    Tensor bv({3, 4}, {0.1, 0.1, 0.4, 0.4, 0.5, 0.5, 0.9, 0.9, 0.15, 0.6, 0.45, 0.95});
    Tensor lv({3, 2}, {1.0, -1.0, -1.0, 1.0, 0.5, 0.5});
    Var boxes = leaf(bv);
    Var logits = leaf(lv);
    std::vector<Point2> refs = {{0.25, 0.25}, {0.7, 0.7}, {0.3, 0.8}};
    std::vector<GtObject> gts = {{{0.1, 0.1, 0.45, 0.45}, 0}};
    std::vector<LayerGraph> layers = {{boxes, logits, refs}};
    CriterionResult res = set_criterion(layers, gts);
    backward(res.loss);
    int matched = res.assignments[0].gt_to_query[0];
    for (int q = 0; q < 3; ++q)
        for (int c = 0; c < 4; ++c) {
            if (q == matched)
                REQUIRE(boxes->ensure_grad()(q, c) != 0.0);
            else
                REQUIRE(boxes->ensure_grad()(q, c) == 0.0);
        }
    // every query's logits still receive classification gradient
    for (int q = 0; q < 3; ++q)
        REQUIRE((logits->ensure_grad()(q, 0) != 0.0 || logits->ensure_grad()(q, 1) != 0.0));
}

TEST_CASE("criterion validates inputs") {
    Tensor boxes({2, 4}, {0.1, 0.1, 0.4, 0.4, 0.5, 0.5, 0.9, 0.9});
    Tensor logits({2, 2});
    std::vector<LayerGraph> layers = {make_layer(boxes, logits, {{0.2, 0.2}, {0.7, 0.7}})};
    CHECK_THROWS_AS(set_criterion(layers, {{{0.1, 0.1, 0.4, 0.4}, 5}}), std::invalid_argument);
    CHECK_THROWS_AS(set_criterion(layers, {{{0.5, 0.5, 0.2, 0.2}, 0}}), std::invalid_argument);
    CHECK_THROWS_AS(set_criterion({}, {}), std::invalid_argument);
}
