#pragma once

#include "saldet/geometry.hpp"
#include "saldet/scalar.hpp"
#include "saldet/tensor.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace saldet {

constexpr double kInitialSide = 0.05;

// Near-square factorization of the query count: G x G, or G x (G+1) columns
// by rows for rectangular tilings.
struct GridDims {
    int w = 0;
    int h = 0;
};

inline GridDims grid_dims(int n_queries) {
    if (n_queries <= 0) throw std::invalid_argument("grid_dims: query count must be positive");
    int g = static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_queries))));
    while (g > 0 && g * g > n_queries) --g;
    if (g * g == n_queries) return {g, g};
    if (g * (g + 1) == n_queries) return {g, g + 1};
    throw std::invalid_argument("grid_dims: " + std::to_string(n_queries) +
                                " queries do not tile a near-square grid (need G*G or G*(G+1))");
}

// Per-query decoder state. The geometric fields live in logit space and are
// plain values: realized points and sides feed the next layer as constants
// (the detach boundary), while gradients flow only through the content
// embedding and the per-layer deltas that produced each prediction.
struct QueryState {
    Tensor content;              // [d] embedding snapshot
    Point2 anchor_origin;        // fixed top-left corner of the home cell
    std::array<double, 2> point_logits{0.0, 0.0};
    std::array<double, 4> side_logits{};
    GridCell cell;

    Point2 realized_point() const {
        return {anchor_origin.x + sigmoid(point_logits[0]) * cell.extent_x,
                anchor_origin.y + sigmoid(point_logits[1]) * cell.extent_y};
    }
    SideDistances realized_sides() const {
        return {sigmoid(side_logits[0]), sigmoid(side_logits[1]), sigmoid(side_logits[2]),
                sigmoid(side_logits[3])};
    }
    BoxXYXY realized_box() const { return box_from_point_sides(realized_point(), realized_sides()); }
};

// One decoder layer's outputs for a single query; the box is always the
// corner composition of the reference point and its side distances.
struct LayerPrediction {
    BoxXYXY box;
    std::vector<double> class_logits;
    Point2 reference;
    SideDistances sides;
};

// Tile [0,1]^2 with a near-square grid, one query per cell: anchor at the
// cell's top-left corner, zero point logits so the realized point starts at
// the cell center, and sides starting at a small box.
inline std::vector<QueryState> meshgrid_init(int n_queries, int d) {
    if (d <= 0) throw std::invalid_argument("meshgrid_init: embedding width must be positive");
    GridDims dims = grid_dims(n_queries);
    double ex = 1.0 / dims.w, ey = 1.0 / dims.h;
    double side_logit = inverse_sigmoid(kInitialSide);
    std::vector<QueryState> states;
    states.reserve(static_cast<size_t>(n_queries));
    for (int i = 0; i < dims.h; ++i)
        for (int j = 0; j < dims.w; ++j) {
            QueryState q;
            q.content = Tensor::zeros({d});
            q.anchor_origin = {j * ex, i * ey};
            q.point_logits = {0.0, 0.0};
            q.side_logits = {side_logit, side_logit, side_logit, side_logit};
            q.cell = {q.anchor_origin, ex, ey};
            states.push_back(std::move(q));
        }
    return states;
}

// In-grid movable update: accumulate the predicted offset in logit space and
// clamp to the invertible band, which is exactly the image of running the
// inverse-sigmoid (with its epsilon clamp) on the realized coordinate before
// adding. The realized point therefore stays strictly inside the half-open
// home cell for any finite delta.
inline Point2 movable_update(QueryState& state, const std::array<double, 2>& delta_r_prime) {
    for (int c = 0; c < 2; ++c) {
        if (!std::isfinite(delta_r_prime[static_cast<size_t>(c)]))
            throw std::invalid_argument("movable_update: non-finite delta");
        state.point_logits[static_cast<size_t>(c)] =
            clamp_logit(state.point_logits[static_cast<size_t>(c)] + delta_r_prime[static_cast<size_t>(c)]);
    }
    return state.realized_point();
}

// Cascaded side refinement: same logit-space accumulation for the four side
// distances; realized sides stay in (0,1).
inline SideDistances side_update(QueryState& state, const std::array<double, 4>& delta_s) {
    for (int c = 0; c < 4; ++c) {
        if (!std::isfinite(delta_s[static_cast<size_t>(c)]))
            throw std::invalid_argument("side_update: non-finite delta");
        state.side_logits[static_cast<size_t>(c)] =
            clamp_logit(state.side_logits[static_cast<size_t>(c)] + delta_s[static_cast<size_t>(c)]);
    }
    return state.realized_sides();
}

// Layer boundary: the state handed to the next layer carries realized
// geometry as plain values, so no gradient flows back through the geometric
// path. Values are bitwise identical; only differentiation is cut. The
// content embedding is replaced by the caller with the (still connected)
// updated embedding.
inline QueryState detach_boundary(const QueryState& state) { return state; }

} // namespace saldet
