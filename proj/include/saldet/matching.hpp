#pragma once

#include "saldet/autodiff.hpp"
#include "saldet/geometry.hpp"
#include "saldet/scalar.hpp"
#include "saldet/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace saldet {

struct GtObject {
    BoxXYXY box;
    int cls = 0;
};

// One decoder layer's outputs as the criterion consumes them: differentiable
// boxes/logits plus the (detached) reference points used for the inner cost.
struct LayerGraph {
    Var boxes;        // [N, 4] corner form
    Var class_logits; // [N, C]
    std::vector<Point2> refs;
};

struct CostWeights {
    double cls = 2.0;
    double l1 = 5.0;
    double giou = 2.0;
    double inner = 9999.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
};

struct LossWeights {
    double cls = 1.0;
    double l1 = 5.0;
    double giou = 2.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
};

// Step penalty: free when the reference point lies inside the ground-truth
// box (boundary inclusive), k otherwise.
inline double inner_cost(const BoxXYXY& gt_box, const Point2& ref, double k) {
    if (!(k > 0)) throw std::invalid_argument("inner_cost: penalty must be positive");
    return box_contains(gt_box, ref) ? 0.0 : k;
}

struct CostComponents {
    double cls = 0.0;   // positive-class focal term at the target class
    double l1 = 0.0;    // corner-coordinate L1
    double giou = 0.0;  // giou value (enters the total negated)
    double inner = 0.0; // 0 or k
    double total = 0.0;
};

namespace detail {

// Positive-class focal term at the target class: alpha (1-p)^gamma (-log p),
// evaluated with stable log-sigmoid. Zero floor at perfect confidence, grows
// as confidence drops, so matching prefers confidently correct queries.
inline double focal_cls_cost(double logit, double alpha, double gamma) {
    double p = sigmoid(logit);
    return alpha * std::pow(1.0 - p, gamma) * softplus(-logit);
}

} // namespace detail

inline CostComponents match_cost_components(const Tensor& boxes, const Tensor& logits, const Point2& ref,
                                            int query, const GtObject& gt, const CostWeights& w) {
    CostComponents c;
    c.cls = detail::focal_cls_cost(logits(query, gt.cls), w.focal_alpha, w.focal_gamma);
    BoxXYXY pb{boxes(query, 0), boxes(query, 1), boxes(query, 2), boxes(query, 3)};
    c.l1 = std::fabs(pb.x0 - gt.box.x0) + std::fabs(pb.y0 - gt.box.y0) + std::fabs(pb.x1 - gt.box.x1) +
           std::fabs(pb.y1 - gt.box.y1);
    c.giou = box_giou(pb, gt.box);
    c.inner = inner_cost(gt.box, ref, w.inner);
    c.total = w.cls * c.cls + w.l1 * c.l1 - w.giou * c.giou + c.inner;
    return c;
}

// [N, M] cost matrix; rows are queries, columns ground-truth objects.
inline Tensor match_cost_matrix(const LayerGraph& layer, const std::vector<GtObject>& gts, const CostWeights& w) {
    int n = layer.boxes->value.size(0);
    int m = static_cast<int>(gts.size());
    if (static_cast<int>(layer.refs.size()) != n)
        throw std::invalid_argument("match_cost_matrix: refs size " + std::to_string(layer.refs.size()) +
                                    " does not match query count " + std::to_string(n));
    Tensor cost({n, m});
    for (int q = 0; q < n; ++q)
        for (int g = 0; g < m; ++g)
            cost(q, g) = match_cost_components(layer.boxes->value, layer.class_logits->value, layer.refs[q], q,
                                               gts[g], w)
                             .total;
    return cost;
}

struct MatchAssignment {
    std::vector<int> gt_to_query;   // size M; gt i handled by query gt_to_query[i]
    std::vector<int> query_to_gt;   // size N; -1 for background queries
    double total_cost = 0.0;
};

// Exact rectangular assignment (shortest augmenting paths with potentials).
// Cost layout: rows = queries (N), cols = ground truths (M), N >= M. All scans
// walk query indices in ascending order with strict improvement, so equal-cost
// alternatives resolve toward the lowest query index deterministically.
inline MatchAssignment hungarian(const Tensor& cost) {
    if (cost.ndim() != 2)
        throw std::invalid_argument("hungarian: cost matrix must be rank-2, got " + shape_str(cost.shape()));
    int n = cost.size(0), m = cost.size(1);
    if (m > n)
        throw std::invalid_argument("hungarian: infeasible, " + std::to_string(m) + " objects exceed " +
                                    std::to_string(n) + " queries");
    const double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<size_t>(m) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= m; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            int i0 = p[static_cast<size_t>(j0)], j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j)
                if (!used[static_cast<size_t>(j)]) {
                    double red = cost(j - 1, i0 - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                    if (red < minv[static_cast<size_t>(j)]) {
                        minv[static_cast<size_t>(j)] = red;
                        way[static_cast<size_t>(j)] = j0;
                    }
                    if (minv[static_cast<size_t>(j)] < delta) {
                        delta = minv[static_cast<size_t>(j)];
                        j1 = j;
                    }
                }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    MatchAssignment out;
    out.gt_to_query.assign(static_cast<size_t>(m), -1);
    out.query_to_gt.assign(static_cast<size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[static_cast<size_t>(j)] != 0) {
            out.query_to_gt[static_cast<size_t>(j - 1)] = p[static_cast<size_t>(j)] - 1;
            out.gt_to_query[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
        }
    for (int g = 0; g < m; ++g) out.total_cost += cost(out.gt_to_query[static_cast<size_t>(g)], g);
    return out;
}

// Mean-over-queries sigmoid focal loss with {0,1} per-class targets. Stable
// log-probabilities via softplus.
inline Var focal_loss(const Var& logits, const Tensor& targets, double alpha = 0.25, double gamma = 2.0) {
    if (!(logits->value.same_shape(targets)))
        throw std::invalid_argument("focal_loss: logits shape " + shape_str(logits->value.shape()) +
                                    " vs targets " + shape_str(targets.shape()));
    int n = logits->value.size(0);
    Var p = sigmoid(logits);
    Var tgt = constant(targets);
    Tensor inv(targets.shape());
    for (std::int64_t i = 0; i < inv.numel(); ++i) inv[i] = 1.0 - targets[i];
    Var not_tgt = constant(std::move(inv));
    Var pos = mul(tgt, scale(mul(pow_scalar(rsub_scalar(1.0, p), gamma), softplus(neg(logits))), alpha));
    Var negt = mul(not_tgt, scale(mul(pow_scalar(p, gamma), softplus(logits)), 1.0 - alpha));
    return scale(sum(add(pos, negt)), 1.0 / static_cast<double>(n));
}

namespace detail {

// Differentiable GIoU of row-aligned box tensors ([M,4] each, corner form,
// non-degenerate). Returns [M,1].
inline Var giou_rows(const Var& pred, const Var& gt) {
    auto col = [](const Var& v, int c) { return slice(v, 1, c, 1); };
    Var px0 = col(pred, 0), py0 = col(pred, 1), px1 = col(pred, 2), py1 = col(pred, 3);
    Var gx0 = col(gt, 0), gy0 = col(gt, 1), gx1 = col(gt, 2), gy1 = col(gt, 3);
    Var iw = relu(sub(minimum(px1, gx1), maximum(px0, gx0)));
    Var ih = relu(sub(minimum(py1, gy1), maximum(py0, gy0)));
    Var inter = mul(iw, ih);
    Var pa = mul(sub(px1, px0), sub(py1, py0));
    Var ga = mul(sub(gx1, gx0), sub(gy1, gy0));
    Var uni = sub(add(pa, ga), inter);
    Var iou = vdiv(inter, uni);
    Var ew = sub(maximum(px1, gx1), minimum(px0, gx0));
    Var eh = sub(maximum(py1, gy1), minimum(py0, gy0));
    Var enc = mul(ew, eh);
    return sub(iou, vdiv(sub(enc, uni), enc));
}

} // namespace detail

struct LayerLossTerms {
    double cls = 0.0;
    double l1 = 0.0;
    double giou = 0.0;
};

struct LossBreakdown {
    std::vector<LayerLossTerms> layers; // unweighted per-layer components
    double cls = 0.0;
    double l1 = 0.0;
    double giou = 0.0;
    double total = 0.0; // weighted sum across layers
};

struct CriterionResult {
    Var loss; // scalar graph node
    LossBreakdown breakdown;
    std::vector<MatchAssignment> assignments; // one per layer
};

// Deep-supervised set criterion: each layer is matched independently on its
// own predictions; unmatched queries contribute only (background) focal
// classification. `frozen` substitutes precomputed assignments, which keeps
// the loss smooth under parameter perturbation for finite-difference checks.
inline CriterionResult set_criterion(const std::vector<LayerGraph>& layers, const std::vector<GtObject>& gts,
                                     const CostWeights& cw = {}, const LossWeights& lw = {},
                                     const std::vector<MatchAssignment>* frozen = nullptr) {
    if (layers.empty()) throw std::invalid_argument("set_criterion: no layers");
    if (frozen && frozen->size() != layers.size())
        throw std::invalid_argument("set_criterion: frozen assignment count mismatch");
    int m = static_cast<int>(gts.size());
    int n_cls = layers[0].class_logits->value.size(1);
    for (const GtObject& gt : gts) {
        require_valid(gt.box, "set_criterion");
        if (gt.cls < 0 || gt.cls >= n_cls)
            throw std::invalid_argument("set_criterion: class id " + std::to_string(gt.cls) +
                                        " outside [0, " + std::to_string(n_cls) + ")");
    }

    Tensor gt_boxes({std::max(m, 1), 4});
    for (int g = 0; g < m; ++g) {
        gt_boxes(g, 0) = gts[static_cast<size_t>(g)].box.x0;
        gt_boxes(g, 1) = gts[static_cast<size_t>(g)].box.y0;
        gt_boxes(g, 2) = gts[static_cast<size_t>(g)].box.x1;
        gt_boxes(g, 3) = gts[static_cast<size_t>(g)].box.y1;
    }

    CriterionResult out;
    Var total;
    for (size_t li = 0; li < layers.size(); ++li) {
        const LayerGraph& layer = layers[li];
        int n = layer.class_logits->value.size(0);

        MatchAssignment assign =
            frozen ? (*frozen)[li] : (m > 0 ? hungarian(match_cost_matrix(layer, gts, cw)) : MatchAssignment{});
        if (assign.query_to_gt.empty()) assign.query_to_gt.assign(static_cast<size_t>(n), -1);

        Tensor targets({n, n_cls});
        for (int g = 0; g < static_cast<int>(assign.gt_to_query.size()); ++g)
            targets(assign.gt_to_query[static_cast<size_t>(g)], gts[static_cast<size_t>(g)].cls) = 1.0;

        Var cls = focal_loss(layer.class_logits, targets, lw.focal_alpha, lw.focal_gamma);
        Var layer_total = scale(cls, lw.cls);
        LayerLossTerms terms;
        terms.cls = cls->value.item();
        if (m > 0) {
            Var matched = gather_rows(layer.boxes, assign.gt_to_query);
            Var gt_const = constant(gt_boxes);
            Var l1 = scale(sum(abs(sub(matched, gt_const))), 1.0 / static_cast<double>(m));
            Var giou_l = mean(rsub_scalar(1.0, detail::giou_rows(matched, gt_const)));
            terms.l1 = l1->value.item();
            terms.giou = giou_l->value.item();
            layer_total = add(layer_total, add(scale(l1, lw.l1), scale(giou_l, lw.giou)));
        }
        out.breakdown.layers.push_back(terms);
        out.breakdown.cls += terms.cls;
        out.breakdown.l1 += terms.l1;
        out.breakdown.giou += terms.giou;
        out.assignments.push_back(std::move(assign));
        total = total ? add(total, layer_total) : layer_total;
    }
    out.loss = total;
    out.breakdown.total = total->value.item();
    return out;
}

} // namespace saldet
