#pragma once

#include "saldet/autodiff.hpp"
#include "saldet/geometry.hpp"
#include "saldet/posenc.hpp"
#include "saldet/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace saldet {

struct AttentionConfig {
    int model_dim = 64;
    int heads = 8;

    int head_dim() const { return model_dim / heads; }
    void validate() const {
        if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0)
            throw std::invalid_argument("AttentionConfig: model_dim " + std::to_string(model_dim) +
                                        " must be a positive multiple of heads " + std::to_string(heads));
    }
    // per-scalar positional encoding width; point encodings (2 scalars) then
    // span exactly model_dim channels
    int pe_scalar_dim() const {
        if (model_dim % 4 != 0)
            throw std::invalid_argument("AttentionConfig: model_dim must be divisible by 4 "
                                        "so that per-scalar encodings pair up across heads");
        return model_dim / 2;
    }
};

// Uniform feature-map grid; cell (row i, col j) has normalized center
// ((j+0.5)/w, (i+0.5)/h). Cells flatten row-major, matching token order.
struct FeatureGrid {
    int w = 0;
    int h = 0;

    int cells() const { return w * h; }
    void validate() const {
        if (w <= 0 || h <= 0) throw std::invalid_argument("FeatureGrid: dimensions must be positive");
    }
    Point2 center(int idx) const {
        int i = idx / w, j = idx % w;
        return {(j + 0.5) / w, (i + 0.5) / h};
    }
    Tensor xs() const {
        Tensor t({cells()});
        for (int idx = 0; idx < cells(); ++idx) t[idx] = center(idx).x;
        return t;
    }
    Tensor ys() const {
        Tensor t({cells()});
        for (int idx = 0; idx < cells(); ++idx) t[idx] = center(idx).y;
        return t;
    }
};

// Scaled dot-product attention over H channel-sliced heads. extra_logits, when
// provided, is added per head/query/key before the (max-subtracted) softmax;
// only the content term carries the 1/sqrt(head_dim) scale. attn_out, when
// non-null, receives the post-softmax weights [H, Nq, Nk].
inline Var multi_head_attention(const Var& q, const Var& k, const Var& v, const Var& extra_logits,
                                const AttentionConfig& cfg, Tensor* attn_out = nullptr) {
    cfg.validate();
    if (q->value.ndim() != 2 || k->value.ndim() != 2 || v->value.ndim() != 2)
        throw std::invalid_argument("multi_head_attention: rank-2 operands required");
    if (q->value.size(1) != cfg.model_dim || k->value.size(1) != cfg.model_dim ||
        v->value.size(1) != cfg.model_dim)
        throw std::invalid_argument("multi_head_attention: channel width must equal model_dim " +
                                    std::to_string(cfg.model_dim));
    if (k->value.size(0) != v->value.size(0))
        throw std::invalid_argument("multi_head_attention: key/value counts differ");
    Var qh = split_heads(q, cfg.heads);
    Var kh = split_heads(k, cfg.heads);
    Var vh = split_heads(v, cfg.heads);
    Var logits = scale(bmm(qh, kh, false, true), 1.0 / std::sqrt(static_cast<double>(cfg.head_dim())));
    if (extra_logits) {
        Shape want{cfg.heads, q->value.size(0), k->value.size(0)};
        if (extra_logits->value.shape() != want)
            throw std::invalid_argument("multi_head_attention: extra_logits shape " +
                                        shape_str(extra_logits->value.shape()) + " expected " + shape_str(want));
        logits = add(logits, extra_logits);
    }
    Var attn = softmax_last(logits);
    if (attn_out) *attn_out = attn->value;
    return merge_heads(bmm(attn, vh));
}

// Two-layer feed-forward map with rectified-linear activation producing one
// scaling vector of model_dim channels per query row.
struct ScalingTransform {
    Var w1; // [d, hidden]
    Var b1; // [hidden]
    Var w2; // [hidden, d]
    Var b2; // [d]

    Var apply(const Var& e) const {
        Var t = add(matmul(relu(add(matmul(e, w1), b1)), w2), b2);
        if (t->value.size(1) != e->value.size(1))
            throw std::invalid_argument("ScalingTransform: output width " + std::to_string(t->value.size(1)) +
                                        " must equal embedding width " + std::to_string(e->value.size(1)));
        return t;
    }
};

namespace detail {

inline Tensor encode_query_points(const std::vector<Point2>& pts, const PEConfig& pe) {
    return encode_points(pts, pe);
}

inline Tensor encode_query_corners(const std::vector<Point2>& refs, const std::vector<SideDistances>& sides,
                                   const PEConfig& pe) {
    std::vector<BoxXYXY> boxes;
    boxes.reserve(refs.size());
    for (size_t i = 0; i < refs.size(); ++i) boxes.push_back(box_from_point_sides(refs[i], sides[i]));
    return encode_box_corners(boxes, pe);
}

} // namespace detail

// Point-enhanced cross-attention logits [H, Nq, Nk]:
//   content   e_q . e_k / sqrt(head_dim)
// + point     (T o PE(r_q)) . PE(r_k)
// + side      (T o g(PE(corner coords))) . PE(r_k)
// with T one shared scaling vector per query (keys unscaled) and g the linear
// no-bias reduction from the 4-scalar corner encoding onto point-encoding
// width. All three terms are channel-split per head before summation.
struct PETemps {
    double key = 20.0;   // encoder key positions
    double point = 20.0; // query reference points
    double box = 20.0;   // query side/corner coordinates
};

inline Var peca_logits(const Var& e_q, const Var& e_k, const std::vector<Point2>& r_q,
                       const std::vector<Point2>& r_k, const std::vector<SideDistances>& sides, const Var& T,
                       const Var& g_w, const AttentionConfig& cfg, const PETemps& temps = {}) {
    cfg.validate();
    int d = cfg.model_dim;
    int nq = e_q->value.size(0), nk = e_k->value.size(0);
    if (e_q->value.size(1) != d || e_k->value.size(1) != d)
        throw std::invalid_argument("peca_logits: embeddings must have model_dim channels");
    if (static_cast<int>(r_q.size()) != nq || static_cast<int>(sides.size()) != nq ||
        static_cast<int>(r_k.size()) != nk)
        throw std::invalid_argument("peca_logits: point/side counts must match embedding rows");
    if (!T->value.same_shape(e_q->value))
        throw std::invalid_argument("peca_logits: scaling vectors must be [Nq, model_dim]");
    int sdim = cfg.pe_scalar_dim();
    if (g_w->value.ndim() != 2 || g_w->value.size(0) != 2 * d || g_w->value.size(1) != d)
        throw std::invalid_argument("peca_logits: side reduction must map " + std::to_string(2 * d) +
                                    " -> " + std::to_string(d) + " channels, got " +
                                    shape_str(g_w->value.shape()));

    Var pe_q = constant(detail::encode_query_points(r_q, PEConfig{sdim, temps.point}));
    Var pe_k = constant(detail::encode_query_points(r_k, PEConfig{sdim, temps.key}));
    Var corners = constant(detail::encode_query_corners(r_q, sides, PEConfig{sdim, temps.box}));

    Var pe_k_h = split_heads(pe_k, cfg.heads);
    double content_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    Var content = scale(bmm(split_heads(e_q, cfg.heads), split_heads(e_k, cfg.heads), false, true), content_scale);
    Var point = bmm(split_heads(mul(T, pe_q), cfg.heads), pe_k_h, false, true);
    Var side = bmm(split_heads(mul(T, matmul(corners, g_w)), cfg.heads), pe_k_h, false, true);
    return add(add(content, point), side);
}

// Parameter bundle for the side-directed Gaussian heads: a tanh head emitting
// per-head offset fractions and a softplus head emitting per-head attention
// scales, both two-layer with model_dim hidden width.
struct SDGNets {
    Var ow1, ob1, ow2, ob2; // offsets: d -> d -> 2H, tanh
    Var vw1, vb1, vw2, vb2; // scales:  d -> d -> 2H, softplus + floor
    static constexpr double kScaleFloor = 1e-4;
};

struct SDGParams {
    Var o; // [N, 2H], each component in [-1, 1]
    Var v; // [N, 2H], strictly positive
};

inline SDGParams sdg_params(const Var& e, const SDGNets& nets) {
    SDGParams p;
    p.o = tanh(add(matmul(relu(add(matmul(e, nets.ow1), nets.ob1)), nets.ow2), nets.ob2));
    p.v = add_scalar(softplus(add(matmul(relu(add(matmul(e, nets.vw1), nets.vb1)), nets.vw2), nets.vb2)),
                     SDGNets::kScaleFloor);
    return p;
}

// Head points c = o * s_selected + r, the sign of each offset selecting the
// side it can reach: positive x-offsets scale the right side, negative the
// left; positive y-offsets the bottom, negative the top. |o| <= 1 keeps every
// head point inside the proposal box. r and s enter as plain values (they are
// detached query state), o stays differentiable.
inline Var sdg_head_points(const Var& o, const std::vector<Point2>& refs,
                           const std::vector<SideDistances>& sides) {
    const Shape& os = o->value.shape();
    if (os.size() != 2 || os[1] % 2 != 0)
        throw std::invalid_argument("sdg_head_points: offsets must be [N, 2*heads]");
    int n = os[0], two_h = os[1];
    if (static_cast<int>(refs.size()) != n || static_cast<int>(sides.size()) != n)
        throw std::invalid_argument("sdg_head_points: refs/sides must match offset rows");
    Tensor side_pos({n, two_h}), side_neg({n, two_h}), base({n, two_h});
    for (int i = 0; i < n; ++i) {
        const SideDistances& s = sides[static_cast<size_t>(i)];
        if (s.left < 0 || s.top < 0 || s.right < 0 || s.bottom < 0)
            throw std::invalid_argument("sdg_head_points: negative side distance");
        for (int c = 0; c < two_h; ++c) {
            bool is_x = (c % 2 == 0);
            side_pos(i, c) = is_x ? s.right : s.bottom;
            side_neg(i, c) = is_x ? s.left : s.top;
            base(i, c) = is_x ? refs[static_cast<size_t>(i)].x : refs[static_cast<size_t>(i)].y;
        }
    }
    Var reach = sub(mul(relu(o), constant(std::move(side_pos))), mul(relu(neg(o)), constant(std::move(side_neg))));
    return add(reach, constant(std::move(base)));
}

// Pre-softmax Gaussian weight map over the feature grid, [H, N, cells]:
// G(x, y) = exp(-((x-c_x)/v_x)^2 - ((y-c_y)/v_y)^2) at each cell center.
inline Var sdg_map(const Var& centers, const Var& scales, const FeatureGrid& grid) {
    grid.validate();
    for (std::int64_t i = 0; i < scales->value.numel(); ++i)
        if (!(scales->value[i] > 0.0))
            throw std::invalid_argument("sdg_map: attention scales must be strictly positive");
    return gaussian_grid_map(centers, scales, grid.xs(), grid.ys());
}

// Additive log-Gaussian modulation of pre-softmax logits; the epsilon keeps
// far-off cells finitely suppressed instead of -inf.
inline Var combine_sdg(const Var& logits, const Var& gaussian) {
    if (!logits->value.same_shape(gaussian->value))
        throw std::invalid_argument("combine_sdg: logits " + shape_str(logits->value.shape()) +
                                    " vs map " + shape_str(gaussian->value.shape()));
    return add(logits, log(add_scalar(gaussian, 1e-8)));
}

} // namespace saldet
