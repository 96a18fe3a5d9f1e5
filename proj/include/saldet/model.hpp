#pragma once

#include "saldet/attention.hpp"
#include "saldet/autodiff.hpp"
#include "saldet/geometry.hpp"
#include "saldet/matching.hpp"
#include "saldet/optim.hpp"
#include "saldet/posenc.hpp"
#include "saldet/refpoints.hpp"
#include "saldet/rng.hpp"
#include "saldet/scalar.hpp"
#include "saldet/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace saldet {

struct ModelConfig {
    int model_dim = 64;
    int heads = 8;
    int encoder_layers = 3;
    int decoder_layers = 3;
    int ffn_dim = 256;
    int n_queries = 64;
    int n_classes = 2;
    int image_size = 64;
    int patch_size = 8;
    bool movable_enabled = true;
    bool sdg_enabled = true;
    bool peca_enabled = true;
    PETemps temps{};

    AttentionConfig attention() const { return {model_dim, heads}; }

    void validate() const {
        attention().validate();
        attention().pe_scalar_dim();
        grid_dims(n_queries);
        if (decoder_layers < 1) throw std::invalid_argument("ModelConfig: at least one decoder layer required");
        if (encoder_layers < 0) throw std::invalid_argument("ModelConfig: negative encoder layer count");
        if (ffn_dim <= 0) throw std::invalid_argument("ModelConfig: ffn_dim must be positive");
        if (n_classes < 1) throw std::invalid_argument("ModelConfig: need at least one class");
        if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0)
            throw std::invalid_argument("ModelConfig: image size " + std::to_string(image_size) +
                                        " not divisible into patches of " + std::to_string(patch_size));
        if (!(temps.key > 0.0) || !(temps.point > 0.0) || !(temps.box > 0.0))
            throw std::invalid_argument("ModelConfig: temperatures must be positive");
    }
};

// Named parameter registry with deterministic seeded initialization. Creation
// order is the canonical parameter order (optimizer slots, checkpoints).
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed) : rng_(mix_seed(seed, 0x5a1de70015eedull)) {}

    Var add(const std::string& name, Tensor init) {
        if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
        Var v = leaf(std::move(init));
        index_[name] = params_.size();
        params_.push_back({name, v});
        return v;
    }
    Var xavier(const std::string& name, int rows, int cols) {
        double bound = std::sqrt(6.0 / (rows + cols));
        Tensor t({rows, cols});
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng_.uniform(-bound, bound);
        return add(name, std::move(t));
    }
    Var normal(const std::string& name, Shape shape, double std_dev) {
        Tensor t(std::move(shape));
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng_.normal(0.0, std_dev);
        return add(name, std::move(t));
    }
    Var zeros(const std::string& name, Shape shape) { return add(name, Tensor::zeros(std::move(shape))); }
    Var full(const std::string& name, Shape shape, double v) { return add(name, Tensor::full(std::move(shape), v)); }

    Var get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
        return params_[it->second].var;
    }
    const std::vector<NamedParam>& all() const { return params_; }

private:
    std::vector<NamedParam> params_;
    std::unordered_map<std::string, size_t> index_;
    Rng rng_;
};

struct EncoderOutput {
    Var tokens; // [H_f*W_f, d]
    FeatureGrid grid;
    std::vector<Point2> positions; // token centers, row-major
};

struct LayerOutput {
    Var boxes;        // [N, 4] corner form, graph-connected to this layer's deltas
    Var class_logits; // [N, C]
    std::vector<Point2> refs;        // realized reference points (match boxes rows)
    std::vector<SideDistances> sides;
    Tensor cross_attention; // [H, N, K] post-softmax, captured on request
    Tensor sdg_field;       // [H, N, K] pre-softmax Gaussian, captured on request
};

// Geometry each decoder layer consumed as its (non-differentiable) input
// state, recorded per layer. Replaying a schedule pins that state, so the
// loss becomes a smooth function of the parameters alone — the form finite
// differences can validate, since the stop-gradient boundary between layers
// makes the evolving geometry an input rather than a differentiable path.
struct GeometrySchedule {
    std::vector<std::vector<QueryState>> layer_inputs; // [L][N]
};

struct ForwardResult {
    EncoderOutput encoder;
    std::vector<LayerOutput> layers;
    GeometrySchedule schedule;
};

namespace detail {

struct AttnProj {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
};
struct FFNParams {
    Var w1, b1, w2, b2;
};
struct LNParams {
    Var gamma, beta;
};
struct MLPHead {
    Var w1, b1, w2, b2;
};
struct ClassHead {
    Var w, b;
};

struct EncoderLayerParams {
    AttnProj attn;
    LNParams ln1;
    FFNParams ffn;
    LNParams ln2;
};

struct DecoderLayerParams {
    AttnProj self_attn;
    LNParams ln1;
    AttnProj cross;
    ScalingTransform scaling;
    Var g_w; // side-encoding reduction, shared by cross and self positional terms
    SDGNets sdg;
    LNParams ln2;
    FFNParams ffn;
    LNParams ln3;
    MLPHead box_head;
    MLPHead point_head;
};

} // namespace detail

class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
        cfg_.validate();
        init_params();
        initial_states_ = meshgrid_init(cfg_.n_queries, cfg_.model_dim);
        cache_geometry_constants();
    }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<NamedParam>& parameters() const { return store_.all(); }
    const ParamStore& store() const { return store_; }
    const std::vector<QueryState>& initial_states() const { return initial_states_; }

    // white-box access for head-sharing checks
    const detail::ClassHead& class_head_first() const { return cls_first_; }
    const detail::ClassHead& class_head_shared() const { return cls_shared_; }
    const std::vector<detail::DecoderLayerParams>& decoder_params() const { return dec_; }

    EncoderOutput encode(const Tensor& image) {
        if (image.ndim() != 2 || image.size(0) != cfg_.image_size || image.size(1) != cfg_.image_size)
            throw std::invalid_argument("encode: image must be [" + std::to_string(cfg_.image_size) + ", " +
                                        std::to_string(cfg_.image_size) + "], got " + shape_str(image.shape()));
        int ps = cfg_.patch_size;
        int p = cfg_.image_size / ps;
        Tensor patches({p * p, ps * ps});
        for (int pi = 0; pi < p; ++pi)
            for (int pj = 0; pj < p; ++pj)
                for (int y = 0; y < ps; ++y)
                    for (int x = 0; x < ps; ++x)
                        patches(pi * p + pj, y * ps + x) = image(pi * ps + y, pj * ps + x);

        EncoderOutput out;
        out.grid = FeatureGrid{p, p};
        for (int idx = 0; idx < out.grid.cells(); ++idx) out.positions.push_back(out.grid.center(idx));
        Var tok = add(matmul(constant(std::move(patches)), patch_w_), patch_b_);
        Tensor pe = encode_points(out.positions, PEConfig{cfg_.attention().pe_scalar_dim(), cfg_.temps.key});
        Var x = add(tok, constant(std::move(pe)));
        for (const detail::EncoderLayerParams& lp : enc_) x = encoder_layer(x, lp);
        out.tokens = x;
        return out;
    }

    ForwardResult forward(const Tensor& image, bool capture_attention = false,
                          const GeometrySchedule* frozen = nullptr) {
        if (frozen) {
            if (static_cast<int>(frozen->layer_inputs.size()) != cfg_.decoder_layers)
                throw std::invalid_argument("forward: geometry schedule has " +
                                            std::to_string(frozen->layer_inputs.size()) + " layers, model has " +
                                            std::to_string(cfg_.decoder_layers));
            for (const auto& layer : frozen->layer_inputs)
                if (static_cast<int>(layer.size()) != cfg_.n_queries)
                    throw std::invalid_argument("forward: geometry schedule query count mismatch");
        }
        ForwardResult out;
        out.encoder = encode(image);
        std::vector<QueryState> states = initial_states_;
        Var content = query_content_;
        for (int l = 0; l < cfg_.decoder_layers; ++l) {
            if (frozen) states = frozen->layer_inputs[static_cast<size_t>(l)];
            out.schedule.layer_inputs.push_back(states);
            content = decoder_layer(states, out.encoder, l, content, capture_attention, out.layers);
        }
        return out;
    }

    // ---- checkpointing -------------------------------------------------

    void save_checkpoint(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
        f.write(kMagic, 8);
        write_u32(f, kVersion);
        write_i32(f, cfg_.model_dim);
        write_i32(f, cfg_.heads);
        write_i32(f, cfg_.encoder_layers);
        write_i32(f, cfg_.decoder_layers);
        write_i32(f, cfg_.ffn_dim);
        write_i32(f, cfg_.n_queries);
        write_i32(f, cfg_.n_classes);
        write_i32(f, cfg_.image_size);
        write_i32(f, cfg_.patch_size);
        f.put(cfg_.movable_enabled ? 1 : 0);
        f.put(cfg_.sdg_enabled ? 1 : 0);
        f.put(cfg_.peca_enabled ? 1 : 0);
        write_f64(f, cfg_.temps.key);
        write_f64(f, cfg_.temps.point);
        write_f64(f, cfg_.temps.box);
        write_u64(f, store_.all().size());
        for (const NamedParam& p : store_.all()) {
            write_u32(f, static_cast<std::uint32_t>(p.name.size()));
            f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
            const Tensor& t = p.var->value;
            write_u32(f, static_cast<std::uint32_t>(t.ndim()));
            for (int a = 0; a < t.ndim(); ++a) write_u64(f, static_cast<std::uint64_t>(t.size(a)));
            f.write(reinterpret_cast<const char*>(t.data()),
                    static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(double))));
        }
        if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
    }

    static Model load_checkpoint(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
        char magic[8];
        f.read(magic, 8);
        if (!f || std::memcmp(magic, kMagic, 8) != 0)
            throw std::runtime_error("load_checkpoint: bad magic in " + path);
        if (read_u32(f) != kVersion) throw std::runtime_error("load_checkpoint: unsupported version");
        ModelConfig cfg;
        cfg.model_dim = read_i32(f);
        cfg.heads = read_i32(f);
        cfg.encoder_layers = read_i32(f);
        cfg.decoder_layers = read_i32(f);
        cfg.ffn_dim = read_i32(f);
        cfg.n_queries = read_i32(f);
        cfg.n_classes = read_i32(f);
        cfg.image_size = read_i32(f);
        cfg.patch_size = read_i32(f);
        cfg.movable_enabled = f.get() != 0;
        cfg.sdg_enabled = f.get() != 0;
        cfg.peca_enabled = f.get() != 0;
        cfg.temps.key = read_f64(f);
        cfg.temps.point = read_f64(f);
        cfg.temps.box = read_f64(f);
        Model m(cfg, 0);
        std::uint64_t count = read_u64(f);
        if (count != m.store_.all().size())
            throw std::runtime_error("load_checkpoint: parameter count mismatch");
        for (std::uint64_t i = 0; i < count; ++i) {
            std::uint32_t len = read_u32(f);
            std::string name(len, '\0');
            f.read(name.data(), len);
            std::uint32_t nd = read_u32(f);
            Shape shape(nd);
            for (std::uint32_t a = 0; a < nd; ++a) shape[a] = static_cast<int>(read_u64(f));
            Var v = m.store_.get(name);
            if (v->value.shape() != shape)
                throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
            f.read(reinterpret_cast<char*>(v->value.data()),
                   static_cast<std::streamsize>(v->value.numel() * static_cast<std::int64_t>(sizeof(double))));
        }
        if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
        return m;
    }

private:
    static constexpr const char* kMagic = "SALDET\0c";
    static constexpr std::uint32_t kVersion = 1;

    ModelConfig cfg_;
    ParamStore store_;
    std::vector<QueryState> initial_states_;

    Var patch_w_, patch_b_;
    Var query_content_;
    std::vector<detail::EncoderLayerParams> enc_;
    std::vector<detail::DecoderLayerParams> dec_;
    detail::ClassHead cls_first_, cls_shared_;
    Var anchors_, extents_; // [N, 2] constants of the query grid

    // ---- initialization -------------------------------------------------

    detail::AttnProj init_attn(const std::string& prefix) {
        int d = cfg_.model_dim;
        return {store_.xavier(prefix + ".wq", d, d), store_.zeros(prefix + ".bq", {d}),
                store_.xavier(prefix + ".wk", d, d), store_.zeros(prefix + ".bk", {d}),
                store_.xavier(prefix + ".wv", d, d), store_.zeros(prefix + ".bv", {d}),
                store_.xavier(prefix + ".wo", d, d), store_.zeros(prefix + ".bo", {d})};
    }
    detail::LNParams init_ln(const std::string& prefix) {
        int d = cfg_.model_dim;
        return {store_.full(prefix + ".gamma", {d}, 1.0), store_.zeros(prefix + ".beta", {d})};
    }
    detail::FFNParams init_ffn(const std::string& prefix) {
        int d = cfg_.model_dim, h = cfg_.ffn_dim;
        return {store_.xavier(prefix + ".w1", d, h), store_.zeros(prefix + ".b1", {h}),
                store_.xavier(prefix + ".w2", h, d), store_.zeros(prefix + ".b2", {d})};
    }
    // geometry heads end at zero so layer 0 starts as an identity refinement
    detail::MLPHead init_geom_head(const std::string& prefix, int out) {
        int d = cfg_.model_dim;
        return {store_.xavier(prefix + ".w1", d, d), store_.zeros(prefix + ".b1", {d}),
                store_.zeros(prefix + ".w2", {d, out}), store_.zeros(prefix + ".b2", {out})};
    }
    detail::ClassHead init_class_head(const std::string& prefix) {
        int d = cfg_.model_dim;
        // bias at the focal-friendly low prior: sigmoid(b) = 0.01
        return {store_.xavier(prefix + ".w", d, cfg_.n_classes),
                store_.full(prefix + ".b", {cfg_.n_classes}, -std::log(99.0))};
    }

    void init_params() {
        int d = cfg_.model_dim, h2 = 2 * cfg_.heads;
        int pp = cfg_.patch_size * cfg_.patch_size;
        patch_w_ = store_.xavier("patch.w", pp, d);
        patch_b_ = store_.zeros("patch.b", {d});
        for (int i = 0; i < cfg_.encoder_layers; ++i) {
            std::string p = "enc" + std::to_string(i);
            enc_.push_back({init_attn(p + ".attn"), init_ln(p + ".ln1"), init_ffn(p + ".ffn"), init_ln(p + ".ln2")});
        }
        query_content_ = store_.normal("query.content", {cfg_.n_queries, d}, 1.0);
        for (int i = 0; i < cfg_.decoder_layers; ++i) {
            std::string p = "dec" + std::to_string(i);
            detail::DecoderLayerParams lp;
            lp.self_attn = init_attn(p + ".self");
            lp.ln1 = init_ln(p + ".ln1");
            lp.cross = init_attn(p + ".cross");
            // scaling-transform output bias starts at one so positional terms
            // begin near the plain (unscaled) conditional form
            lp.scaling = {store_.xavier(p + ".scaling.w1", d, d), store_.zeros(p + ".scaling.b1", {d}),
                          store_.xavier(p + ".scaling.w2", d, d), store_.full(p + ".scaling.b2", {d}, 1.0)};
            lp.g_w = store_.xavier(p + ".g", 2 * d, d);
            lp.sdg.ow1 = store_.xavier(p + ".sdg.ow1", d, d);
            lp.sdg.ob1 = store_.zeros(p + ".sdg.ob1", {d});
            lp.sdg.ow2 = store_.xavier(p + ".sdg.ow2", d, h2);
            lp.sdg.ob2 = store_.zeros(p + ".sdg.ob2", {h2});
            lp.sdg.vw1 = store_.xavier(p + ".sdg.vw1", d, d);
            lp.sdg.vb1 = store_.zeros(p + ".sdg.vb1", {d});
            lp.sdg.vw2 = store_.xavier(p + ".sdg.vw2", d, h2);
            lp.sdg.vb2 = store_.zeros(p + ".sdg.vb2", {h2});
            lp.ln2 = init_ln(p + ".ln2");
            lp.ffn = init_ffn(p + ".ffn");
            lp.ln3 = init_ln(p + ".ln3");
            lp.box_head = init_geom_head(p + ".box", 4);
            lp.point_head = init_geom_head(p + ".point", 2);
            dec_.push_back(std::move(lp));
        }
        cls_first_ = init_class_head("cls.first");
        cls_shared_ = init_class_head("cls.shared");
    }

    void cache_geometry_constants() {
        int n = cfg_.n_queries;
        Tensor anchors({n, 2}), extents({n, 2});
        for (int i = 0; i < n; ++i) {
            anchors(i, 0) = initial_states_[static_cast<size_t>(i)].anchor_origin.x;
            anchors(i, 1) = initial_states_[static_cast<size_t>(i)].anchor_origin.y;
            extents(i, 0) = initial_states_[static_cast<size_t>(i)].cell.extent_x;
            extents(i, 1) = initial_states_[static_cast<size_t>(i)].cell.extent_y;
        }
        anchors_ = constant(std::move(anchors));
        extents_ = constant(std::move(extents));
    }

    // ---- building blocks ------------------------------------------------

    static Var linear(const Var& x, const Var& w, const Var& b) { return add(matmul(x, w), b); }
    static Var mlp2(const detail::MLPHead& h, const Var& x) {
        return linear(relu(linear(x, h.w1, h.b1)), h.w2, h.b2);
    }

    Var encoder_layer(Var x, const detail::EncoderLayerParams& p) {
        Var att = multi_head_attention(linear(x, p.attn.wq, p.attn.bq), linear(x, p.attn.wk, p.attn.bk),
                                       linear(x, p.attn.wv, p.attn.bv), Var{}, cfg_.attention());
        x = layer_norm(add(x, linear(att, p.attn.wo, p.attn.bo)), p.ln1.gamma, p.ln1.beta);
        Var f = linear(relu(linear(x, p.ffn.w1, p.ffn.b1)), p.ffn.w2, p.ffn.b2);
        return layer_norm(add(x, f), p.ln2.gamma, p.ln2.beta);
    }

    // Self-attention positional logits: the query's point encoding and its
    // g-reduced side encoding each dotted per head between queries, mirroring
    // the cross-attention treatment of the same two terms.
    Var self_positional_logits(const std::vector<Point2>& refs, const std::vector<SideDistances>& sides,
                               const detail::DecoderLayerParams& p) {
        int sdim = cfg_.attention().pe_scalar_dim();
        Var pe_pt = constant(encode_points(refs, PEConfig{sdim, cfg_.temps.point}));
        std::vector<BoxXYXY> boxes;
        boxes.reserve(refs.size());
        for (size_t i = 0; i < refs.size(); ++i) boxes.push_back(box_from_point_sides(refs[i], sides[i]));
        Var pe_box = matmul(constant(encode_box_corners(boxes, PEConfig{sdim, cfg_.temps.box})), p.g_w);
        Var pt_h = split_heads(pe_pt, cfg_.heads);
        Var box_h = split_heads(pe_box, cfg_.heads);
        return add(bmm(pt_h, pt_h, false, true), bmm(box_h, box_h, false, true));
    }

    Var decoder_layer(std::vector<QueryState>& states, const EncoderOutput& enc, int layer_index, Var content,
                      bool capture, std::vector<LayerOutput>& outputs) {
        const detail::DecoderLayerParams& p = dec_[static_cast<size_t>(layer_index)];
        AttentionConfig acfg = cfg_.attention();
        int n = cfg_.n_queries, d = cfg_.model_dim;

        std::vector<Point2> refs_prev;
        std::vector<SideDistances> sides_prev;
        refs_prev.reserve(static_cast<size_t>(n));
        sides_prev.reserve(static_cast<size_t>(n));
        for (const QueryState& s : states) {
            refs_prev.push_back(s.realized_point());
            sides_prev.push_back(s.realized_sides());
        }

        // (1) query self-attention with positional logits
        Var pos_logits = self_positional_logits(refs_prev, sides_prev, p);
        Var sa = multi_head_attention(linear(content, p.self_attn.wq, p.self_attn.bq),
                                      linear(content, p.self_attn.wk, p.self_attn.bk),
                                      linear(content, p.self_attn.wv, p.self_attn.bv), pos_logits, acfg);
        Var x = layer_norm(add(content, linear(sa, p.self_attn.wo, p.self_attn.bo)), p.ln1.gamma, p.ln1.beta);

        // (2) cross-attention: point-enhanced logits, optionally SDG-modulated
        Var qc = linear(x, p.cross.wq, p.cross.bq);
        Var kc = linear(enc.tokens, p.cross.wk, p.cross.bk);
        Var vc = linear(enc.tokens, p.cross.wv, p.cross.bv);
        Var t_vec = cfg_.peca_enabled ? p.scaling.apply(x) : constant(Tensor::ones({n, d}));
        Var g_used = cfg_.peca_enabled ? p.g_w : constant(Tensor::zeros({2 * d, d}));
        Var logits = peca_logits(qc, kc, refs_prev, enc.positions, sides_prev, t_vec, g_used, acfg, cfg_.temps);
        Tensor sdg_field;
        if (cfg_.sdg_enabled) {
            SDGParams sp = sdg_params(x, p.sdg);
            Var centers = sdg_head_points(sp.o, refs_prev, sides_prev);
            Var gmap = sdg_map(centers, sp.v, enc.grid);
            if (capture) sdg_field = gmap->value;
            logits = combine_sdg(logits, gmap);
        }
        Var attn = softmax_last(logits);
        Var ca = merge_heads(bmm(attn, split_heads(vc, cfg_.heads)));
        x = layer_norm(add(x, linear(ca, p.cross.wo, p.cross.bo)), p.ln2.gamma, p.ln2.beta);

        // (3) feed-forward
        Var f = linear(relu(linear(x, p.ffn.w1, p.ffn.b1)), p.ffn.w2, p.ffn.b2);
        x = layer_norm(add(x, f), p.ln3.gamma, p.ln3.beta);

        // (4) geometry heads: logit-space deltas on the detached previous state
        Tensor prev_side_logits({n, 4}), prev_point_logits({n, 2});
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < 4; ++c)
                prev_side_logits(i, c) = states[static_cast<size_t>(i)].side_logits[static_cast<size_t>(c)];
            for (int c = 0; c < 2; ++c)
                prev_point_logits(i, c) = states[static_cast<size_t>(i)].point_logits[static_cast<size_t>(c)];
        }
        Var ds = mlp2(p.box_head, x);
        Var s_hat = sigmoid(add(constant(std::move(prev_side_logits)), ds));
        Var r_hat;
        Var dr;
        if (cfg_.movable_enabled) {
            dr = mlp2(p.point_head, x);
            Var off = sigmoid(add(constant(std::move(prev_point_logits)), dr));
            r_hat = add(anchors_, mul(off, extents_));
        } else {
            Tensor pts({n, 2});
            for (int i = 0; i < n; ++i) {
                pts(i, 0) = refs_prev[static_cast<size_t>(i)].x;
                pts(i, 1) = refs_prev[static_cast<size_t>(i)].y;
            }
            r_hat = constant(std::move(pts));
        }
        Var rx = slice(r_hat, 1, 0, 1), ry = slice(r_hat, 1, 1, 1);
        Var box = concat({sub(rx, slice(s_hat, 1, 0, 1)), sub(ry, slice(s_hat, 1, 1, 1)),
                          add(rx, slice(s_hat, 1, 2, 1)), add(ry, slice(s_hat, 1, 3, 1))},
                         1);

        // (5) classification: independent head on the first layer, shared after
        const detail::ClassHead& ch = layer_index == 0 ? cls_first_ : cls_shared_;
        Var cls = linear(x, ch.w, ch.b);

        LayerOutput lo;
        lo.boxes = box;
        lo.class_logits = cls;
        lo.refs.reserve(static_cast<size_t>(n));
        lo.sides.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            if (cfg_.movable_enabled)
                lo.refs.push_back({r_hat->value(i, 0), r_hat->value(i, 1)});
            else
                lo.refs.push_back(refs_prev[static_cast<size_t>(i)]);
            lo.sides.push_back({s_hat->value(i, 0), s_hat->value(i, 1), s_hat->value(i, 2), s_hat->value(i, 3)});
        }
        if (capture) lo.cross_attention = attn->value;
        if (capture) lo.sdg_field = std::move(sdg_field);
        outputs.push_back(std::move(lo));

        // (6) detach boundary: realized geometry re-enters as plain values
        for (int i = 0; i < n; ++i) {
            side_update(states[static_cast<size_t>(i)],
                        {ds->value(i, 0), ds->value(i, 1), ds->value(i, 2), ds->value(i, 3)});
            if (cfg_.movable_enabled)
                movable_update(states[static_cast<size_t>(i)], {dr->value(i, 0), dr->value(i, 1)});
            states[static_cast<size_t>(i)] = detach_boundary(states[static_cast<size_t>(i)]);
        }
        return x;
    }

    // ---- binary I/O helpers ----------------------------------------------
    // Fixed little-endian layout; this code targets little-endian hosts.

    static void write_u32(std::ofstream& f, std::uint32_t v) {
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    static void write_i32(std::ofstream& f, std::int32_t v) {
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    static void write_u64(std::ofstream& f, std::uint64_t v) {
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    static void write_f64(std::ofstream& f, double v) { f.write(reinterpret_cast<const char*>(&v), sizeof(v)); }
    static std::uint32_t read_u32(std::ifstream& f) {
        std::uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), sizeof(v));
        return v;
    }
    static std::int32_t read_i32(std::ifstream& f) {
        std::int32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), sizeof(v));
        return v;
    }
    static std::uint64_t read_u64(std::ifstream& f) {
        std::uint64_t v = 0;
        f.read(reinterpret_cast<char*>(&v), sizeof(v));
        return v;
    }
    static double read_f64(std::ifstream& f) {
        double v = 0;
        f.read(reinterpret_cast<char*>(&v), sizeof(v));
        return v;
    }
};

// Adapter from forward outputs to the set-criterion's per-layer view.
inline std::vector<LayerGraph> to_layer_graphs(const ForwardResult& fr) {
    std::vector<LayerGraph> out;
    out.reserve(fr.layers.size());
    for (const LayerOutput& lo : fr.layers) out.push_back({lo.boxes, lo.class_logits, lo.refs});
    return out;
}

} // namespace saldet
