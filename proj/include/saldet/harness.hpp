#pragma once

#include "saldet/fileio.hpp"
#include "saldet/gradcheck.hpp"
#include "saldet/matching.hpp"
#include "saldet/model.hpp"
#include "saldet/optim.hpp"
#include "saldet/posenc.hpp"
#include "saldet/runconfig.hpp"
#include "saldet/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace saldet {

using json = nlohmann::json;

// ---- evaluation ------------------------------------------------------------

struct EvalReport {
    double mean_matched_iou = 0.0;
    double salient_rate = 0.0;           // matched queries whose reference lies inside the gt box
    std::vector<double> recall;          // per class, greedy IoU >= 0.5 above the score threshold
    std::vector<int> gt_per_class;
    double small_matched_iou = 0.0;      // matched IoU over gts with min side <= 0.125
    int small_count = 0;
    int scenes = 0;
    int gt_count = 0;
    std::vector<double> smoothed_loss;   // filled by train(): window-100 trailing mean
};

inline json eval_report_json(const EvalReport& r) {
    json j;
    j["mean_matched_iou"] = r.mean_matched_iou;
    j["salient_rate"] = r.salient_rate;
    j["recall"] = r.recall;
    j["gt_per_class"] = r.gt_per_class;
    j["small_matched_iou"] = r.small_matched_iou;
    j["small_count"] = r.small_count;
    j["scenes"] = r.scenes;
    j["gt_count"] = r.gt_count;
    if (!r.smoothed_loss.empty()) {
        j["smoothed_loss_first"] = r.smoothed_loss.front();
        j["smoothed_loss_final"] = r.smoothed_loss.back();
    }
    return j;
}

// Streaming metric state over evaluated scenes. Hungarian matching (with the
// inner cost) drives matched IoU and the salient-point rate; greedy
// score-ordered IoU matching drives per-class recall at IoU 0.5.
struct EvalAccumulator {
    int n_classes;
    double cls_threshold;
    CostWeights cost;
    double iou_sum = 0.0, small_iou_sum = 0.0;
    int salient = 0, small_count = 0, gt_count = 0, scenes = 0;
    std::vector<int> gt_per_class, hit_per_class;

    EvalAccumulator(int classes, double threshold, const CostWeights& cw = {})
        : n_classes(classes), cls_threshold(threshold), cost(cw),
          gt_per_class(static_cast<size_t>(classes), 0), hit_per_class(static_cast<size_t>(classes), 0) {}

    void add_scene(const LayerGraph& lg, const std::vector<GtObject>& gts) {
        const Tensor& boxes = lg.boxes->value;
        const Tensor& logits = lg.class_logits->value;

        MatchAssignment as = hungarian(match_cost_matrix(lg, gts, cost));
        for (size_t gi = 0; gi < gts.size(); ++gi) {
            const GtObject& gt = gts[gi];
            int q = as.gt_to_query[gi];
            BoxXYXY pred{boxes(q, 0), boxes(q, 1), boxes(q, 2), boxes(q, 3)};
            double iou = box_iou(pred, gt.box);
            iou_sum += iou;
            if (box_contains(gt.box, lg.refs[static_cast<size_t>(q)])) ++salient;
            if (std::min(gt.box.width(), gt.box.height()) <= 0.125) {
                small_iou_sum += iou;
                ++small_count;
            }
            ++gt_per_class[static_cast<size_t>(gt.cls)];
            ++gt_count;
        }

        // greedy recall: detections sorted by score, matched to the best
        // still-unmatched ground truth of the same class at IoU >= 0.5
        struct Det {
            double score;
            int q, c;
        };
        std::vector<Det> dets;
        for (int q = 0; q < logits.size(0); ++q)
            for (int c = 0; c < n_classes; ++c) {
                double score = 1.0 / (1.0 + std::exp(-logits(q, c)));
                if (score >= cls_threshold) dets.push_back({score, q, c});
            }
        std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.q != b.q) return a.q < b.q;
            return a.c < b.c;
        });
        std::vector<char> taken(gts.size(), 0);
        for (const Det& d : dets) {
            int best_gt = -1;
            double best_iou = 0.5;
            BoxXYXY pred{boxes(d.q, 0), boxes(d.q, 1), boxes(d.q, 2), boxes(d.q, 3)};
            for (size_t gi = 0; gi < gts.size(); ++gi) {
                if (taken[gi] || gts[gi].cls != d.c) continue;
                double iou = box_iou(pred, gts[gi].box);
                if (iou >= best_iou) {
                    best_iou = iou;
                    best_gt = static_cast<int>(gi);
                }
            }
            if (best_gt >= 0) {
                taken[static_cast<size_t>(best_gt)] = 1;
                ++hit_per_class[static_cast<size_t>(d.c)];
            }
        }
        ++scenes;
    }

    EvalReport finalize() const {
        EvalReport rep;
        rep.scenes = scenes;
        rep.gt_count = gt_count;
        rep.gt_per_class = gt_per_class;
        rep.small_count = small_count;
        rep.mean_matched_iou = gt_count > 0 ? iou_sum / gt_count : 0.0;
        rep.salient_rate = gt_count > 0 ? static_cast<double>(salient) / gt_count : 0.0;
        rep.small_matched_iou = small_count > 0 ? small_iou_sum / small_count : 0.0;
        rep.recall.assign(static_cast<size_t>(n_classes), 0.0);
        for (int c = 0; c < n_classes; ++c)
            rep.recall[static_cast<size_t>(c)] =
                gt_per_class[static_cast<size_t>(c)] > 0
                    ? static_cast<double>(hit_per_class[static_cast<size_t>(c)]) / gt_per_class[static_cast<size_t>(c)]
                    : 1.0;
        return rep;
    }
};

// Final-layer metrics over freshly generated scenes.
inline EvalReport evaluate(Model& model, const SceneParams& sp, const CostWeights& cw, double cls_threshold,
                           const std::vector<std::uint64_t>& seeds) {
    EvalAccumulator acc(model.config().n_classes, cls_threshold, cw);
    for (std::uint64_t seed : seeds) {
        SyntheticScene scene = generate_scene(sp, seed);
        ForwardResult fr = model.forward(scene.image);
        acc.add_scene(to_layer_graphs(fr).back(), scene.objects);
    }
    return acc.finalize();
}

// ---- training --------------------------------------------------------------

// Linear ramp to the peak rate over the warm-up, constant afterwards;
// `iteration` is 1-based, so warm_up == iterations peaks on the final step.
inline double warmup_lr(double peak, int iteration, int warm_up) {
    if (warm_up > 0 && iteration <= warm_up) return peak * iteration / warm_up;
    return peak;
}

inline std::vector<double> smooth_curve(const std::vector<double>& xs, int window) {
    std::vector<double> out(xs.size());
    double acc = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        acc += xs[i];
        if (i >= static_cast<size_t>(window)) acc -= xs[i - static_cast<size_t>(window)];
        out[i] = acc / std::min<size_t>(i + 1, static_cast<size_t>(window));
    }
    return out;
}

struct TrainResult {
    EvalReport report;
    std::vector<double> loss_curve;     // per-iteration batch-mean weighted total
    std::vector<double> smoothed_curve; // window-100 trailing mean of loss_curve
    std::string checkpoint_path;
    std::string log_path;
    std::string report_path;
};

namespace detail {

inline void require_finite_loss(const LossBreakdown& b, int iteration) {
    for (size_t li = 0; li < b.layers.size(); ++li) {
        const LayerLossTerms& t = b.layers[li];
        const char* names[3] = {"cls", "l1", "giou"};
        const double vals[3] = {t.cls, t.l1, t.giou};
        for (int c = 0; c < 3; ++c)
            if (!std::isfinite(vals[c]))
                throw std::runtime_error("train: non-finite " + std::string(names[c]) + " loss (layer " +
                                         std::to_string(li) + ") at iteration " + std::to_string(iteration));
    }
    if (!std::isfinite(b.total))
        throw std::runtime_error("train: non-finite total loss at iteration " + std::to_string(iteration));
}

inline void require_refs_in_grid(const ForwardResult& fr, const std::vector<QueryState>& init, int iteration) {
    for (size_t li = 0; li < fr.layers.size(); ++li)
        for (size_t q = 0; q < fr.layers[li].refs.size(); ++q) {
            const Point2& p = fr.layers[li].refs[q];
            if (!std::isfinite(p.x) || !std::isfinite(p.y))
                throw std::runtime_error("train: non-finite reference point of query " + std::to_string(q) +
                                         " (layer " + std::to_string(li) + ") at iteration " +
                                         std::to_string(iteration));
            if (!init[q].cell.contains(p))
                throw std::logic_error("train: reference point of query " + std::to_string(q) +
                                       " left its grid cell (layer " + std::to_string(li) + ", iteration " +
                                       std::to_string(iteration) + ")");
        }
}

} // namespace detail

// Scene seed streams: disjoint tags keep training, held-out evaluation, and
// exported datasets statistically independent at any base seed.
inline std::uint64_t train_scene_seed(std::uint64_t base, std::int64_t index) {
    return mix_seed(base, 1, static_cast<std::uint64_t>(index));
}
inline std::uint64_t eval_scene_seed(std::uint64_t base, std::int64_t index) {
    return mix_seed(base, 2, static_cast<std::uint64_t>(index));
}
inline std::uint64_t dataset_scene_seed(std::uint64_t base, std::int64_t index) {
    return mix_seed(base, 3, static_cast<std::uint64_t>(index));
}

// Full training run: AdamW with linear warm-up, per-scene gradient
// accumulation over the batch, append-only JSON-lines loss log, final
// checkpoint + evaluation report in cfg.out_dir. Deterministic end to end:
// the same RunConfig reproduces logs and checkpoint bit-for-bit.
inline TrainResult train(const RunConfig& cfg) {
    cfg.validate();
    ensure_dir(cfg.out_dir);
    TrainResult res;
    res.checkpoint_path = cfg.out_dir + "/model.ckpt";
    res.log_path = cfg.out_dir + "/train_log.jsonl";
    res.report_path = cfg.out_dir + "/report.json";

    Model model(cfg.model, cfg.seed);
    AdamW opt(model.parameters(), {0.9, 0.999, 1e-8, cfg.weight_decay});
    SceneParams sp = cfg.scene_params();

    std::ofstream log(res.log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("train: cannot open " + res.log_path);

    for (int it = 1; it <= cfg.iterations; ++it) {
        double lr = warmup_lr(cfg.lr, it, cfg.warm_up);
        opt.zero_grad();
        double total = 0.0, cls = 0.0, l1 = 0.0, giou = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            std::int64_t idx = static_cast<std::int64_t>(it - 1) * cfg.batch_size + b;
            SyntheticScene scene = generate_scene(sp, train_scene_seed(cfg.seed, idx));
            ForwardResult fr = model.forward(scene.image);
            if (b == 0) detail::require_refs_in_grid(fr, model.initial_states(), it);
            CriterionResult cr = set_criterion(to_layer_graphs(fr), scene.objects, cfg.cost, cfg.loss);
            detail::require_finite_loss(cr.breakdown, it);
            backward(scale(cr.loss, 1.0 / cfg.batch_size));
            total += cr.breakdown.total / cfg.batch_size;
            cls += cr.breakdown.cls / cfg.batch_size;
            l1 += cr.breakdown.l1 / cfg.batch_size;
            giou += cr.breakdown.giou / cfg.batch_size;
        }
        opt.step(lr);

        json line;
        line["iteration"] = it;
        line["lr"] = lr;
        line["total"] = total;
        line["cls"] = cls;
        line["l1"] = l1;
        line["giou"] = giou;
        log << line.dump() << '\n';
        log.flush();
        res.loss_curve.push_back(total);
    }

    model.save_checkpoint(res.checkpoint_path);
    res.smoothed_curve = smooth_curve(res.loss_curve, 100);

    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < cfg.eval_scenes; ++i) seeds.push_back(eval_scene_seed(cfg.seed, i));
    res.report = evaluate(model, sp, cfg.cost, cfg.cls_threshold, seeds);
    res.report.smoothed_loss = res.smoothed_curve;

    std::ofstream rf(res.report_path, std::ios::trunc);
    if (!rf) throw std::runtime_error("train: cannot open " + res.report_path);
    rf << eval_report_json(res.report).dump(2) << '\n';
    return res;
}

// ---- attention export -------------------------------------------------------

struct AttentionExport {
    std::vector<std::string> files; // PGM images, plus one CSV listed last
};

// Post-softmax cross-attention fields and the raw Gaussian components for the
// requested queries at one decoder layer, as feature-grid-sized PGM images
// plus a per-cell CSV.
inline AttentionExport export_attention(Model& model, const SyntheticScene& scene,
                                        const std::vector<int>& query_ids, int layer,
                                        const std::string& out_dir) {
    const ModelConfig& cfg = model.config();
    if (layer < 0 || layer >= cfg.decoder_layers)
        throw std::invalid_argument("export_attention: layer " + std::to_string(layer) +
                                    " out of range; valid layers 0.." + std::to_string(cfg.decoder_layers - 1));
    for (int q : query_ids)
        if (q < 0 || q >= cfg.n_queries)
            throw std::invalid_argument("export_attention: query id " + std::to_string(q) +
                                        " out of range; valid ids 0.." + std::to_string(cfg.n_queries - 1));
    if (query_ids.empty()) throw std::invalid_argument("export_attention: no query ids given");

    ensure_dir(out_dir);
    AttentionExport out;
    ForwardResult fr = model.forward(scene.image, true);
    const LayerOutput& lo = fr.layers[static_cast<size_t>(layer)];
    const FeatureGrid& grid = fr.encoder.grid;
    bool has_sdg = lo.sdg_field.numel() > 0;

    std::string scene_path = out_dir + "/scene.pgm";
    write_pgm(scene_path, scene.image);
    out.files.push_back(scene_path);

    std::string csv_path = out_dir + "/attention_l" + std::to_string(layer) + ".csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("export_attention: cannot open " + csv_path);
    csv << "layer,query,head,row,col,attention,sdg\n";

    for (int q : query_ids) {
        for (int h = 0; h < cfg.heads; ++h) {
            Tensor attn({grid.h, grid.w});
            Tensor sdg({grid.h, grid.w});
            for (int i = 0; i < grid.h; ++i)
                for (int j = 0; j < grid.w; ++j) {
                    attn(i, j) = lo.cross_attention(h, q, i * grid.w + j);
                    if (has_sdg) sdg(i, j) = lo.sdg_field(h, q, i * grid.w + j);
                    csv << layer << ',' << q << ',' << h << ',' << i << ',' << j << ','
                        << attn(i, j) << ',' << (has_sdg ? sdg(i, j) : 0.0) << '\n';
                }
            std::string base = out_dir + "/l" + std::to_string(layer) + "_q" + std::to_string(q) + "_h" +
                               std::to_string(h);
            write_pgm_scaled(base + "_attn.pgm", attn);
            out.files.push_back(base + "_attn.pgm");
            if (has_sdg) {
                write_pgm_scaled(base + "_sdg.pgm", sdg);
                out.files.push_back(base + "_sdg.pgm");
            }
        }
    }
    if (!csv) throw std::runtime_error("export_attention: write failed for " + csv_path);
    out.files.push_back(csv_path);
    return out;
}

// ---- verification suites ----------------------------------------------------

struct VerifyCheck {
    std::string name;
    bool pass = false;
    double measured = 0.0; // worst error / violation count, per check
    double bound = 0.0;
    std::string detail;
};

struct VerifyReport {
    std::string suite;
    std::vector<VerifyCheck> checks;

    bool all_pass() const {
        for (const VerifyCheck& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

inline json verify_report_json(const VerifyReport& rep) {
    json j;
    j["suite"] = rep.suite;
    j["pass"] = rep.all_pass();
    j["checks"] = json::array();
    for (const VerifyCheck& c : rep.checks)
        j["checks"].push_back(
            {{"check", c.name}, {"pass", c.pass}, {"measured", c.measured}, {"bound", c.bound}, {"detail", c.detail}});
    return j;
}

namespace detail {

// Exhaustive minimum-cost injection of gts into queries. No branch-and-bound:
// costs may be negative, so partial sums cannot prune soundly.
inline double brute_force_assignment_cost(const Tensor& cost) {
    int n = cost.size(0), m = cost.size(1);
    std::vector<char> used(static_cast<size_t>(n), 0);
    double best = std::numeric_limits<double>::infinity();
    std::function<void(int, double)> rec = [&](int gt, double acc) {
        if (gt == m) {
            best = std::min(best, acc);
            return;
        }
        for (int q = 0; q < n; ++q) {
            if (used[static_cast<size_t>(q)]) continue;
            used[static_cast<size_t>(q)] = 1;
            rec(gt + 1, acc + cost(q, gt));
            used[static_cast<size_t>(q)] = 0;
        }
    };
    rec(0, 0.0);
    return best;
}

} // namespace detail

// Channel-t lobe centers of the query-to-key positional similarity, scanned
// at 1e-4 against the closed form (T_k/T_q)^(2t/d) * pos_q. The scan window
// sits asymmetrically inside the principal lobe so the peak position is
// informative rather than pinned by the window itself.
inline VerifyCheck verify_pe_drift(double temp_q, double temp_k, int dim = 64) {
    const double step = 1e-4;
    PEConfig q{dim, temp_q}, k{dim, temp_k};
    Rng rng(mix_seed(0xd21f7, static_cast<std::uint64_t>(temp_q * 1000), static_cast<std::uint64_t>(temp_k * 1000)));
    VerifyCheck check;
    check.name = "pe-drift Tq=" + std::to_string(static_cast<int>(temp_q)) + " Tk=" +
                 std::to_string(static_cast<int>(temp_k));
    check.bound = 1.0; // scan steps
    double worst = 0.0;
    for (int t : {1, dim / 4, dim / 2}) {
        double wq = q.omega(t), wk = k.omega(t);
        double period = 1.0 / wk;
        for (int rep = 0; rep < 10; ++rep) {
            double pos_q = rng.uniform(0.05, 0.95);
            double c = predicted_center(pos_q, t, q, k);
            double lo = c - 0.37 * period;
            long n = std::lround(0.60 * period / step);
            double phase_q = kTwoPi * wq * pos_q;
            double best = -std::numeric_limits<double>::infinity();
            long best_i = -1;
            for (long s = 0; s <= n; ++s) {
                double v = std::cos(phase_q - kTwoPi * wk * (lo + s * step));
                if (v > best) {
                    best = v;
                    best_i = s;
                }
            }
            if (best_i <= 0 || best_i >= n) {
                check.detail = "argmax railed at the scan boundary";
                check.measured = std::numeric_limits<double>::infinity();
                check.pass = false;
                return check;
            }
            worst = std::max(worst, std::fabs(lo + best_i * step - c) / step);
        }
    }
    check.measured = worst;
    check.pass = worst <= check.bound;
    return check;
}

// Hungarian totals against exhaustive enumeration on random instances with
// mixed-sign costs and occasional step penalties.
inline VerifyCheck verify_matching_oracle(int instances = 1000) {
    Rng rng(0x17ac9);
    VerifyCheck check;
    check.name = "matching brute-force x" + std::to_string(instances);
    check.bound = 1e-9; // associativity allowance between exact-tie assignments
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
        int n = rng.uniform_int(1, 7);
        int m = rng.uniform_int(1, n);
        Tensor cost({n, m});
        for (std::int64_t e = 0; e < cost.numel(); ++e) {
            cost[e] = rng.uniform(-10.0, 10.0);
            if (rng.bernoulli(0.2)) cost[e] += 9999.0;
        }
        MatchAssignment as = hungarian(cost);
        worst = std::max(worst, std::fabs(as.total_cost - detail::brute_force_assignment_cost(cost)));
    }
    check.measured = worst;
    check.pass = worst <= check.bound;
    return check;
}

// Reverse-mode gradients against central differences: composite random-shape
// graphs per op family, then the full tiny model with frozen assignments and
// frozen per-layer geometry (the stop-gradient boundary makes that geometry
// an input of the differentiated function).
inline VerifyCheck verify_grads_per_op() {
    Rng rng(0x6ead5);
    VerifyCheck check;
    check.name = "grads per-op";
    check.bound = 1e-6;
    double worst = 0.0;
    std::string worst_detail;
    for (int trial = 0; trial < 5; ++trial) {
        int rank = 1 + static_cast<int>(rng.uniform(0.0, 2.999));
        Shape s;
        for (int i = 0; i < rank; ++i) s.push_back(1 + static_cast<int>(rng.uniform(0.0, 4.999)));
        Tensor ta(s), tb(s);
        for (std::int64_t i = 0; i < ta.numel(); ++i) ta[i] = rng.uniform(-1.5, 1.5);
        for (std::int64_t i = 0; i < tb.numel(); ++i) tb[i] = rng.uniform(0.3, 2.0);
        Var a = leaf(ta), b = leaf(tb);
        auto build = [&] {
            Var u = vdiv(mul(sigmoid(a), tanh(b)), add_scalar(softplus(a), 1.0));
            Var v = add(softmax_last(mul(a, b)), log(add_scalar(exp(neg(b)), 0.5)));
            return add(sum(u), mean(v));
        };
        GradCheckResult res = grad_check(build, {{"a", a}, {"b", b}});
        if (!res.finite) {
            check.detail = res.failure;
            check.measured = std::numeric_limits<double>::infinity();
            check.pass = false;
            return check;
        }
        if (res.max_rel_err > worst) {
            worst = res.max_rel_err;
            worst_detail = res.worst.param + "[" + std::to_string(res.worst.index) + "]";
        }
    }
    check.measured = worst;
    check.detail = worst_detail;
    check.pass = worst <= check.bound;
    return check;
}

inline VerifyCheck verify_grads_full_model() {
    VerifyCheck check;
    check.name = "grads full-model";
    check.bound = 1e-3;

    ModelConfig cfg;
    cfg.model_dim = 16;
    cfg.heads = 2;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 2;
    cfg.ffn_dim = 32;
    cfg.n_queries = 4;
    cfg.n_classes = 2;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    Model m(cfg, 77);
    Rng rng(0x96ad);
    for (const NamedParam& p : m.parameters())
        for (std::int64_t i = 0; i < p.var->value.numel(); ++i) p.var->value[i] += rng.uniform(-0.02, 0.02);

    Tensor img({cfg.image_size, cfg.image_size});
    for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = rng.uniform(0.0, 1.0);
    std::vector<GtObject> gts = {{{0.1, 0.15, 0.45, 0.6}, 0}, {{0.55, 0.5, 0.9, 0.85}, 1}};

    ForwardResult ref_run = m.forward(img);
    std::vector<MatchAssignment> frozen = set_criterion(to_layer_graphs(ref_run), gts).assignments;
    GeometrySchedule sched = ref_run.schedule;
    auto build = [&] {
        return set_criterion(to_layer_graphs(m.forward(img, false, &sched)), gts, CostWeights{}, LossWeights{},
                             &frozen)
            .loss;
    };
    std::vector<std::pair<std::string, Var>> probes;
    for (const NamedParam& p : m.parameters()) probes.emplace_back(p.name, p.var);
    GradCheckResult res = grad_check(build, probes);
    if (!res.finite) {
        check.detail = res.failure;
        check.measured = std::numeric_limits<double>::infinity();
        check.pass = false;
        return check;
    }
    check.measured = res.max_rel_err;
    check.detail = res.worst.param + "[" + std::to_string(res.worst.index) + "]";
    check.pass = res.max_rel_err <= check.bound;
    return check;
}

// Random movable-update sequences must never take a realized reference point
// out of its query's grid cell.
inline VerifyCheck verify_ingrid(int sequences = 10000, int length = 10) {
    Rng rng(0x1c91d);
    VerifyCheck check;
    check.name = "in-grid " + std::to_string(sequences) + "x" + std::to_string(length);
    check.bound = 0.0;
    std::vector<QueryState> grid = meshgrid_init(16, 8);
    int violations = 0;
    for (int s = 0; s < sequences; ++s) {
        QueryState st = grid[rng.uniform_index(grid.size())];
        for (int u = 0; u < length; ++u) {
            movable_update(st, {rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)});
            if (!st.cell.contains(st.realized_point())) ++violations;
        }
    }
    check.measured = violations;
    check.pass = violations == 0;
    return check;
}

// Random content/reference/side draws: every side-directed Gaussian head
// point must land inside the box spanned by the reference point and sides.
inline VerifyCheck verify_sdg_containment(int draws = 10000) {
    Rng rng(0x5d6c0);
    VerifyCheck check;
    check.name = "sdg containment " + std::to_string(draws);
    check.bound = 0.0;
    const int d = 16, heads = 8, rows_per_bank = 1000;
    int violations = 0;
    for (int bank = 0; bank * rows_per_bank < draws; ++bank) {
        auto mat = [&](int r, int c) {
            Tensor t({r, c});
            for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-0.5, 0.5);
            return constant(std::move(t));
        };
        SDGNets nets{mat(d, d), mat(1, d), mat(d, 2 * heads), mat(1, 2 * heads),
                     mat(d, d), mat(1, d), mat(d, 2 * heads), mat(1, 2 * heads)};
        int rows = std::min(rows_per_bank, draws - bank * rows_per_bank);
        Tensor e({rows, d});
        for (std::int64_t i = 0; i < e.numel(); ++i) e[i] = rng.uniform(-2.0, 2.0);
        std::vector<Point2> refs;
        std::vector<SideDistances> sides;
        for (int i = 0; i < rows; ++i) {
            refs.push_back({rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)});
            sides.push_back({rng.uniform(1e-3, 0.5), rng.uniform(1e-3, 0.5), rng.uniform(1e-3, 0.5),
                             rng.uniform(1e-3, 0.5)});
        }
        SDGParams sp = sdg_params(constant(std::move(e)), nets);
        Var pts = sdg_head_points(sp.o, refs, sides);
        for (int i = 0; i < rows; ++i) {
            BoxXYXY box = box_from_point_sides(refs[static_cast<size_t>(i)], sides[static_cast<size_t>(i)]);
            for (int h = 0; h < heads; ++h) {
                Point2 p{pts->value(i, 2 * h), pts->value(i, 2 * h + 1)};
                if (!box_contains(box, p)) ++violations;
            }
        }
    }
    check.measured = violations;
    check.pass = violations == 0;
    return check;
}

inline VerifyReport run_verify_suite(const std::string& suite) {
    VerifyReport rep;
    rep.suite = suite;
    bool all = suite == "all";
    bool known = all;
    if (all || suite == "pe-drift") {
        known = true;
        rep.checks.push_back(verify_pe_drift(20.0, 20.0));
        rep.checks.push_back(verify_pe_drift(20.0, 1000.0));
        rep.checks.push_back(verify_pe_drift(1000.0, 20.0));
    }
    if (all || suite == "matching") {
        known = true;
        rep.checks.push_back(verify_matching_oracle());
    }
    if (all || suite == "grads") {
        known = true;
        rep.checks.push_back(verify_grads_per_op());
        rep.checks.push_back(verify_grads_full_model());
    }
    if (all || suite == "ingrid") {
        known = true;
        rep.checks.push_back(verify_ingrid());
    }
    if (all || suite == "sdg") {
        known = true;
        rep.checks.push_back(verify_sdg_containment());
    }
    if (!known)
        throw std::invalid_argument("verify: unknown suite '" + suite +
                                    "'; valid: pe-drift, matching, grads, ingrid, sdg, all");
    return rep;
}

} // namespace saldet
