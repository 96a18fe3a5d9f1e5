#include "saldet/harness.hpp"

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <string>
#include <vector>

namespace {

using saldet::json;

std::vector<std::uint64_t> parse_seed_range(const std::string& spec) {
    size_t dots = spec.find("..");
    std::uint64_t lo = 0, hi = 0;
    try {
        if (dots == std::string::npos) {
            lo = hi = std::stoull(spec);
        } else {
            lo = std::stoull(spec.substr(0, dots));
            hi = std::stoull(spec.substr(dots + 2));
        }
    } catch (const std::exception&) {
        throw saldet::ConfigError("invalid seed range '" + spec + "'; expected a..b");
    }
    if (hi < lo) throw saldet::ConfigError("invalid seed range '" + spec + "': end before start");
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
}

saldet::SceneParams scene_params_from_flags(int image_size, int n_classes, int min_objects, int max_objects,
                                            const std::string& mode) {
    if (mode != "normal" && mode != "slender")
        throw saldet::ConfigError("invalid mode '" + mode + "'; expected normal or slender");
    saldet::SceneParams sp{image_size, min_objects, max_objects, n_classes, mode == "slender"};
    sp.validate();
    return sp;
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides) {
    saldet::RunConfig cfg = saldet::parse_run_config(config_path);
    for (const std::string& ov : overrides) saldet::apply_override(cfg, ov);
    cfg.validate();
    saldet::TrainResult res = saldet::train(cfg);
    if (!res.smoothed_curve.empty())
        std::printf("smoothed loss: first %.6f final %.6f\n", res.smoothed_curve.front(),
                    res.smoothed_curve.back());
    std::printf("mean matched IoU: %.4f\nsalient-point rate: %.4f\n", res.report.mean_matched_iou,
                res.report.salient_rate);
    for (size_t c = 0; c < res.report.recall.size(); ++c)
        std::printf("recall@0.5 class %zu: %.4f (%d gts)\n", c, res.report.recall[c], res.report.gt_per_class[c]);
    std::printf("checkpoint: %s\nlog: %s\nreport: %s\n", res.checkpoint_path.c_str(), res.log_path.c_str(),
                res.report_path.c_str());
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& seed_spec, int min_objects, int max_objects,
             const std::string& mode, double threshold) {
    saldet::Model model = saldet::Model::load_checkpoint(ckpt);
    saldet::SceneParams sp = scene_params_from_flags(model.config().image_size, model.config().n_classes,
                                                     min_objects, max_objects, mode);
    saldet::EvalReport rep =
        saldet::evaluate(model, sp, saldet::CostWeights{}, threshold, parse_seed_range(seed_spec));
    std::printf("%s\n", saldet::eval_report_json(rep).dump(2).c_str());
    return 0;
}

int run_export(const std::string& ckpt, std::uint64_t scene_seed, const std::vector<int>& queries, int layer,
               int min_objects, int max_objects, const std::string& mode, const std::string& out_dir) {
    saldet::Model model = saldet::Model::load_checkpoint(ckpt);
    saldet::SceneParams sp = scene_params_from_flags(model.config().image_size, model.config().n_classes,
                                                     min_objects, max_objects, mode);
    saldet::SyntheticScene scene = saldet::generate_scene(sp, scene_seed);
    saldet::AttentionExport ex = saldet::export_attention(model, scene, queries, layer, out_dir);
    std::printf("wrote %zu files under %s\n", ex.files.size(), out_dir.c_str());
    return 0;
}

int run_verify(const std::string& suite) {
    saldet::VerifyReport rep = saldet::run_verify_suite(suite);
    for (const saldet::VerifyCheck& c : rep.checks)
        std::printf("[%s] %s  measured=%.6g bound=%.6g%s%s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                    c.measured, c.bound, c.detail.empty() ? "" : "  ", c.detail.c_str());
    std::printf("%s\n", saldet::verify_report_json(rep).dump().c_str());
    return rep.all_pass() ? 0 : 1;
}

int run_gen_data(const std::string& out_dir, int count, const std::string& mode, std::uint64_t base_seed,
                 int min_objects, int max_objects, int image_size, int n_classes) {
    saldet::SceneParams sp = scene_params_from_flags(image_size, n_classes, min_objects, max_objects, mode);
    saldet::ensure_dir(out_dir);
    std::string jsonl_path = out_dir + "/dataset.jsonl";
    std::ofstream jf(jsonl_path, std::ios::trunc);
    if (!jf) throw std::runtime_error("gen-data: cannot open " + jsonl_path);
    for (int i = 0; i < count; ++i) {
        std::uint64_t seed = saldet::dataset_scene_seed(base_seed, i);
        saldet::SyntheticScene scene = saldet::generate_scene(sp, seed);
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04d.pgm", i);
        saldet::write_pgm(out_dir + "/" + name, scene.image);
        json line;
        line["seed"] = seed;
        line["image"] = name;
        json objs = json::array();
        for (const saldet::GtObject& g : scene.objects)
            objs.push_back({{"box", {g.box.x0, g.box.y0, g.box.x1, g.box.y1}}, {"cls", g.cls}});
        line["objects"] = objs;
        jf << line.dump() << '\n';
    }
    std::printf("wrote %d scenes and %s\n", count, jsonl_path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"salient-point detection transformer: training, evaluation, and verification"};
    app.require_subcommand(1);

    auto* t = app.add_subcommand("train", "train a model from a config file");
    std::string config_path;
    std::vector<std::string> overrides;
    t->add_option("--config", config_path, "flat TOML run config")->required();
    t->add_option("--override", overrides, "key=value config override (repeatable)");

    auto* e = app.add_subcommand("eval", "evaluate a checkpoint on held-out scenes");
    std::string ckpt, seed_spec, mode = "normal";
    int min_objects = 1, max_objects = 3;
    double threshold = 0.3;
    e->add_option("--checkpoint", ckpt, "checkpoint path")->required();
    e->add_option("--seeds", seed_spec, "inclusive scene-seed range a..b")->required();
    e->add_option("--min-objects", min_objects, "objects per scene, lower bound");
    e->add_option("--max-objects", max_objects, "objects per scene, upper bound");
    e->add_option("--mode", mode, "scene mode: normal or slender");
    e->add_option("--threshold", threshold, "classification score threshold");

    auto* x = app.add_subcommand("export-attn", "export attention maps for chosen queries");
    std::string x_ckpt, x_mode = "normal", x_out = "attn_out";
    std::uint64_t x_scene_seed = 0;
    std::vector<int> x_queries;
    int x_layer = 0, x_min = 1, x_max = 3;
    x->add_option("--checkpoint", x_ckpt, "checkpoint path")->required();
    x->add_option("--scene-seed", x_scene_seed, "scene seed")->required();
    x->add_option("--queries", x_queries, "query ids")->required()->delimiter(',');
    x->add_option("--layer", x_layer, "decoder layer index")->required();
    x->add_option("--min-objects", x_min, "objects per scene, lower bound");
    x->add_option("--max-objects", x_max, "objects per scene, upper bound");
    x->add_option("--mode", x_mode, "scene mode: normal or slender");
    x->add_option("--out", x_out, "output directory");

    auto* v = app.add_subcommand("verify", "run a verification suite");
    std::string suite;
    v->add_option("--suite", suite, "pe-drift, matching, grads, ingrid, sdg, or all")->required();

    auto* g = app.add_subcommand("gen-data", "write a synthetic scene dataset");
    std::string g_out, g_mode = "normal";
    int g_count = 0, g_min = 1, g_max = 3, g_size = 64, g_classes = 2;
    std::uint64_t g_seed = 1;
    g->add_option("--out", g_out, "output directory")->required();
    g->add_option("--count", g_count, "number of scenes")->required()->check(CLI::PositiveNumber);
    g->add_option("--mode", g_mode, "scene mode: normal or slender");
    g->add_option("--seed", g_seed, "base seed for the dataset stream");
    g->add_option("--min-objects", g_min, "objects per scene, lower bound");
    g->add_option("--max-objects", g_max, "objects per scene, upper bound");
    g->add_option("--image-size", g_size, "square image side in pixels");
    g->add_option("--classes", g_classes, "number of object classes");

    try {
        app.parse(argc, argv);
        if (t->parsed()) return run_train(config_path, overrides);
        if (e->parsed()) return run_eval(ckpt, seed_spec, min_objects, max_objects, mode, threshold);
        if (x->parsed()) return run_export(x_ckpt, x_scene_seed, x_queries, x_layer, x_min, x_max, x_mode, x_out);
        if (v->parsed()) return run_verify(suite);
        if (g->parsed()) return run_gen_data(g_out, g_count, g_mode, g_seed, g_min, g_max, g_size, g_classes);
    } catch (const CLI::ParseError& err) {
        int code = app.exit(err);
        return code == 0 ? 0 : 2;
    } catch (const saldet::ConfigError& err) {
        std::fprintf(stderr, "config error: %s\n", err.what());
        return 2;
    } catch (const std::invalid_argument& err) {
        std::fprintf(stderr, "config error: %s\n", err.what());
        return 2;
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return 1;
    }
    return 0;
}
