#pragma once

#include "saldet/matching.hpp"
#include "saldet/model.hpp"
#include "saldet/scene.hpp"

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace saldet {

// Raised for malformed or invalid configuration; the CLI maps it to exit 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct RunConfig {
    ModelConfig model;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    int warm_up = 400;
    int iterations = 2000;
    int batch_size = 8;
    std::uint64_t seed = 1;
    CostWeights cost;
    LossWeights loss;
    int min_objects = 1;
    int max_objects = 3;
    bool slender = false;
    int eval_scenes = 200;
    double cls_threshold = 0.3;
    std::string out_dir = "out";

    SceneParams scene_params() const {
        return {model.image_size, min_objects, max_objects, model.n_classes, slender};
    }

    void validate() const {
        model.validate();
        scene_params().validate();
        if (iterations < 0) throw ConfigError("RunConfig: iterations must be >= 0");
        if (warm_up < 0 || warm_up > iterations)
            throw ConfigError("RunConfig: warm_up must lie in [0, iterations]");
        if (batch_size < 1) throw ConfigError("RunConfig: batch_size must be >= 1");
        if (lr <= 0.0) throw ConfigError("RunConfig: lr must be positive");
        if (weight_decay < 0.0) throw ConfigError("RunConfig: weight_decay must be >= 0");
        if (eval_scenes < 0) throw ConfigError("RunConfig: eval_scenes must be >= 0");
        if (cls_threshold < 0.0 || cls_threshold > 1.0)
            throw ConfigError("RunConfig: cls_threshold must lie in [0, 1]");
        if (out_dir.empty()) throw ConfigError("RunConfig: out_dir must not be empty");
    }
};

namespace detail {

struct ConfigEntry {
    std::string key;
    std::string value;
    bool quoted = false;
    int line = 0;
};

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Flat TOML subset: `key = value` lines, `#` comments, quoted strings,
// bare numbers and booleans. Sections, arrays, and escapes are rejected —
// the run configuration is a single flat document by design.
inline std::vector<ConfigEntry> parse_flat_toml(std::istream& in, const std::string& origin) {
    std::vector<ConfigEntry> entries;
    std::map<std::string, int> seen;
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string where = origin + ":" + std::to_string(line);
        // strip comments outside quotes
        std::string s;
        char quote = 0;
        for (char c : raw) {
            if (quote == 0 && (c == '"' || c == '\'')) quote = c;
            else if (c == quote) quote = 0;
            if (c == '#' && quote == 0) break;
            s += c;
        }
        s = trim(s);
        if (s.empty()) continue;
        if (s[0] == '[') throw ConfigError(where + ": sections are not supported; use flat keys");
        size_t eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected `key = value`");
        ConfigEntry e;
        e.key = trim(s.substr(0, eq));
        e.line = line;
        if (e.key.empty()) throw ConfigError(where + ": empty key");
        for (char c : e.key)
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_')
                throw ConfigError(where + ": invalid key '" + e.key + "'");
        std::string v = trim(s.substr(eq + 1));
        if (v.empty()) throw ConfigError(where + ": empty value for '" + e.key + "'");
        if (v.front() == '"' || v.front() == '\'') {
            char q = v.front();
            if (v.size() < 2 || v.back() != q || v.find(q, 1) != v.size() - 1)
                throw ConfigError(where + ": malformed string for '" + e.key + "'");
            e.value = v.substr(1, v.size() - 2);
            e.quoted = true;
        } else {
            if (v.find(' ') != std::string::npos || v.find('\t') != std::string::npos)
                throw ConfigError(where + ": unquoted value with spaces for '" + e.key + "'");
            e.value = v;
        }
        auto it = seen.find(e.key);
        if (it != seen.end())
            throw ConfigError(where + ": duplicate key '" + e.key + "' (first set on line " +
                              std::to_string(it->second) + ")");
        seen[e.key] = line;
        entries.push_back(std::move(e));
    }
    return entries;
}

inline long long cfg_int(const ConfigEntry& e, const std::string& where) {
    char* end = nullptr;
    long long v = std::strtoll(e.value.c_str(), &end, 10);
    if (e.quoted || end == e.value.c_str() || *end != '\0')
        throw ConfigError(where + ": '" + e.key + "' expects an integer, got '" + e.value + "'");
    return v;
}

inline double cfg_double(const ConfigEntry& e, const std::string& where) {
    char* end = nullptr;
    double v = std::strtod(e.value.c_str(), &end);
    if (e.quoted || end == e.value.c_str() || *end != '\0')
        throw ConfigError(where + ": '" + e.key + "' expects a number, got '" + e.value + "'");
    return v;
}

inline bool cfg_bool(const ConfigEntry& e, const std::string& where) {
    if (!e.quoted && e.value == "true") return true;
    if (!e.quoted && e.value == "false") return false;
    throw ConfigError(where + ": '" + e.key + "' expects true or false, got '" + e.value + "'");
}

inline std::uint64_t cfg_u64(const ConfigEntry& e, const std::string& where) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(e.value.c_str(), &end, 10);
    if (e.quoted || end == e.value.c_str() || *end != '\0' || e.value[0] == '-')
        throw ConfigError(where + ": '" + e.key + "' expects a non-negative integer, got '" + e.value + "'");
    return v;
}

// One knob per reference-configuration key, same names. A few keys exist only
// for compatibility with that table: they are accepted and checked against
// the single supported value (this build has no backbone, mask head, or
// objectness head, and never applies dropout).
inline void apply_entry(RunConfig& cfg, const ConfigEntry& e, const std::string& origin) {
    std::string where = e.line > 0 ? origin + ":" + std::to_string(e.line) : origin;
    const std::string& k = e.key;
    if (k == "hidden_dim") cfg.model.model_dim = static_cast<int>(cfg_int(e, where));
    else if (k == "nheads") cfg.model.heads = static_cast<int>(cfg_int(e, where));
    else if (k == "enc_layers") cfg.model.encoder_layers = static_cast<int>(cfg_int(e, where));
    else if (k == "dec_layers") cfg.model.decoder_layers = static_cast<int>(cfg_int(e, where));
    else if (k == "dim_feedforward") cfg.model.ffn_dim = static_cast<int>(cfg_int(e, where));
    else if (k == "num_queries") cfg.model.n_queries = static_cast<int>(cfg_int(e, where));
    else if (k == "n_classes") cfg.model.n_classes = static_cast<int>(cfg_int(e, where));
    else if (k == "image_size") cfg.model.image_size = static_cast<int>(cfg_int(e, where));
    else if (k == "patch_size") cfg.model.patch_size = static_cast<int>(cfg_int(e, where));
    else if (k == "movable_enabled") cfg.model.movable_enabled = cfg_bool(e, where);
    else if (k == "sdg_enabled") cfg.model.sdg_enabled = cfg_bool(e, where);
    else if (k == "peca_enabled") cfg.model.peca_enabled = cfg_bool(e, where);
    else if (k == "k_pe_temp") cfg.model.temps.key = cfg_double(e, where);
    else if (k == "q_point_pe_temp") cfg.model.temps.point = cfg_double(e, where);
    else if (k == "q_bbox_pe_temp") cfg.model.temps.box = cfg_double(e, where);
    else if (k == "lr") cfg.lr = cfg_double(e, where);
    else if (k == "weight_decay") cfg.weight_decay = cfg_double(e, where);
    else if (k == "warm_up") cfg.warm_up = static_cast<int>(cfg_int(e, where));
    else if (k == "iterations") cfg.iterations = static_cast<int>(cfg_int(e, where));
    else if (k == "batch_size") cfg.batch_size = static_cast<int>(cfg_int(e, where));
    else if (k == "seed") cfg.seed = cfg_u64(e, where);
    else if (k == "class_loss") cfg.loss.cls = cfg_double(e, where);
    else if (k == "bbox_loss") cfg.loss.l1 = cfg_double(e, where);
    else if (k == "giou_loss") cfg.loss.giou = cfg_double(e, where);
    else if (k == "class_cost") cfg.cost.cls = cfg_double(e, where);
    else if (k == "bbox_cost") cfg.cost.l1 = cfg_double(e, where);
    else if (k == "giou_cost") cfg.cost.giou = cfg_double(e, where);
    else if (k == "inner_cost") cfg.cost.inner = cfg_double(e, where);
    else if (k == "focal_alpha") {
        double a = cfg_double(e, where);
        cfg.cost.focal_alpha = a;
        cfg.loss.focal_alpha = a;
    } else if (k == "focal_gamma") {
        double g = cfg_double(e, where);
        cfg.cost.focal_gamma = g;
        cfg.loss.focal_gamma = g;
    } else if (k == "min_objects") cfg.min_objects = static_cast<int>(cfg_int(e, where));
    else if (k == "max_objects") cfg.max_objects = static_cast<int>(cfg_int(e, where));
    else if (k == "scene_mode") {
        if (e.value == "normal") cfg.slender = false;
        else if (e.value == "slender") cfg.slender = true;
        else throw ConfigError(where + ": scene_mode must be \"normal\" or \"slender\", got '" + e.value + "'");
    } else if (k == "eval_scenes") cfg.eval_scenes = static_cast<int>(cfg_int(e, where));
    else if (k == "cls_threshold") cfg.cls_threshold = cfg_double(e, where);
    else if (k == "out_dir") {
        if (!e.quoted) throw ConfigError(where + ": out_dir must be a quoted string");
        cfg.out_dir = e.value;
    } else if (k == "dropout") {
        if (cfg_double(e, where) != 0.0) throw ConfigError(where + ": only dropout = 0.0 is supported");
    } else if (k == "transformer_activation") {
        if (e.value != "relu") throw ConfigError(where + ": only transformer_activation = \"relu\" is supported");
    } else if (k == "lr_backbone" || k == "mask_loss" || k == "obj_loss" || k == "obj_cost") {
        cfg_double(e, where); // accepted for table compatibility; no such component exists here
    } else {
        throw ConfigError(where + ": unknown key '" + k + "'");
    }
}

} // namespace detail

inline RunConfig parse_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(path + ": cannot open configuration file");
    RunConfig cfg;
    for (const detail::ConfigEntry& e : detail::parse_flat_toml(f, path)) detail::apply_entry(cfg, e, path);
    cfg.validate();
    return cfg;
}

// `key=value` command-line override, applied after the file.
inline void apply_override(RunConfig& cfg, const std::string& spec) {
    size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + spec + "': expected key=value");
    detail::ConfigEntry e;
    e.key = spec.substr(0, eq);
    std::string v = spec.substr(eq + 1);
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
        e.value = v.substr(1, v.size() - 2);
        e.quoted = true;
    } else {
        e.value = v;
        // bare strings are accepted on the command line for ergonomics
        e.quoted = (e.key == "out_dir");
    }
    detail::apply_entry(cfg, e, "override '" + spec + "'");
}

} // namespace saldet
