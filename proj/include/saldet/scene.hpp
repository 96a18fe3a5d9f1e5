#pragma once

#include "saldet/geometry.hpp"
#include "saldet/matching.hpp"
#include "saldet/rng.hpp"
#include "saldet/tensor.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace saldet {

struct SceneParams {
    int image_size = 64;
    int min_objects = 1;
    int max_objects = 3;
    int n_classes = 2;
    bool slender = false; // high-aspect boxes with one side below a grid cell

    void validate() const {
        if (image_size < 8) throw std::invalid_argument("SceneParams: image_size must be >= 8");
        if (min_objects < 1 || max_objects > 5 || min_objects > max_objects)
            throw std::invalid_argument("SceneParams: object count range must satisfy 1 <= min <= max <= 5");
        if (n_classes < 2) throw std::invalid_argument("SceneParams: need at least 2 classes");
    }
};

struct SyntheticScene {
    Tensor image; // [S, S] grayscale in [0,1], row i = y, column j = x
    std::vector<GtObject> objects;
    std::uint64_t seed = 0;
};

// Fill level for a class: evenly spread over [0.55, 0.95], clear of the
// background band so class identity survives the rendering noise.
inline double class_intensity(int cls, int n_classes) {
    return 0.55 + 0.4 * static_cast<double>(cls) / static_cast<double>(n_classes - 1);
}

namespace detail {

inline BoxXYXY draw_box(Rng& rng, bool slender) {
    double w, h;
    if (slender) {
        // aspect ratio >= 6 with the short side at most one 8x8-grid cell
        double short_side = rng.uniform(0.04, 0.12);
        double long_side = std::min(0.95, short_side * rng.uniform(6.0, 9.0));
        bool vertical = rng.bernoulli(0.5);
        w = vertical ? short_side : long_side;
        h = vertical ? long_side : short_side;
    } else {
        w = rng.uniform(0.18, 0.55);
        h = rng.uniform(0.18, 0.55);
    }
    double cx = rng.uniform(w / 2 + 0.01, 1.0 - w / 2 - 0.01);
    double cy = rng.uniform(h / 2 + 0.01, 1.0 - h / 2 - 0.01);
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

} // namespace detail

// Deterministic synthetic scene: filled rectangles (fill intensity encodes the
// class) over a smoothly varying noise background. Placement rejects heavy
// overlap a few times, then accepts it — crowded scenes are in-distribution,
// the cap only keeps them rare.
inline SyntheticScene generate_scene(const SceneParams& p, std::uint64_t seed) {
    p.validate();
    Rng rng(mix_seed(seed, 0x5ce9e5ull));
    SyntheticScene out;
    out.seed = seed;

    int count = rng.uniform_int(p.min_objects, p.max_objects);
    for (int i = 0; i < count; ++i) {
        BoxXYXY box{};
        for (int attempt = 0; attempt < 64; ++attempt) {
            box = detail::draw_box(rng, p.slender);
            bool clear = true;
            for (const GtObject& g : out.objects)
                if (box_iou(box, g.box) > 0.4) clear = false;
            if (clear) break;
        }
        out.objects.push_back({box, rng.uniform_int(0, p.n_classes - 1)});
    }

    // background: coarse random lattice, bilinearly interpolated, plus jitter
    int s = p.image_size;
    const int lattice = 9;
    std::vector<double> base(lattice * lattice);
    for (double& v : base) v = rng.uniform(0.05, 0.30);
    out.image = Tensor({s, s});
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) {
            double fy = (i + 0.5) / s * (lattice - 1);
            double fx = (j + 0.5) / s * (lattice - 1);
            int y0 = std::min(static_cast<int>(fy), lattice - 2);
            int x0 = std::min(static_cast<int>(fx), lattice - 2);
            double ty = fy - y0, tx = fx - x0;
            double v = base[y0 * lattice + x0] * (1 - ty) * (1 - tx) +
                       base[y0 * lattice + x0 + 1] * (1 - ty) * tx +
                       base[(y0 + 1) * lattice + x0] * ty * (1 - tx) +
                       base[(y0 + 1) * lattice + x0 + 1] * ty * tx;
            out.image(i, j) = std::clamp(v + rng.uniform(-0.02, 0.02), 0.0, 1.0);
        }

    // paint large to small so small/slender objects stay visible on top
    std::vector<size_t> order(out.objects.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return out.objects[a].box.area() > out.objects[b].box.area();
    });
    for (size_t oi : order) {
        const GtObject& g = out.objects[oi];
        double fill = class_intensity(g.cls, p.n_classes);
        for (int i = 0; i < s; ++i) {
            double y = (i + 0.5) / s;
            if (y < g.box.y0 || y > g.box.y1) continue;
            for (int j = 0; j < s; ++j) {
                double x = (j + 0.5) / s;
                if (x < g.box.x0 || x > g.box.x1) continue;
                out.image(i, j) = std::clamp(fill + rng.uniform(-0.03, 0.03), 0.0, 1.0);
            }
        }
    }
    return out;
}

} // namespace saldet
