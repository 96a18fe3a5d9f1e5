#pragma once

#include "saldet/geometry.hpp"
#include "saldet/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace saldet {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

// Sinusoidal encoding of one scalar: dim must be even; pair t (1-based,
// t = 1..dim/2) occupies channels (2(t-1), 2(t-1)+1) as (sin, cos) of
// 2*pi*pos * temperature^(-2t/dim). Lower temperature -> faster decay of the
// similarity lobe; channel pairs sweep from near-unit frequency down to 1/T.
struct PEConfig {
    int dim = 64;
    double temperature = 20.0;

    void validate() const {
        if (dim <= 0 || dim % 2 != 0)
            throw std::invalid_argument("PEConfig: dim must be positive and even, got " + std::to_string(dim));
        if (!(temperature > 0.0))
            throw std::invalid_argument("PEConfig: temperature must be positive");
    }

    // Frequency of 1-based pair index t.
    double omega(int t) const { return std::pow(temperature, -2.0 * t / dim); }
};

inline std::vector<double> encode_scalar(double pos, const PEConfig& cfg) {
    cfg.validate();
    std::vector<double> out(static_cast<size_t>(cfg.dim));
    double scaled = kTwoPi * pos;
    for (int t = 1; t <= cfg.dim / 2; ++t) {
        double angle = scaled * cfg.omega(t);
        out[static_cast<size_t>(2 * (t - 1))] = std::sin(angle);
        out[static_cast<size_t>(2 * (t - 1) + 1)] = std::cos(angle);
    }
    return out;
}

// Point encoding = concat(encode(x), encode(y)), 2*cfg.dim channels.
inline std::vector<double> encode_point(const Point2& p, const PEConfig& cfg) {
    std::vector<double> out = encode_scalar(p.x, cfg);
    std::vector<double> ey = encode_scalar(p.y, cfg);
    out.insert(out.end(), ey.begin(), ey.end());
    return out;
}

// Inner product of two scalar encodings in closed form:
// sum_t cos(omega_q(t) * 2 pi pos_q - omega_k(t) * 2 pi pos_k).
inline double pe_similarity(double pos_q, double pos_k, const PEConfig& q, const PEConfig& k) {
    q.validate();
    k.validate();
    if (q.dim != k.dim)
        throw std::invalid_argument("pe_similarity: dims disagree, " + std::to_string(q.dim) + " vs " +
                                    std::to_string(k.dim));
    double s = 0.0;
    for (int t = 1; t <= q.dim / 2; ++t)
        s += std::cos(kTwoPi * (q.omega(t) * pos_q - k.omega(t) * pos_k));
    return s;
}

// Key position whose pair-t phase matches the query's: (T_k/T_q)^(2t/dim) * pos_q.
// May fall outside [0, 1]; callers decide how to window it.
inline double predicted_center(double pos_q, int t, const PEConfig& q, const PEConfig& k) {
    q.validate();
    k.validate();
    if (q.dim != k.dim)
        throw std::invalid_argument("predicted_center: dims disagree");
    if (t < 1 || t > q.dim / 2)
        throw std::invalid_argument("predicted_center: pair index " + std::to_string(t) + " out of range 1.." +
                                    std::to_string(q.dim / 2));
    return std::pow(k.temperature / q.temperature, 2.0 * t / q.dim) * pos_q;
}

// Phase-matched similarity of the single pair t as the key slides; used to
// locate the lobe center of one frequency channel.
inline double pair_similarity(double pos_q, double pos_k, int t, const PEConfig& q, const PEConfig& k) {
    return std::cos(kTwoPi * (q.omega(t) * pos_q - k.omega(t) * pos_k));
}

// ---- batched encodings as tensors (attention-ready constants) -------------

// [n, 2*cfg.dim]: rows are point encodings.
inline Tensor encode_points(const std::vector<Point2>& pts, const PEConfig& cfg) {
    cfg.validate();
    Tensor out({static_cast<int>(pts.size()), 2 * cfg.dim});
    for (size_t i = 0; i < pts.size(); ++i) {
        std::vector<double> e = encode_point(pts[i], cfg);
        std::copy(e.begin(), e.end(), out.data() + static_cast<std::int64_t>(i) * out.size(1));
    }
    return out;
}

// [n, 4*cfg.dim]: rows encode the four absolute side coordinates of each box,
// (x - left, y - top, x + right, y + bottom) = (x0, y0, x1, y1), one scalar
// encoding per coordinate.
inline Tensor encode_box_corners(const std::vector<BoxXYXY>& boxes, const PEConfig& cfg) {
    cfg.validate();
    Tensor out({static_cast<int>(boxes.size()), 4 * cfg.dim});
    for (size_t i = 0; i < boxes.size(); ++i) {
        double* row = out.data() + static_cast<std::int64_t>(i) * out.size(1);
        const double coords[4] = {boxes[i].x0, boxes[i].y0, boxes[i].x1, boxes[i].y1};
        for (int c = 0; c < 4; ++c) {
            std::vector<double> e = encode_scalar(coords[c], cfg);
            std::copy(e.begin(), e.end(), row + c * cfg.dim);
        }
    }
    return out;
}

// resolution x resolution map of encode_point(pos_q) . encode_point(cell
// center); row index is y, column index is x, centers at (j+0.5)/resolution.
inline Tensor similarity_field(const Point2& pos_q, const PEConfig& cfg_q, const PEConfig& cfg_k, int resolution) {
    if (resolution < 2) throw std::invalid_argument("similarity_field: resolution must be >= 2");
    Tensor out({resolution, resolution});
    for (int i = 0; i < resolution; ++i) {
        double y = (i + 0.5) / resolution;
        for (int j = 0; j < resolution; ++j) {
            double x = (j + 0.5) / resolution;
            out(i, j) = pe_similarity(pos_q.x, x, cfg_q, cfg_k) + pe_similarity(pos_q.y, y, cfg_q, cfg_k);
        }
    }
    return out;
}

} // namespace saldet
