#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace saldet {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// Distances from a reference point to the four box sides, all non-negative.
struct SideDistances {
    double left = 0.0;
    double top = 0.0;
    double right = 0.0;
    double bottom = 0.0;

    double operator[](int i) const {
        switch (i) {
            case 0: return left;
            case 1: return top;
            case 2: return right;
            case 3: return bottom;
        }
        throw std::out_of_range("SideDistances: index " + std::to_string(i));
    }
};

// Axis-aligned box in normalized corner form; valid iff x0 <= x1 and y0 <= y1.
struct BoxXYXY {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 0.0;
    double y1 = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
    Point2 center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }
    bool valid() const { return x1 >= x0 && y1 >= y0; }
};

// One cell of the query mesh grid; owns the half-open region
// [origin.x, origin.x + extent_x) x [origin.y, origin.y + extent_y).
struct GridCell {
    Point2 origin;
    double extent_x = 0.0;
    double extent_y = 0.0;

    bool contains(const Point2& p) const {
        return p.x >= origin.x && p.x < origin.x + extent_x && p.y >= origin.y && p.y < origin.y + extent_y;
    }
};

inline void require_valid(const BoxXYXY& b, const char* op) {
    if (!b.valid())
        throw std::invalid_argument(std::string(op) + ": invalid box (" + std::to_string(b.x0) + "," +
                                    std::to_string(b.y0) + "," + std::to_string(b.x1) + "," +
                                    std::to_string(b.y1) + ")");
}

// Box spanned by a reference point and its four side distances.
inline BoxXYXY box_from_point_sides(const Point2& p, const SideDistances& s) {
    return {p.x - s.left, p.y - s.top, p.x + s.right, p.y + s.bottom};
}

// Side distances from a point to each side of a box containing it (negative
// components signal the point lies outside the corresponding side).
inline SideDistances sides_from_point_box(const Point2& p, const BoxXYXY& b) {
    return {p.x - b.x0, p.y - b.y0, b.x1 - p.x, b.y1 - p.y};
}

// Boundary-inclusive point membership.
inline bool box_contains(const BoxXYXY& b, const Point2& p) {
    return p.x >= b.x0 && p.x <= b.x1 && p.y >= b.y0 && p.y <= b.y1;
}

inline double intersection_area(const BoxXYXY& a, const BoxXYXY& b) {
    double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (w <= 0.0 || h <= 0.0) return 0.0;
    return w * h;
}

// Intersection over union; degenerate pairs (zero union) yield 0.
inline double box_iou(const BoxXYXY& a, const BoxXYXY& b) {
    require_valid(a, "box_iou");
    require_valid(b, "box_iou");
    double inter = intersection_area(a, b);
    double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

// Generalized IoU: iou minus the fraction of the smallest enclosing box not
// covered by the union. Range [-1, 1]; degenerate enclosing area yields iou.
inline double box_giou(const BoxXYXY& a, const BoxXYXY& b) {
    require_valid(a, "box_giou");
    require_valid(b, "box_giou");
    double inter = intersection_area(a, b);
    double uni = a.area() + b.area() - inter;
    double ew = std::max(a.x1, b.x1) - std::min(a.x0, b.x0);
    double eh = std::max(a.y1, b.y1) - std::min(a.y0, b.y0);
    double enc = ew * eh;
    double iou = uni <= 0.0 ? 0.0 : inter / uni;
    if (enc <= 0.0) return iou;
    return iou - (enc - uni) / enc;
}

inline BoxXYXY clip_box(const BoxXYXY& b, double lo = 0.0, double hi = 1.0) {
    return {std::clamp(b.x0, lo, hi), std::clamp(b.y0, lo, hi), std::clamp(b.x1, lo, hi), std::clamp(b.y1, lo, hi)};
}

} // namespace saldet
