#pragma once

#include "groundkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

namespace groundkit {

/// Integer pixel coordinate. Screenshots are pixel-addressed, so everything
/// stored is an integer; fractional values only appear transiently inside
/// distance computations.
struct Point {
    int x = 0;
    int y = 0;

    bool operator==(Point const &) const = default;
};

struct Size {
    int w = 0;
    int h = 0;

    bool operator==(Size const &) const = default;
};

/// Axis-aligned box given by its top-left (x1, y1) and bottom-right (x2, y2)
/// corners. Both boundaries are inclusive for point-membership tests.
struct BBox {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    int width() const { return x2 - x1; }
    int height() const { return y2 - y1; }
    double center_x() const { return (x1 + x2) / 2.0; }
    double center_y() const { return (y1 + y2) / 2.0; }
    double half_w() const { return (x2 - x1) / 2.0; }
    double half_h() const { return (y2 - y1) / 2.0; }

    bool operator==(BBox const &) const = default;
};

/// A sub-rectangle of an image: origin in image coordinates plus extent.
/// Its coordinate span for containment purposes is
/// [origin.x, origin.x + size.w] x [origin.y, origin.y + size.h].
struct CropWindow {
    Point origin;
    Size size;

    int x_max() const { return origin.x + size.w; }
    int y_max() const { return origin.y + size.h; }

    bool operator==(CropWindow const &) const = default;
};

/// Chebyshev (L-inf) distance of p from the center of b, normalized per axis
/// by the box's half-extents. 0 at the exact center, 1 on the boundary,
/// > 1 outside; well defined for points outside the box too.
///
/// A zero-extent axis only admits the center itself: the axis contributes 0
/// when the point sits exactly on the center line, otherwise the distance is
/// undefined and a DegenerateBoxError is raised.
inline double chebyshev_norm_dist(Point p, BBox const & b) {
    double const dx = std::abs(p.x - b.center_x());
    double const dy = std::abs(p.y - b.center_y());
    double const wh = b.half_w();
    double const hh = b.half_h();

    auto axis = [](double offset, double half, char const * name) -> double {
        if (half > 0.0)
            return offset / half;
        if (offset == 0.0)
            return 0.0;
        throw DegenerateBoxError(std::string("zero ") + name +
                                 "-extent box with off-center point");
    };

    return std::max(axis(dx, wh, "x"), axis(dy, hh, "y"));
}

/// Point membership with inclusive boundaries on all four sides.
inline bool contains(BBox const & b, Point p) {
    return p.x >= b.x1 && p.x <= b.x2 && p.y >= b.y1 && p.y <= b.y2;
}

/// True iff every corner of b lies inside w (inclusive).
inline bool bbox_contained_in_window(BBox const & b, CropWindow const & w) {
    return b.x1 >= w.origin.x && b.y1 >= w.origin.y &&
           b.x2 <= w.x_max() && b.y2 <= w.y_max();
}

/// Shift b into the local frame of a window anchored at origin.
inline BBox translate_bbox(BBox const & b, Point origin) {
    BBox out{b.x1 - origin.x, b.y1 - origin.y, b.x2 - origin.x, b.y2 - origin.y};
    if (out.x1 < 0 || out.y1 < 0)
        throw Error("translate_bbox: box not contained in window at given origin");
    return out;
}

/// Local-to-global coordinate remap; exact inverse of translation.
inline Point remap_point(Point p, Point origin) {
    return Point{p.x + origin.x, p.y + origin.y};
}

inline bool windows_intersect(CropWindow const & w, BBox const & b) {
    return !(b.x2 < w.origin.x || w.x_max() < b.x1 ||
             b.y2 < w.origin.y || w.y_max() < b.y1);
}

} // namespace groundkit
