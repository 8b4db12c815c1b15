#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vecsketch/common.hpp"

namespace vecsketch {

struct Point2 {
    double x = 0.0, y = 0.0;

    Point2 operator+(Point2 o) const { return {x + o.x, y + o.y}; }
    Point2 operator-(Point2 o) const { return {x - o.x, y - o.y}; }
    Point2 operator*(double s) const { return {x * s, y * s}; }
    Point2& operator+=(Point2 o) {
        x += o.x;
        y += o.y;
        return *this;
    }
    bool operator==(const Point2&) const = default;
};
inline Point2 operator*(double s, Point2 p) { return p * s; }
inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 a) { return std::sqrt(dot(a, a)); }
inline double dist(Point2 a, Point2 b) { return norm(a - b); }
inline Point2 lerp(Point2 a, Point2 b, double t) { return a + (b - a) * t; }

struct CubicBezier {
    std::array<Point2, 4> p{};
};

// A stroke is a chain of cubic segments sharing endpoints: points.size() == 3k+1.
struct Stroke {
    std::vector<Point2> points;
    double width = 1.5;
    double opacity = 1.0;
    std::array<double, 3> color{0.0, 0.0, 0.0};

    std::size_t segment_count() const {
        return points.size() < 4 ? 0 : (points.size() - 1) / 3;
    }
    CubicBezier segment(std::size_t i) const {
        return CubicBezier{{points[3 * i], points[3 * i + 1], points[3 * i + 2], points[3 * i + 3]}};
    }
};

struct VectorSketch {
    int canvas_width = 0;
    int canvas_height = 0;
    std::vector<Stroke> strokes;
};

// Closed contour of chained cubics: points.size() == 3m, segment i wraps at the end.
struct Contour {
    std::vector<Point2> points;

    std::size_t segment_count() const { return points.size() / 3; }
    CubicBezier segment(std::size_t i) const {
        const std::size_t n = points.size();
        return CubicBezier{{points[3 * i], points[3 * i + 1], points[3 * i + 2], points[(3 * i + 3) % n]}};
    }
};

struct GlyphOutline {
    std::vector<Contour> contours;

    std::size_t control_point_count() const {
        std::size_t n = 0;
        for (const auto& c : contours) n += c.points.size();
        return n;
    }
};

struct Box2 {
    Point2 min, max;
    double width() const { return max.x - min.x; }
    double height() const { return max.y - min.y; }
    Point2 center() const { return {(min.x + max.x) * 0.5, (min.y + max.y) * 0.5}; }
};

struct Triangulation {
    std::vector<Point2> points;
    std::vector<std::array<int, 3>> triangles;
    // incident_angles[i]: interior angles at point i, one per incident triangle, in triangle order.
    std::vector<std::vector<double>> incident_angles;
};

// ---------------------------------------------------------------------------
// Cubic Bezier evaluation / splitting / length

inline Point2 evaluate_cubic(const CubicBezier& c, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("evaluate_cubic: t outside [0,1]");
    const double u = 1.0 - t;
    return c.p[0] * (u * u * u) + c.p[1] * (3.0 * u * u * t) + c.p[2] * (3.0 * u * t * t) + c.p[3] * (t * t * t);
}

inline Point2 cubic_derivative(const CubicBezier& c, double t) {
    const double u = 1.0 - t;
    return (c.p[1] - c.p[0]) * (3.0 * u * u) + (c.p[2] - c.p[1]) * (6.0 * u * t) + (c.p[3] - c.p[2]) * (3.0 * t * t);
}

inline std::pair<CubicBezier, CubicBezier> split_cubic(const CubicBezier& c, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("split_cubic: t outside [0,1]");
    const Point2 p01 = lerp(c.p[0], c.p[1], t);
    const Point2 p12 = lerp(c.p[1], c.p[2], t);
    const Point2 p23 = lerp(c.p[2], c.p[3], t);
    const Point2 p012 = lerp(p01, p12, t);
    const Point2 p123 = lerp(p12, p23, t);
    const Point2 m = lerp(p012, p123, t);
    return {CubicBezier{{c.p[0], p01, p012, m}}, CubicBezier{{m, p123, p23, c.p[3]}}};
}

namespace detail {

inline double point_segment_distance(Point2 x, Point2 a, Point2 b) {
    const Point2 ab = b - a;
    const double len2 = dot(ab, ab);
    if (len2 <= 0.0) return dist(x, a);
    const double t = std::clamp(dot(x - a, ab) / len2, 0.0, 1.0);
    return dist(x, a + ab * t);
}

inline bool flat_enough(const CubicBezier& c, double tol) {
    return point_segment_distance(c.p[1], c.p[0], c.p[3]) <= tol &&
           point_segment_distance(c.p[2], c.p[0], c.p[3]) <= tol;
}

inline void flatten_rec(const CubicBezier& c, double tol, int depth, std::vector<Point2>& out) {
    if (depth >= 24 || flat_enough(c, tol)) {
        out.push_back(c.p[3]);
        return;
    }
    auto [l, r] = split_cubic(c, 0.5);
    flatten_rec(l, tol, depth + 1, out);
    flatten_rec(r, tol, depth + 1, out);
}

}  // namespace detail

// Adaptive flattening: polyline within tol of the curve. First point included.
inline std::vector<Point2> flatten_adaptive(const CubicBezier& c, double tol = 1e-3) {
    if (!(tol > 0.0)) throw std::domain_error("flatten_adaptive: tol must be positive");
    std::vector<Point2> out{c.p[0]};
    detail::flatten_rec(c, tol, 0, out);
    return out;
}

// Polyline length after adaptive flattening; >= chord, non-decreasing as tol shrinks.
inline double arc_length(const CubicBezier& c, double tol = 1e-3) {
    const auto poly = flatten_adaptive(c, tol);
    double len = 0.0;
    for (std::size_t i = 1; i < poly.size(); ++i) len += dist(poly[i - 1], poly[i]);
    return len;
}

// ---------------------------------------------------------------------------
// Outline subdivision: repeatedly split the max-arc-length segment at t=0.5 until
// the stored control-point count reaches `target` (+3 points per split; ties go
// to the first segment in traversal order).
inline GlyphOutline subdivide_outline(GlyphOutline g, std::size_t target, double tol = 1e-3) {
    while (g.control_point_count() < target) {
        double max_len = -1.0;
        std::size_t best_c = 0, best_s = 0;
        for (std::size_t ci = 0; ci < g.contours.size(); ++ci)
            for (std::size_t si = 0; si < g.contours[ci].segment_count(); ++si) {
                const double len = arc_length(g.contours[ci].segment(si), tol);
                if (len > max_len) {
                    max_len = len;
                    best_c = ci;
                    best_s = si;
                }
            }
        if (max_len <= 0.0) throw std::domain_error("subdivide_outline: degenerate outline");
        Contour& c = g.contours[best_c];
        auto [l, r] = split_cubic(c.segment(best_s), 0.5);
        // replace stored triple (p0,h1,h2) of segment best_s with two triples
        const auto at = c.points.begin() + static_cast<std::ptrdiff_t>(3 * best_s);
        c.points.erase(at, at + 3);
        c.points.insert(c.points.begin() + static_cast<std::ptrdiff_t>(3 * best_s),
                        {l.p[0], l.p[1], l.p[2], r.p[0], r.p[1], r.p[2]});
    }
    return g;
}

// ---------------------------------------------------------------------------
// Bounding boxes / fitting

inline Box2 bbox_of_points(const std::vector<Point2>& pts) {
    if (pts.empty()) throw std::domain_error("bbox_of_points: empty");
    Box2 b{pts[0], pts[0]};
    for (const auto& p : pts) {
        b.min.x = std::min(b.min.x, p.x);
        b.min.y = std::min(b.min.y, p.y);
        b.max.x = std::max(b.max.x, p.x);
        b.max.y = std::max(b.max.y, p.y);
    }
    return b;
}

inline Box2 bbox(const GlyphOutline& g) {
    std::vector<Point2> all;
    for (const auto& c : g.contours) all.insert(all.end(), c.points.begin(), c.points.end());
    return bbox_of_points(all);
}

// Uniform scale + translation so the glyph's control bbox is inscribed in `target`
// with centers aligned. Idempotent.
inline GlyphOutline fit_into_box(GlyphOutline g, const Box2& target) {
    const Box2 b = bbox(g);
    const double gw = b.width(), gh = b.height();
    if (gw <= 0.0 && gh <= 0.0) throw std::domain_error("fit_into_box: degenerate glyph bbox");
    double s = std::numeric_limits<double>::infinity();
    if (gw > 0.0) s = std::min(s, target.width() / gw);
    if (gh > 0.0) s = std::min(s, target.height() / gh);
    const Point2 gc = b.center(), tc = target.center();
    for (auto& c : g.contours)
        for (auto& p : c.points) p = tc + (p - gc) * s;
    return g;
}

// ---------------------------------------------------------------------------
// Constrained Delaunay triangulation (Bowyer-Watson + constraint edge flipping).
// Double-precision predicates; exactly collinear inputs are jittered by 1e-9
// (the returned points carry the jitter so downstream angles stay consistent).

namespace detail {

inline double orient2d(Point2 a, Point2 b, Point2 c) { return cross(b - a, c - a); }

inline bool in_circumcircle(Point2 a, Point2 b, Point2 c, Point2 d) {
    // assumes a,b,c counter-clockwise; > 0 when d strictly inside
    const double ax = a.x - d.x, ay = a.y - d.y;
    const double bx = b.x - d.x, by = b.y - d.y;
    const double cx = c.x - d.x, cy = c.y - d.y;
    const double det = (ax * ax + ay * ay) * (bx * cy - cx * by) -
                       (bx * bx + by * by) * (ax * cy - cx * ay) +
                       (cx * cx + cy * cy) * (ax * by - bx * ay);
    return det > 0.0;
}

inline bool segments_cross(Point2 a, Point2 b, Point2 c, Point2 d) {
    // proper intersection only (shared endpoints don't count)
    const double d1 = orient2d(c, d, a), d2 = orient2d(c, d, b);
    const double d3 = orient2d(a, b, c), d4 = orient2d(a, b, d);
    return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

struct EdgeKey {
    int a, b;
    EdgeKey(int i, int j) : a(std::min(i, j)), b(std::max(i, j)) {}
    bool operator<(const EdgeKey& o) const { return a != o.a ? a < o.a : b < o.b; }
};

}  // namespace detail

inline Triangulation triangulate_constrained(std::vector<Point2> points,
                                             const std::vector<std::array<int, 2>>& boundary_edges) {
    using detail::EdgeKey;
    const int n = static_cast<int>(points.size());
    if (n < 3) throw std::domain_error("triangulate_constrained: need at least 3 points");
    for (const auto& e : boundary_edges)
        if (e[0] < 0 || e[0] >= n || e[1] < 0 || e[1] >= n || e[0] == e[1])
            throw std::invalid_argument("triangulate_constrained: bad boundary edge");
    for (std::size_t i = 0; i < boundary_edges.size(); ++i)
        for (std::size_t j = i + 1; j < boundary_edges.size(); ++j)
            if (detail::segments_cross(points[boundary_edges[i][0]], points[boundary_edges[i][1]],
                                       points[boundary_edges[j][0]], points[boundary_edges[j][1]]))
                throw std::invalid_argument("triangulate_constrained: crossing boundary edges");

    Box2 b = bbox_of_points(points);
    const double span = std::max({b.width(), b.height(), 1.0});
    bool line_like = true;
    for (int i = 0; i < n && line_like; ++i)
        for (int j = i + 1; j < n && line_like; ++j)
            for (int k = j + 1; k < n; ++k)
                if (std::abs(detail::orient2d(points[i], points[j], points[k])) > 1e-9 * span * span) {
                    line_like = false;
                    break;
                }
    if (line_like) throw std::domain_error("triangulate_constrained: all points collinear");

    // deterministic jitter when any triple is exactly collinear (or points coincide)
    bool degenerate = false;
    for (int i = 0; i < n && !degenerate; ++i)
        for (int j = i + 1; j < n && !degenerate; ++j) {
            if (points[i] == points[j]) degenerate = true;
            for (int k = j + 1; k < n && !degenerate; ++k)
                if (detail::orient2d(points[i], points[j], points[k]) == 0.0) degenerate = true;
        }
    if (degenerate) {
        for (int i = 0; i < n; ++i) {
            const std::uint64_t h = splitmix64(0x7157a5ull + std::uint64_t(i));
            points[i].x += 1e-9 * (double(h & 0xffff) / 65535.0 - 0.5);
            points[i].y += 1e-9 * (double((h >> 16) & 0xffff) / 65535.0 - 0.5);
        }
    }

    // Bowyer-Watson with a super-triangle
    std::vector<Point2> pts = points;
    const Point2 c = b.center();
    const double r = 16.0 * span;
    pts.push_back({c.x - 2.0 * r, c.y - r});
    pts.push_back({c.x + 2.0 * r, c.y - r});
    pts.push_back({c.x, c.y + 2.0 * r});
    const int s0 = n, s1 = n + 1, s2 = n + 2;

    auto ccw = [&](std::array<int, 3>& t) {
        if (detail::orient2d(pts[t[0]], pts[t[1]], pts[t[2]]) < 0.0) std::swap(t[1], t[2]);
    };
    std::vector<std::array<int, 3>> tris{{s0, s1, s2}};
    ccw(tris[0]);

    for (int ip = 0; ip < n; ++ip) {
        const Point2 p = pts[ip];
        std::vector<std::array<int, 3>> keep;
        std::map<EdgeKey, int> edge_use;
        std::vector<std::array<int, 2>> cavity;
        for (auto& t : tris) {
            if (detail::in_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], p)) {
                for (int e = 0; e < 3; ++e) {
                    EdgeKey k(t[e], t[(e + 1) % 3]);
                    edge_use[k] += 1;
                }
            } else {
                keep.push_back(t);
            }
        }
        for (auto& t : tris) {
            if (!detail::in_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], p)) continue;
            for (int e = 0; e < 3; ++e) {
                int a = t[e], bb = t[(e + 1) % 3];
                if (edge_use[EdgeKey(a, bb)] == 1) cavity.push_back({a, bb});
            }
        }
        tris = std::move(keep);
        for (auto& e : cavity) {
            std::array<int, 3> t{e[0], e[1], ip};
            ccw(t);
            tris.push_back(t);
        }
    }
    // drop super-triangle incidents
    std::erase_if(tris, [&](const std::array<int, 3>& t) {
        return t[0] >= n || t[1] >= n || t[2] >= n;
    });

    // enforce constraint edges by flipping crossing diagonals (Sloan-style)
    auto edge_present = [&](int a, int bb) {
        for (const auto& t : tris)
            for (int e = 0; e < 3; ++e)
                if ((t[e] == a && t[(e + 1) % 3] == bb) || (t[e] == bb && t[(e + 1) % 3] == a)) return true;
        return false;
    };
    auto find_tri_pair = [&](int a, int bb) -> std::array<int, 2> {
        std::array<int, 2> out{-1, -1};
        int found = 0;
        for (int ti = 0; ti < static_cast<int>(tris.size()); ++ti)
            for (int e = 0; e < 3; ++e) {
                int u = tris[ti][e], v = tris[ti][(e + 1) % 3];
                if ((u == a && v == bb) || (u == bb && v == a)) out[found++] = ti;
            }
        return found == 2 ? out : std::array<int, 2>{-1, -1};
    };
    auto flip = [&](int a, int bb) -> bool {
        auto pr = find_tri_pair(a, bb);
        if (pr[0] < 0) return false;
        auto other = [&](const std::array<int, 3>& t) {
            for (int v : t)
                if (v != a && v != bb) return v;
            return -1;
        };
        int c1 = other(tris[pr[0]]), c2 = other(tris[pr[1]]);
        // flippable only if quad (a,c1,bb,c2) is strictly convex
        if (!detail::segments_cross(pts[a], pts[bb], pts[c1], pts[c2])) return false;
        std::array<int, 3> t1{c1, c2, a}, t2{c1, c2, bb};
        ccw(t1);
        ccw(t2);
        tris[pr[0]] = t1;
        tris[pr[1]] = t2;
        return true;
    };

    std::set<EdgeKey> constrained;
    for (const auto& be : boundary_edges) {
        const int a = be[0], bb = be[1];
        constrained.insert(EdgeKey(a, bb));
        int guard = 0;
        while (!edge_present(a, bb)) {
            bool flipped = false;
            for (int ti = 0; ti < static_cast<int>(tris.size()) && !flipped; ++ti) {
                const auto& t = tris[ti];
                for (int e = 0; e < 3 && !flipped; ++e) {
                    int u = t[e], v = t[(e + 1) % 3];
                    if (u == a || u == bb || v == a || v == bb) continue;
                    if (constrained.count(EdgeKey(u, v))) continue;
                    if (detail::segments_cross(pts[a], pts[bb], pts[u], pts[v])) flipped = flip(u, v);
                }
            }
            if (!flipped || ++guard > 4 * n * n)
                throw NumericError("triangulate_constrained: failed to enforce boundary edge");
        }
    }

    // restore local Delaunay away from constrained edges
    for (int pass = 0; pass < 8; ++pass) {
        bool any = false;
        std::set<EdgeKey> seen;
        for (const auto& t : tris)
            for (int e = 0; e < 3; ++e) seen.insert(EdgeKey(t[e], t[(e + 1) % 3]));
        for (const auto& k : seen) {
            if (constrained.count(k)) continue;
            auto pr = find_tri_pair(k.a, k.b);
            if (pr[0] < 0) continue;
            auto other = [&](const std::array<int, 3>& t) {
                for (int v : t)
                    if (v != k.a && v != k.b) return v;
                return -1;
            };
            int c1 = other(tris[pr[0]]), c2 = other(tris[pr[1]]);
            if (detail::in_circumcircle(pts[tris[pr[0]][0]], pts[tris[pr[0]][1]], pts[tris[pr[0]][2]], pts[c2]) ||
                detail::in_circumcircle(pts[tris[pr[1]][0]], pts[tris[pr[1]][1]], pts[tris[pr[1]][2]], pts[c1]))
                any = flip(k.a, k.b) || any;
        }
        if (!any) break;
    }

    Triangulation out;
    out.points = points;
    out.triangles = tris;
    out.incident_angles.assign(n, {});
    for (const auto& t : tris)
        for (int e = 0; e < 3; ++e) {
            const Point2 aP = points[t[e]], bP = points[t[(e + 1) % 3]], cP = points[t[(e + 2) % 3]];
            const Point2 u = bP - aP, v = cP - aP;
            out.incident_angles[t[e]].push_back(std::atan2(std::abs(cross(u, v)), dot(u, v)));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Glyph outline text format. One segment per line as 8 coordinates
// "x0 y0 x1 y1 x2 y2 x3 y3"; a line reading "contour" opens a new contour;
// '#' starts a comment. Segments must chain (x3,y3 of one line equals x0,y0
// of the next, wrapping at the end of the contour) within 1e-6.

inline void write_glyph_outline(std::ostream& os, const GlyphOutline& g) {
    os << std::fixed << std::setprecision(8);
    for (const auto& c : g.contours) {
        os << "contour\n";
        for (std::size_t s = 0; s < c.segment_count(); ++s) {
            const CubicBezier b = c.segment(s);
            for (int j = 0; j < 4; ++j) os << b.p[j].x << ' ' << b.p[j].y << (j == 3 ? '\n' : ' ');
        }
    }
}

inline GlyphOutline read_glyph_outline(std::istream& is) {
    constexpr double kChainTol = 1e-6;
    GlyphOutline g;
    std::vector<std::array<Point2, 4>> segs;  // current contour
    int line_no = 0;
    auto fail = [&](const std::string& what) {
        throw ConfigError("glyph outline line " + std::to_string(line_no) + ": " + what);
    };
    auto close_contour = [&] {
        if (segs.empty()) fail("empty contour");
        Contour c;
        for (std::size_t i = 0; i < segs.size(); ++i) {
            const auto& nxt = segs[(i + 1) % segs.size()];
            if (dist(segs[i][3], nxt[0]) > kChainTol) fail("segments do not chain into a closed contour");
            c.points.insert(c.points.end(), {segs[i][0], segs[i][1], segs[i][2]});
        }
        g.contours.push_back(std::move(c));
        segs.clear();
    };
    bool in_contour = false;
    std::string line;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string first;
        if (!(ls >> first)) continue;  // blank
        if (first == "contour") {
            if (in_contour) close_contour();
            in_contour = true;
            continue;
        }
        if (!in_contour) fail("expected 'contour' before segment lines");
        std::array<Point2, 4> seg;
        std::istringstream nums(line);
        for (int j = 0; j < 4; ++j)
            if (!(nums >> seg[j].x >> seg[j].y)) fail("expected 8 coordinates");
        double extra;
        if (nums >> extra) fail("trailing values after 8 coordinates");
        segs.push_back(seg);
    }
    if (in_contour) close_contour();
    if (g.contours.empty()) throw ConfigError("glyph outline: no contours");
    return g;
}

}  // namespace vecsketch
