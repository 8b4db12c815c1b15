#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vecsketch/geometry.hpp"

using namespace vecsketch;

namespace {

// Oracle: recursive de Casteljau point evaluation (no Bernstein algebra shared
// with the implementation).
Point2 decasteljau_oracle(const CubicBezier& c, double t) {
    std::vector<Point2> pts(c.p.begin(), c.p.end());
    while (pts.size() > 1) {
        std::vector<Point2> next;
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) next.push_back(lerp(pts[i], pts[i + 1], t));
        pts = next;
    }
    return pts[0];
}

// Oracle: composite-Simpson quadrature of |B'(t)|.
double quadrature_length(const CubicBezier& c, int intervals = 4096) {
    auto speed = [&](double t) { return norm(cubic_derivative(c, t)); };
    double s = 0.0;
    const double h = 1.0 / intervals;
    for (int i = 0; i < intervals; ++i) {
        const double a = i * h, m = a + 0.5 * h, b = a + h;
        s += (h / 6.0) * (speed(a) + 4.0 * speed(m) + speed(b));
    }
    return s;
}

CubicBezier random_cubic(RandomStream& rng, double lo = -5.0, double hi = 5.0) {
    CubicBezier c;
    for (auto& p : c.p) p = {rng.uniform(lo, hi), rng.uniform(lo, hi)};
    return c;
}

struct Circumcircle {
    Point2 center;
    double r2;
};

Circumcircle circumcircle_oracle(Point2 a, Point2 b, Point2 c) {
    const double d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    const double a2 = dot(a, a), b2 = dot(b, b), c2 = dot(c, c);
    Point2 u{(a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d,
             (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d};
    return {u, dot(a - u, a - u)};
}

}  // namespace

TEST_CASE("cubic evaluation matches de Casteljau oracle") {
    RandomStream rng(101);
    for (int k = 0; k < 50; ++k) {
        const CubicBezier c = random_cubic(rng);
        for (int i = 0; i <= 20; ++i) {
            const double t = i / 20.0;
            const Point2 a = evaluate_cubic(c, t), b = decasteljau_oracle(c, t);
            REQUIRE(dist(a, b) < 1e-12);
        }
    }
}

TEST_CASE("cubic evaluation endpoints are exact") {
    RandomStream rng(102);
    for (int k = 0; k < 50; ++k) {
        const CubicBezier c = random_cubic(rng);
        const Point2 a = evaluate_cubic(c, 0.0), b = evaluate_cubic(c, 1.0);
        REQUIRE(a.x == c.p[0].x);
        REQUIRE(a.y == c.p[0].y);
        REQUIRE(b.x == c.p[3].x);
        REQUIRE(b.y == c.p[3].y);
    }
}

TEST_CASE("cubic evaluation rejects t outside [0,1]") {
    const CubicBezier c{{Point2{0, 0}, Point2{1, 0}, Point2{2, 0}, Point2{3, 0}}};
    REQUIRE_THROWS_AS(evaluate_cubic(c, -0.01), std::domain_error);
    REQUIRE_THROWS_AS(evaluate_cubic(c, 1.01), std::domain_error);
    REQUIRE_THROWS_AS(evaluate_cubic(c, std::nan("")), std::domain_error);
}

TEST_CASE("split at 0.5 reproduces the frozen de Casteljau example") {
    const CubicBezier c{{Point2{0, 0}, Point2{0, 1}, Point2{1, 1}, Point2{1, 0}}};
    const auto [l, r] = split_cubic(c, 0.5);
    const std::array<Point2, 4> expect_left{Point2{0, 0}, Point2{0, 0.5}, Point2{0.25, 0.75}, Point2{0.5, 0.75}};
    for (int i = 0; i < 4; ++i) REQUIRE(dist(l.p[i], expect_left[i]) < 1e-15);
    REQUIRE(dist(r.p[0], Point2{0.5, 0.75}) < 1e-15);
    REQUIRE(dist(r.p[3], Point2{1, 0}) < 1e-15);
}

TEST_CASE("split halves trace the same curve under dense sampling") {
    RandomStream rng(103);
    for (int k = 0; k < 30; ++k) {
        const CubicBezier c = random_cubic(rng);
        const double ts = rng.uniform(0.1, 0.9);
        const auto [l, r] = split_cubic(c, ts);
        double worst = 0.0;
        for (int i = 0; i <= 400; ++i) {
            const double t = i / 400.0;
            const Point2 ref = evaluate_cubic(c, t);
            const Point2 got = (t <= ts) ? evaluate_cubic(l, ts > 0 ? t / ts : 0.0)
                                         : evaluate_cubic(r, (t - ts) / (1.0 - ts));
            worst = std::max(worst, dist(ref, got));
        }
        REQUIRE(worst < 1e-9);
    }
}

TEST_CASE("arc length: straight chain is exact") {
    const CubicBezier c{{Point2{0, 0}, Point2{1, 1}, Point2{2, 2}, Point2{3, 3}}};
    REQUIRE(arc_length(c, 1e-4) == Catch::Approx(3.0 * std::sqrt(2.0)).margin(1e-9));
}

TEST_CASE("arc length: quarter-circle kappa construction near pi/2, agrees with quadrature") {
    const double kappa = 0.5522847498307936;
    const CubicBezier c{{Point2{1, 0}, Point2{1, kappa}, Point2{kappa, 1}, Point2{0, 1}}};
    const double quad = quadrature_length(c);
    REQUIRE(std::abs(quad - M_PI / 2.0) < 1e-3);
    REQUIRE(std::abs(arc_length(c, 1e-5) - quad) < 1e-3);
}

TEST_CASE("arc length: monotone non-decreasing as tol shrinks, >= chord") {
    RandomStream rng(104);
    for (int k = 0; k < 30; ++k) {
        const CubicBezier c = random_cubic(rng);
        const double l1 = arc_length(c, 1e-1), l2 = arc_length(c, 1e-2), l3 = arc_length(c, 1e-3),
                     l4 = arc_length(c, 1e-4);
        REQUIRE(l1 <= l2 + 1e-12);
        REQUIRE(l2 <= l3 + 1e-12);
        REQUIRE(l3 <= l4 + 1e-12);
        REQUIRE(l4 + 1e-12 >= dist(c.p[0], c.p[3]));
        REQUIRE(std::abs(l4 - quadrature_length(c)) < 1e-2);
    }
}

TEST_CASE("outline subdivision: single closed segment splits into two sharing the midpoint") {
    // closed loop of one cubic (3 stored points, wraps to p0)
    Contour loop;
    loop.points = {Point2{0, 0}, Point2{2, 0}, Point2{2, 2}};
    GlyphOutline g{{loop}};
    REQUIRE(g.control_point_count() == 3);
    const CubicBezier orig = loop.segment(0);
    const Point2 mid = evaluate_cubic(orig, 0.5);

    const GlyphOutline out = subdivide_outline(g, 4);
    REQUIRE(out.contours.size() == 1);
    REQUIRE(out.contours[0].segment_count() == 2);
    REQUIRE(out.control_point_count() == 6);
    const CubicBezier s0 = out.contours[0].segment(0), s1 = out.contours[0].segment(1);
    REQUIRE(dist(s0.p[3], mid) < 1e-12);
    REQUIRE(dist(s1.p[0], mid) < 1e-12);
    REQUIRE(dist(s1.p[3], orig.p[0]) < 1e-12);
}

TEST_CASE("outline subdivision reaches the target and preserves the traced curve") {
    // rounded-square loop, 4 segments (12 stored points)
    const double k = 0.55;
    Contour loop;
    loop.points = {Point2{0, 0}, Point2{k, 0},  Point2{1 - k, 0}, Point2{1, 0}, Point2{1, k},  Point2{1, 1 - k},
                   Point2{1, 1}, Point2{1 - k, 1}, Point2{k, 1},  Point2{0, 1}, Point2{0, 1 - k}, Point2{0, k}};
    GlyphOutline g{{loop}};
    const std::size_t before = g.control_point_count();
    REQUIRE(before == 12);

    const GlyphOutline out = subdivide_outline(g, 30);
    const std::size_t after = out.control_point_count();
    REQUIRE(after >= 30);
    // one split per pass, +3 stored points each, so overshoot < 3
    REQUIRE(after < 33);

    // geometric drift: dense samples of the original outline stay on the subdivided one
    for (int i = 0; i <= 64; ++i) {
        const Point2 ref = evaluate_cubic(loop.segment(0), i / 64.0);
        double best = 1e9;
        for (const auto& c2 : out.contours)
            for (std::size_t s = 0; s < c2.segment_count(); ++s) {
                Point2 prev = evaluate_cubic(c2.segment(s), 0.0);
                for (int j = 1; j <= 64; ++j) {
                    const Point2 cur = evaluate_cubic(c2.segment(s), j / 64.0);
                    best = std::min(best, detail::point_segment_distance(ref, prev, cur));
                    prev = cur;
                }
            }
        REQUIRE(best < 1e-4);
    }
}

TEST_CASE("triangulation: unit square with boundary gives two right triangles") {
    const std::vector<Point2> pts{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    const std::vector<std::array<int, 2>> edges{{0, 1}, {1, 2}, {2, 3}, {3, 0}};
    const Triangulation tri = triangulate_constrained(pts, edges);
    REQUIRE(tri.triangles.size() == 2);
    for (const auto& t : tri.triangles) {
        std::vector<double> ang;
        for (int e = 0; e < 3; ++e) {
            const Point2 a = tri.points[t[e]], b = tri.points[t[(e + 1) % 3]], c = tri.points[t[(e + 2) % 3]];
            ang.push_back(std::atan2(std::abs(cross(b - a, c - a)), dot(b - a, c - a)));
        }
        std::sort(ang.begin(), ang.end());
        REQUIRE(ang[0] == Catch::Approx(M_PI / 4).margin(1e-6));
        REQUIRE(ang[1] == Catch::Approx(M_PI / 4).margin(1e-6));
        REQUIRE(ang[2] == Catch::Approx(M_PI / 2).margin(1e-6));
    }
}

TEST_CASE("triangulation: empty-circumcircle property, brute force") {
    RandomStream rng(105);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<Point2> pts;
        for (int i = 0; i < 30; ++i) pts.push_back({rng.uniform(0, 10), rng.uniform(0, 10)});
        const Triangulation tri = triangulate_constrained(pts, {});
        for (const auto& t : tri.triangles) {
            const auto cc = circumcircle_oracle(tri.points[t[0]], tri.points[t[1]], tri.points[t[2]]);
            for (std::size_t i = 0; i < tri.points.size(); ++i) {
                if (int(i) == t[0] || int(i) == t[1] || int(i) == t[2]) continue;
                const double d2 = dot(tri.points[i] - cc.center, tri.points[i] - cc.center);
                REQUIRE(d2 > cc.r2 - 1e-7);
            }
        }
    }
}

TEST_CASE("triangulation: angles sum to pi per triangle and incident lists line up") {
    RandomStream rng(106);
    std::vector<Point2> pts;
    for (int i = 0; i < 25; ++i) pts.push_back({rng.uniform(0, 4), rng.uniform(0, 4)});
    const Triangulation tri = triangulate_constrained(pts, {});
    std::size_t total = 0;
    for (const auto& v : tri.incident_angles) total += v.size();
    REQUIRE(total == 3 * tri.triangles.size());
    // reconstruct per-triangle sums by walking triangles in order
    std::vector<std::size_t> cursor(pts.size(), 0);
    for (const auto& t : tri.triangles) {
        double s = 0.0;
        for (int e = 0; e < 3; ++e) s += tri.incident_angles[t[e]][cursor[t[e]]++];
        REQUIRE(s == Catch::Approx(M_PI).margin(1e-6));
    }
}

TEST_CASE("triangulation: constrained edge is kept") {
    // co-circular square plus midpoints on the sides; force one diagonal
    const std::vector<Point2> pts{{0, 0}, {2, 0}, {2, 2}, {0, 2}, {1, -0.2}, {1, 2.2}};
    const Triangulation tri = triangulate_constrained(pts, {{0, 2}});
    bool found = false;
    for (const auto& t : tri.triangles)
        for (int e = 0; e < 3; ++e) {
            const int a = t[e], b = t[(e + 1) % 3];
            if ((a == 0 && b == 2) || (a == 2 && b == 0)) found = true;
        }
    REQUIRE(found);
}

TEST_CASE("triangulation: collinear triples are tolerated, full lines rejected") {
    // grid points contain many exactly-collinear triples
    std::vector<Point2> grid;
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) grid.push_back({double(x), double(y)});
    REQUIRE_NOTHROW(triangulate_constrained(grid, {}));

    const std::vector<Point2> line{{0, 0}, {1, 0}, {2, 0}, {3, 0}};
    REQUIRE_THROWS_AS(triangulate_constrained(line, {}), std::domain_error);
}

TEST_CASE("triangulation: crossing constraints rejected") {
    const std::vector<Point2> pts{{0, 0}, {2, 0}, {2, 2}, {0, 2}};
    REQUIRE_THROWS_AS(triangulate_constrained(pts, {{0, 2}, {1, 3}}), std::invalid_argument);
}

TEST_CASE("fit_into_box: 2x1 glyph into 4x4 target scales by 2 and centers") {
    Contour loop;
    loop.points = {Point2{0, 0}, Point2{1, 0}, Point2{2, 0},
                   Point2{2, 1}, Point2{1, 1}, Point2{0, 1}};
    GlyphOutline g{{loop}};
    const Box2 target{{10, 10}, {14, 14}};
    const GlyphOutline fitted = fit_into_box(g, target);
    const Box2 b = bbox(fitted);
    REQUIRE(b.width() == Catch::Approx(4.0).margin(1e-12));
    REQUIRE(b.height() == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(b.center().x == Catch::Approx(12.0).margin(1e-12));
    REQUIRE(b.center().y == Catch::Approx(12.0).margin(1e-12));

    const GlyphOutline again = fit_into_box(fitted, target);
    for (std::size_t i = 0; i < again.contours[0].points.size(); ++i)
        REQUIRE(dist(again.contours[0].points[i], fitted.contours[0].points[i]) < 1e-12);
}

TEST_CASE("fit_into_box: degenerate glyph bbox rejected") {
    Contour loop;
    loop.points = {Point2{1, 1}, Point2{1, 1}, Point2{1, 1}};
    GlyphOutline g{{loop}};
    REQUIRE_THROWS_AS(fit_into_box(g, Box2{{0, 0}, {4, 4}}), std::domain_error);
}

TEST_CASE("glyph outline text format round-trips") {
    GlyphOutline g;
    Contour outer;
    outer.points = {Point2{9.3, 13.7},  Point2{16.1, 6.9},  Point2{27.8, 8.2},
                    Point2{33.6, 15.4}, Point2{38.9, 23.1}, Point2{33.2, 33.8},
                    Point2{24.7, 36.9}, Point2{14.6, 35.2}, Point2{7.1, 27.3}};
    Contour inner;
    inner.points = {Point2{17.2, 18.1}, Point2{21.9, 14.8}, Point2{26.3, 17.2},
                    Point2{27.4, 22.6}, Point2{25.1, 27.9}, Point2{18.8, 26.4}};
    g.contours = {outer, inner};

    std::stringstream ss;
    write_glyph_outline(ss, g);
    const GlyphOutline back = read_glyph_outline(ss);

    REQUIRE(back.contours.size() == 2);
    REQUIRE(back.control_point_count() == 15);
    for (std::size_t c = 0; c < g.contours.size(); ++c) {
        REQUIRE(back.contours[c].points.size() == g.contours[c].points.size());
        for (std::size_t i = 0; i < g.contours[c].points.size(); ++i)
            REQUIRE(dist(back.contours[c].points[i], g.contours[c].points[i]) < 1e-6);
    }
}

TEST_CASE("glyph outline reader: comments, blanks, and malformed input") {
    SECTION("comments and blank lines are skipped") {
        std::stringstream ss(
            "# a unit-ish triangle, one straight segment per side\n"
            "contour\n"
            "\n"
            "0 0  1 0  2 0  3 0\n"
            "3 0  3 1  3 2  3 3\n"
            "# closing side\n"
            "3 3  2 2  1 1  0 0\n");
        const GlyphOutline g = read_glyph_outline(ss);
        REQUIRE(g.contours.size() == 1);
        REQUIRE(g.control_point_count() == 9);
    }

    SECTION("segment line before any contour keyword") {
        std::stringstream ss("0 0 1 0 2 0 3 0\n");
        REQUIRE_THROWS_AS(read_glyph_outline(ss), ConfigError);
    }

    SECTION("wrong coordinate count") {
        std::stringstream s7("contour\n0 0 1 0 2 0 3\n");
        REQUIRE_THROWS_AS(read_glyph_outline(s7), ConfigError);
        std::stringstream s9("contour\n0 0 1 0 2 0 3 0 9\n");
        REQUIRE_THROWS_AS(read_glyph_outline(s9), ConfigError);
    }

    SECTION("segments that do not chain into a loop") {
        std::stringstream ss(
            "contour\n"
            "0 0  1 0  2 0  3 0\n"
            "5 5  3 1  3 2  0 0\n");
        REQUIRE_THROWS_AS(read_glyph_outline(ss), ConfigError);
    }

    SECTION("empty input") {
        std::stringstream ss("# nothing here\n");
        REQUIRE_THROWS_AS(read_glyph_outline(ss), ConfigError);
        std::stringstream e2("contour\ncontour\n0 0 1 0 2 0 0 0\n");
        REQUIRE_THROWS_AS(read_glyph_outline(e2), ConfigError);
    }
}
