#ifndef UNPREF_PRIMITIVES_HPP
#define UNPREF_PRIMITIVES_HPP

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <tuple>
#include <utility>

#include "unpref/mesh_core.hpp"

namespace unpref::primitives {

/// Unit icosphere; 20 * 4^subdivisions faces.
inline TriangleMesh icosphere(int subdivisions) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    TriangleMesh m;
    for (auto [x, y, z] : std::array<std::array<double, 3>, 12>{{{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
                                                                 {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
                                                                 {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}}})
        m.vertices.push_back(Vec3(x, y, z).normalized());
    m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
               {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
               {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (int s = 0; s < subdivisions; ++s) {
        std::map<EdgeKey, int> mid;
        const auto midpoint = [&](int a, int b) {
            const auto key = edge_key(a, b);
            if (auto it = mid.find(key); it != mid.end()) return it->second;
            m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
            return mid[key] = static_cast<int>(m.vertices.size()) - 1;
        };
        std::vector<Face> next;
        next.reserve(m.faces.size() * 4);
        for (const Face& f : m.faces) {
            const int ab = midpoint(f[0], f[1]), bc = midpoint(f[1], f[2]), ca = midpoint(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        m.faces = std::move(next);
    }
    return m;
}

/// Closed axis-aligned cube with each side split into n x n quads
/// (12 n^2 faces), scaled so the corners lie on the unit sphere.
inline TriangleMesh box(int n = 1) {
    TriangleMesh m;
    std::map<std::tuple<int, int, int>, int> index;
    const double h = 1.0 / std::sqrt(3.0);
    const auto vertex = [&](int i, int j, int k) {
        const auto key = std::make_tuple(i, j, k);
        if (auto it = index.find(key); it != index.end()) return it->second;
        m.vertices.emplace_back(h * (2.0 * i / n - 1.0), h * (2.0 * j / n - 1.0), h * (2.0 * k / n - 1.0));
        return index[key] = static_cast<int>(m.vertices.size()) - 1;
    };
    // axis: the fixed coordinate; side: 0 or n.
    for (int axis = 0; axis < 3; ++axis)
        for (int side : {0, n})
            for (int a = 0; a < n; ++a)
                for (int b = 0; b < n; ++b) {
                    const auto at = [&](int u, int v) {
                        std::array<int, 3> c{};
                        c[axis] = side;
                        c[(axis + 1) % 3] = u;
                        c[(axis + 2) % 3] = v;
                        return vertex(c[0], c[1], c[2]);
                    };
                    int q0 = at(a, b), q1 = at(a + 1, b), q2 = at(a + 1, b + 1), q3 = at(a, b + 1);
                    // (u, v, axis) is right-handed, so this winding faces +axis.
                    if (side == 0) std::swap(q1, q3);
                    m.faces.push_back({q0, q1, q2});
                    m.faces.push_back({q0, q2, q3});
                }
    return m;
}

inline TriangleMesh torus(double major = 0.7, double minor = 0.3, int nu = 16, int nv = 8) {
    TriangleMesh m;
    for (int i = 0; i < nu; ++i)
        for (int j = 0; j < nv; ++j) {
            const double u = 2.0 * std::numbers::pi * i / nu, v = 2.0 * std::numbers::pi * j / nv;
            m.vertices.emplace_back((major + minor * std::cos(v)) * std::cos(u),
                                    (major + minor * std::cos(v)) * std::sin(u), minor * std::sin(v));
        }
    const auto id = [&](int i, int j) { return ((i + nu) % nu) * nv + (j + nv) % nv; };
    for (int i = 0; i < nu; ++i)
        for (int j = 0; j < nv; ++j) {
            m.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            m.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    return m;
}

/// Closed cylinder along z with fan caps.
inline TriangleMesh cylinder(double radius = 0.6, double height = 1.2, int segments = 16, int rings = 4) {
    TriangleMesh m;
    for (int r = 0; r <= rings; ++r)
        for (int s = 0; s < segments; ++s) {
            const double a = 2.0 * std::numbers::pi * s / segments;
            m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), height * (double(r) / rings - 0.5));
        }
    const auto id = [&](int r, int s) { return r * segments + (s + segments) % segments; };
    for (int r = 0; r < rings; ++r)
        for (int s = 0; s < segments; ++s) {
            m.faces.push_back({id(r, s), id(r, s + 1), id(r + 1, s + 1)});
            m.faces.push_back({id(r, s), id(r + 1, s + 1), id(r + 1, s)});
        }
    const int bottom = static_cast<int>(m.vertices.size());
    m.vertices.emplace_back(0.0, 0.0, -0.5 * height);
    const int top = bottom + 1;
    m.vertices.emplace_back(0.0, 0.0, 0.5 * height);
    for (int s = 0; s < segments; ++s) {
        m.faces.push_back({bottom, id(0, s + 1), id(0, s)});
        m.faces.push_back({top, id(rings, s), id(rings, s + 1)});
    }
    return m;
}

/// n x n unit-spaced grid in the z = 0 plane, 2 n^2 faces facing +z.
inline TriangleMesh flat_grid(int n) {
    TriangleMesh m;
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i) m.vertices.emplace_back(double(i), double(j), 0.0);
    const auto id = [&](int i, int j) { return j * (n + 1) + i; };
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            m.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            m.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    return m;
}

} // namespace unpref::primitives

#endif // UNPREF_PRIMITIVES_HPP
