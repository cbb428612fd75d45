#ifndef UNPREF_MESH_CORE_HPP
#define UNPREF_MESH_CORE_HPP

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "unpref/error.hpp"

namespace unpref {

using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

/// Triangle soup with shared vertices. Faces index `vertices` 0-based and are
/// wound counter-clockwise when seen from outside.
struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t face_count() const { return faces.size(); }

    bool operator==(const TriangleMesh& other) const {
        if (faces != other.faces || vertices.size() != other.vertices.size()) return false;
        for (std::size_t i = 0; i < vertices.size(); ++i)
            if (vertices[i] != other.vertices[i]) return false;
        return true;
    }
};

inline constexpr double kDegenerateArea = 1e-12;

inline Vec3 face_cross(const TriangleMesh& mesh, const Face& f) {
    const Vec3& a = mesh.vertices[f[0]];
    return (mesh.vertices[f[1]] - a).cross(mesh.vertices[f[2]] - a);
}

inline double face_area(const TriangleMesh& mesh, const Face& f) {
    return 0.5 * face_cross(mesh, f).norm();
}

/// Unit normal, or zero for a zero-area face.
inline Vec3 face_normal(const TriangleMesh& mesh, const Face& f) {
    Vec3 n = face_cross(mesh, f);
    const double len = n.norm();
    return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

inline Vec3 face_centroid(const TriangleMesh& mesh, const Face& f) {
    return (mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) / 3.0;
}

/// Drops vertices no face references, keeping the relative order of the rest.
inline TriangleMesh compact_vertices(const TriangleMesh& mesh) {
    std::vector<int> remap(mesh.vertices.size(), -1);
    for (const Face& f : mesh.faces)
        for (int v : f) remap[v] = 0;
    TriangleMesh out;
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        if (remap[v] < 0) continue;
        remap[v] = static_cast<int>(out.vertices.size());
        out.vertices.push_back(mesh.vertices[v]);
    }
    out.faces.reserve(mesh.faces.size());
    for (const Face& f : mesh.faces) out.faces.push_back({remap[f[0]], remap[f[1]], remap[f[2]]});
    return out;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

[[noreturn]] inline void parse_fail(std::size_t line, const std::string& what) {
    throw Error(errc::parse, "line " + std::to_string(line) + ": " + what);
}

inline double parse_double(std::string_view tok, std::size_t line) {
    double value = 0.0;
    const char* end = tok.data() + tok.size();
    // from_chars rejects a leading '+', which some exporters emit.
    const char* begin = tok.data();
    if (begin != end && *begin == '+') ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value))
        parse_fail(line, "invalid number '" + std::string(tok) + "'");
    return value;
}

inline long parse_index(std::string_view tok, std::size_t line) {
    const auto slash = tok.find('/');
    std::string_view head = tok.substr(0, slash);
    long value = 0;
    auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), value);
    if (ec != std::errc() || ptr != head.data() + head.size() || head.empty())
        parse_fail(line, "invalid face index '" + std::string(tok) + "'");
    if (value == 0) parse_fail(line, "face index 0 is not valid in OBJ");
    return value;
}

inline void append_double(std::string& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, ptr);
}

} // namespace detail

/// Parses the `v` and `f` records of a Wavefront OBJ file.
///
/// `v/vt/vn` face syntax is accepted (only the position index is used),
/// negative indices are resolved relative to the vertices read so far, and
/// polygons are fan-triangulated from their first corner.
inline TriangleMesh parse_obj(std::string_view text) {
    TriangleMesh mesh;
    std::vector<std::size_t> face_lines;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const std::string_view raw =
            text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;

        std::string_view line = detail::trim(raw);
        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = detail::trim(line.substr(0, hash));
        if (line.empty()) continue;
        const auto tokens = detail::split_ws(line);
        if (tokens[0] == "v") {
            if (tokens.size() < 4) detail::parse_fail(line_no, "vertex needs 3 coordinates");
            mesh.vertices.emplace_back(detail::parse_double(tokens[1], line_no),
                                       detail::parse_double(tokens[2], line_no),
                                       detail::parse_double(tokens[3], line_no));
        } else if (tokens[0] == "f") {
            if (tokens.size() < 4) detail::parse_fail(line_no, "face needs at least 3 vertices");
            std::vector<int> corners;
            const long nv = static_cast<long>(mesh.vertices.size());
            for (std::size_t t = 1; t < tokens.size(); ++t) {
                long idx = detail::parse_index(tokens[t], line_no);
                idx = idx < 0 ? nv + idx : idx - 1;
                if (idx < 0) detail::parse_fail(line_no, "relative face index out of range");
                corners.push_back(static_cast<int>(idx));
            }
            for (std::size_t k = 1; k + 1 < corners.size(); ++k) {
                Face f{corners[0], corners[k], corners[k + 1]};
                if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
                    detail::parse_fail(line_no, "face repeats a vertex");
                mesh.faces.push_back(f);
                face_lines.push_back(line_no);
            }
        }
    }
    const int nv = static_cast<int>(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.faces.size(); ++i)
        for (int v : mesh.faces[i])
            if (v >= nv)
                detail::parse_fail(face_lines[i], "face index " + std::to_string(v + 1) +
                                                      " out of range (" + std::to_string(nv) +
                                                      " vertices)");
    return mesh;
}

/// Serializes with shortest round-trip float formatting, so parsing the
/// result reproduces the vertex array exactly.
inline std::string write_obj(const TriangleMesh& mesh) {
    std::string out;
    out.reserve(mesh.vertices.size() * 48 + mesh.faces.size() * 24);
    for (const Vec3& v : mesh.vertices) {
        out += 'v';
        for (int k = 0; k < 3; ++k) {
            out += ' ';
            detail::append_double(out, v[k]);
        }
        out += '\n';
    }
    for (const Face& f : mesh.faces) {
        out += 'f';
        for (int v : f) {
            out += ' ';
            out += std::to_string(v + 1);
        }
        out += '\n';
    }
    return out;
}

struct ValidationReport {
    std::int64_t degenerate_face_count = 0;
    std::int64_t non_manifold_edge_count = 0;
    std::int64_t duplicate_face_count = 0;
    std::int64_t euler_characteristic = 0;
    Vec3 bbox_min = Vec3::Zero();
    Vec3 bbox_max = Vec3::Zero();
};

using EdgeKey = std::pair<int, int>;

inline EdgeKey edge_key(int a, int b) { return a < b ? EdgeKey{a, b} : EdgeKey{b, a}; }

/// Undirected edge -> number of incident faces.
inline std::map<EdgeKey, int> edge_face_counts(const TriangleMesh& mesh) {
    std::map<EdgeKey, int> counts;
    for (const Face& f : mesh.faces)
        for (int k = 0; k < 3; ++k) ++counts[edge_key(f[k], f[(k + 1) % 3])];
    return counts;
}

/// Reports defects without rejecting anything. `degenerate_area` is the
/// absolute area below which a face counts as degenerate.
inline ValidationReport validate(const TriangleMesh& mesh, double degenerate_area = kDegenerateArea) {
    ValidationReport report;
    for (const Face& f : mesh.faces)
        if (face_area(mesh, f) < degenerate_area) ++report.degenerate_face_count;

    const auto edges = edge_face_counts(mesh);
    for (const auto& [edge, count] : edges)
        if (count > 2) ++report.non_manifold_edge_count;

    std::map<Face, int> seen;
    for (Face f : mesh.faces) {
        std::sort(f.begin(), f.end());
        if (seen[f]++ > 0) ++report.duplicate_face_count;
    }

    report.euler_characteristic = static_cast<std::int64_t>(mesh.vertices.size()) -
                                  static_cast<std::int64_t>(edges.size()) +
                                  static_cast<std::int64_t>(mesh.faces.size());
    if (!mesh.vertices.empty()) {
        report.bbox_min = report.bbox_max = mesh.vertices.front();
        for (const Vec3& v : mesh.vertices) {
            report.bbox_min = report.bbox_min.cwiseMin(v);
            report.bbox_max = report.bbox_max.cwiseMax(v);
        }
    }
    return report;
}

/// Area-weighted unit vertex normals.
inline std::vector<Vec3> vertex_normals(const TriangleMesh& mesh) {
    std::vector<Vec3> acc(mesh.vertices.size(), Vec3::Zero());
    std::vector<char> touched(mesh.vertices.size(), 0);
    for (const Face& f : mesh.faces) {
        const Vec3 c = face_cross(mesh, f);  // |c| = 2 * area
        if (0.5 * c.norm() < kDegenerateArea) continue;
        for (int v : f) {
            acc[v] += c;
            touched[v] = 1;
        }
    }
    for (std::size_t v = 0; v < acc.size(); ++v) {
        if (!touched[v])
            throw Error(errc::isolated_vertex,
                        "vertex " + std::to_string(v) + " has no incident non-degenerate face");
        const double len = acc[v].norm();
        if (!(len > 0.0))
            throw Error(errc::isolated_vertex,
                        "incident face normals cancel at vertex " + std::to_string(v));
        acc[v] /= len;
    }
    return acc;
}

/// Per-face neighbor lists on the dual graph, each sorted ascending.
/// `vertex_adjacent` holds every face sharing at least one vertex, so it
/// contains `edge_adjacent`.
struct FaceAdjacency {
    std::vector<std::vector<int>> edge_adjacent;
    std::vector<std::vector<int>> vertex_adjacent;
};

inline FaceAdjacency face_adjacency(const TriangleMesh& mesh) {
    const std::size_t nf = mesh.faces.size();
    std::vector<std::vector<int>> faces_of_vertex(mesh.vertices.size());
    for (std::size_t f = 0; f < nf; ++f)
        for (int v : mesh.faces[f]) faces_of_vertex[v].push_back(static_cast<int>(f));

    FaceAdjacency adj;
    adj.edge_adjacent.resize(nf);
    adj.vertex_adjacent.resize(nf);
    std::vector<int> shared(nf, 0);
    std::vector<int> touched;
    for (std::size_t f = 0; f < nf; ++f) {
        touched.clear();
        for (int v : mesh.faces[f])
            for (int g : faces_of_vertex[v]) {
                if (g == static_cast<int>(f)) continue;
                if (shared[g]++ == 0) touched.push_back(g);
            }
        std::sort(touched.begin(), touched.end());
        for (int g : touched) {
            adj.vertex_adjacent[f].push_back(g);
            if (shared[g] >= 2) adj.edge_adjacent[f].push_back(g);
            shared[g] = 0;
        }
    }
    return adj;
}

} // namespace unpref

#endif // UNPREF_MESH_CORE_HPP
