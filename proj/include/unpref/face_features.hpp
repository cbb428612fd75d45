#ifndef UNPREF_FACE_FEATURES_HPP
#define UNPREF_FACE_FEATURES_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "unpref/error.hpp"
#include "unpref/mesh_core.hpp"

namespace unpref {

inline constexpr int kFeatureDim = 10;

/// Columns: area | three interior angles, ascending | unit face normal |
/// face-normal . vertex-normal for the corners in angle order.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, kFeatureDim, Eigen::RowMajor>;

struct FaceFeature {
    double area = 0.0;
    std::array<double, 3> interior_angles{};
    Vec3 face_normal = Vec3::Zero();
    std::array<double, 3> normal_dots{};
    /// Local corner (0..2) behind each sorted angle.
    std::array<int, 3> corner_order{0, 1, 2};

    Eigen::Matrix<double, 1, kFeatureDim> row() const {
        Eigen::Matrix<double, 1, kFeatureDim> r;
        r << area, interior_angles[0], interior_angles[1], interior_angles[2], face_normal.x(),
            face_normal.y(), face_normal.z(), normal_dots[0], normal_dots[1], normal_dots[2];
        return r;
    }
};

namespace detail {

// Interior angle at the apex between edges u and v.
inline double corner_angle(const Vec3& u, const Vec3& v) {
    return std::atan2(u.cross(v).norm(), u.dot(v));
}

} // namespace detail

inline FaceFeature face_feature(const TriangleMesh& mesh, const std::vector<Vec3>& vertex_normals,
                                std::size_t face_index) {
    const Face& f = mesh.faces.at(face_index);
    const Vec3 cross = face_cross(mesh, f);
    FaceFeature feat;
    feat.area = 0.5 * cross.norm();
    if (!(feat.area >= kDegenerateArea))
        throw Error(errc::degenerate_face, "face " + std::to_string(face_index) + " is degenerate");
    feat.face_normal = cross / cross.norm();

    std::array<double, 3> angles;
    for (int k = 0; k < 3; ++k) {
        const Vec3& p = mesh.vertices[f[k]];
        angles[k] = detail::corner_angle(mesh.vertices[f[(k + 1) % 3]] - p,
                                         mesh.vertices[f[(k + 2) % 3]] - p);
    }
    std::stable_sort(feat.corner_order.begin(), feat.corner_order.end(),
                     [&](int a, int b) { return angles[a] < angles[b]; });
    for (int k = 0; k < 3; ++k) {
        const int corner = feat.corner_order[k];
        feat.interior_angles[k] = angles[corner];
        const double d = feat.face_normal.dot(vertex_normals.at(f[corner]));
        feat.normal_dots[k] = std::clamp(d, -1.0, 1.0);
    }
    return feat;
}

inline FeatureMatrix featurize(const TriangleMesh& mesh, const std::vector<Vec3>& vertex_normals) {
    FeatureMatrix out(static_cast<Eigen::Index>(mesh.faces.size()), kFeatureDim);
    for (std::size_t i = 0; i < mesh.faces.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = face_feature(mesh, vertex_normals, i).row();
    return out;
}

inline FeatureMatrix featurize(const TriangleMesh& mesh) {
    for (std::size_t i = 0; i < mesh.faces.size(); ++i)
        if (face_area(mesh, mesh.faces[i]) < kDegenerateArea)
            throw Error(errc::degenerate_face, "face " + std::to_string(i) + " is degenerate");
    return featurize(mesh, vertex_normals(mesh));
}

/// Vector-Jacobian product of `featurize`: given d(loss)/d(features), returns
/// d(loss)/d(vertex positions) as a V x 3 matrix.
///
/// Corner ordering (the angle sort) is held fixed, and the clamp on the
/// normal dots is treated as the identity.
inline Eigen::MatrixX3d featurize_vjp(const TriangleMesh& mesh,
                                      const Eigen::Ref<const FeatureMatrix>& grad_features) {
    const std::size_t nv = mesh.vertices.size();
    const std::size_t nf = mesh.faces.size();
    if (static_cast<std::size_t>(grad_features.rows()) != nf)
        throw Error(errc::shape_mismatch, "feature gradient rows do not match face count");

    const std::vector<Vec3> vnormals = vertex_normals(mesh);
    std::vector<Vec3> vsum(nv, Vec3::Zero());
    std::vector<Vec3> cross(nf);
    for (std::size_t i = 0; i < nf; ++i) {
        cross[i] = face_cross(mesh, mesh.faces[i]);
        if (0.5 * cross[i].norm() >= kDegenerateArea)
            for (int v : mesh.faces[i]) vsum[v] += cross[i];
    }

    Eigen::MatrixX3d grad = Eigen::MatrixX3d::Zero(static_cast<Eigen::Index>(nv), 3);
    std::vector<Vec3> grad_cross(nf, Vec3::Zero());
    std::vector<Vec3> grad_vnormal(nv, Vec3::Zero());

    for (std::size_t i = 0; i < nf; ++i) {
        const Face& f = mesh.faces[i];
        const FaceFeature feat = face_feature(mesh, vnormals, i);
        const auto g = grad_features.row(static_cast<Eigen::Index>(i));
        const double len = cross[i].norm();
        const Vec3& n = feat.face_normal;

        Vec3 grad_n(g(4), g(5), g(6));
        for (int k = 0; k < 3; ++k) {
            const int v = f[feat.corner_order[k]];
            grad_n += g(7 + k) * vnormals[v];
            grad_vnormal[v] += g(7 + k) * n;
        }
        grad_cross[i] += 0.5 * g(0) * n + (grad_n - n * n.dot(grad_n)) / len;

        for (int k = 0; k < 3; ++k) {
            const double ga = g(1 + k);
            if (ga == 0.0) continue;
            const int corner = feat.corner_order[k];
            const int ia = f[corner], ib = f[(corner + 1) % 3], ic = f[(corner + 2) % 3];
            const Vec3 u = mesh.vertices[ib] - mesh.vertices[ia];
            const Vec3 w = mesh.vertices[ic] - mesh.vertices[ia];
            const double s = u.cross(w).norm();
            const double uw = u.dot(w);
            const Vec3 du = -(w - uw * u / u.squaredNorm()) / s;
            const Vec3 dw = -(u - uw * w / w.squaredNorm()) / s;
            grad.row(ib) += ga * du.transpose();
            grad.row(ic) += ga * dw.transpose();
            grad.row(ia) -= ga * (du + dw).transpose();
        }
    }

    // Vertex normal = normalize(sum of incident face cross products).
    for (std::size_t v = 0; v < nv; ++v) {
        if (grad_vnormal[v].isZero(0.0)) continue;
        const double len = vsum[v].norm();
        const Vec3 nvn = vsum[v] / len;
        const Vec3 grad_sum = (grad_vnormal[v] - nvn * nvn.dot(grad_vnormal[v])) / len;
        grad_vnormal[v] = grad_sum;
    }
    for (std::size_t i = 0; i < nf; ++i) {
        if (0.5 * cross[i].norm() >= kDegenerateArea)
            for (int v : mesh.faces[i]) grad_cross[i] += grad_vnormal[v];
        const Face& f = mesh.faces[i];
        const Vec3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
        const Vec3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
        const Vec3 g1 = e2.cross(grad_cross[i]);
        const Vec3 g2 = grad_cross[i].cross(e1);
        grad.row(f[1]) += g1.transpose();
        grad.row(f[2]) += g2.transpose();
        grad.row(f[0]) -= (g1 + g2).transpose();
    }
    return grad;
}

// ---------------------------------------------------------------------------
// "MPF1" binary: magic, u32 row count, u32 column count (10), then row-major
// little-endian float64 values.

inline std::string write_mpf1(const Eigen::Ref<const FeatureMatrix>& features) {
    static_assert(std::endian::native == std::endian::little, "MPF1 writer assumes little-endian host");
    std::string out = "MPF1";
    const auto put_u32 = [&](std::uint32_t v) {
        char b[4];
        std::memcpy(b, &v, 4);
        out.append(b, 4);
    };
    put_u32(static_cast<std::uint32_t>(features.rows()));
    put_u32(kFeatureDim);
    const std::size_t bytes = static_cast<std::size_t>(features.size()) * sizeof(double);
    const std::size_t offset = out.size();
    out.resize(offset + bytes);
    for (Eigen::Index r = 0; r < features.rows(); ++r)
        for (int c = 0; c < kFeatureDim; ++c) {
            const double v = features(r, c);
            std::memcpy(out.data() + offset + (r * kFeatureDim + c) * sizeof(double), &v, sizeof v);
        }
    return out;
}

/// Reads any MPF1 payload (column count is taken from the header).
inline Eigen::MatrixXd read_mpf1(std::string_view bytes) {
    if (bytes.size() < 12 || bytes.substr(0, 4) != "MPF1")
        throw Error(errc::parse, "missing MPF1 header");
    std::uint32_t rows = 0, cols = 0;
    std::memcpy(&rows, bytes.data() + 4, 4);
    std::memcpy(&cols, bytes.data() + 8, 4);
    const std::size_t need = 12 + static_cast<std::size_t>(rows) * cols * sizeof(double);
    if (bytes.size() != need)
        throw Error(errc::parse, "MPF1 payload size " + std::to_string(bytes.size()) +
                                     " does not match header (" + std::to_string(need) + ")");
    Eigen::MatrixXd out(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c) {
            double v;
            std::memcpy(&v, bytes.data() + 12 + (static_cast<std::size_t>(r) * cols + c) * 8, 8);
            out(r, c) = v;
        }
    return out;
}

inline constexpr std::array<const char*, kFeatureDim> kFeatureColumns = {
    "area", "angle0", "angle1", "angle2", "normal_x",
    "normal_y", "normal_z", "dot0", "dot1", "dot2"};

inline std::string write_feature_csv(const Eigen::Ref<const FeatureMatrix>& features) {
    std::string out;
    for (int c = 0; c < kFeatureDim; ++c) {
        if (c) out += ',';
        out += kFeatureColumns[c];
    }
    out += '\n';
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
        for (int c = 0; c < kFeatureDim; ++c) {
            if (c) out += ',';
            detail::append_double(out, features(r, c));
        }
        out += '\n';
    }
    return out;
}

/// Numeric CSV reader. A first line that does not parse as numbers is
/// treated as a header; every data row must have the same column count.
inline Eigen::MatrixXd read_csv(std::string_view text) {
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        const std::string_view line = detail::trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        ++line_no;
        if (line.empty()) continue;
        std::vector<double> values;
        bool numeric = true;
        std::size_t start = 0;
        while (start <= line.size()) {
            auto comma = line.find(',', start);
            if (comma == std::string_view::npos) comma = line.size();
            const std::string_view cell = detail::trim(line.substr(start, comma - start));
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
                numeric = false;
                break;
            }
            values.push_back(v);
            start = comma + 1;
        }
        if (!numeric) {
            if (rows.empty() && line_no == 1) continue;
            detail::parse_fail(line_no, "non-numeric CSV cell");
        }
        if (!rows.empty() && values.size() != rows.front().size())
            detail::parse_fail(line_no, "inconsistent CSV column count");
        rows.push_back(std::move(values));
    }
    if (rows.empty()) return Eigen::MatrixXd(0, 0);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return out;
}

} // namespace unpref

#endif // UNPREF_FACE_FEATURES_HPP
