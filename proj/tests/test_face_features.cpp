#include <gtest/gtest.h>

#include <cstring>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "unpref/face_features.hpp"
#include "unpref/mesh_core.hpp"
#include "unpref/primitives.hpp"

using namespace unpref;
using std::numbers::pi;

namespace {

std::string code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "";
}

TriangleMesh jittered(TriangleMesh m, double sd, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, sd);
    for (Vec3& v : m.vertices)
        for (int k = 0; k < 3; ++k) v[k] += nd(gen);
    return m;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& gen) {
    std::normal_distribution<double> nd;
    Eigen::Quaterniond q(nd(gen), nd(gen), nd(gen), nd(gen));
    return q.normalized().toRotationMatrix();
}

// Interior angles from the law of cosines, sorted.
std::array<double, 3> law_of_cosines(const Vec3& a, const Vec3& b, const Vec3& c) {
    const double la = (b - c).norm(), lb = (a - c).norm(), lc = (a - b).norm();
    std::array<double, 3> ang = {std::acos((lb * lb + lc * lc - la * la) / (2 * lb * lc)),
                                 std::acos((la * la + lc * lc - lb * lb) / (2 * la * lc)),
                                 std::acos((la * la + lb * lb - lc * lc) / (2 * la * lb))};
    std::sort(ang.begin(), ang.end());
    return ang;
}

} // namespace

TEST(FaceFeature, RightTriangle) {
    const TriangleMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    const std::vector<Vec3> normals(3, Vec3(0, 0, 1));
    const FaceFeature f = face_feature(m, normals, 0);
    EXPECT_NEAR(f.area, 0.5, 1e-15);
    EXPECT_NEAR(f.interior_angles[0], pi / 4, 1e-15);
    EXPECT_NEAR(f.interior_angles[1], pi / 4, 1e-15);
    EXPECT_NEAR(f.interior_angles[2], pi / 2, 1e-15);
    EXPECT_EQ(f.face_normal, Vec3(0, 0, 1));
    for (double d : f.normal_dots) EXPECT_EQ(d, 1.0);
    // The right angle is at vertex 0.
    EXPECT_EQ(f.corner_order[2], 0);
}

TEST(FaceFeature, Equilateral) {
    const TriangleMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0.5 0.8660254037844386 0\nf 1 2 3\n");
    const FaceFeature f = face_feature(m, vertex_normals(m), 0);
    EXPECT_NEAR(f.area, std::sqrt(3.0) / 4, 1e-12);
    EXPECT_NEAR(f.area, 0.43301, 1e-5);
    for (double a : f.interior_angles) EXPECT_NEAR(a, pi / 3, 1e-12);
}

TEST(FaceFeature, CollinearIsDegenerateWithIndex) {
    const TriangleMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n");
    try {
        face_feature(m, std::vector<Vec3>(4, Vec3(0, 0, 1)), 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), errc::degenerate_face);
        EXPECT_NE(std::string(e.what()).find("face 1"), std::string::npos);
    }
    EXPECT_EQ(code_of([&] { featurize(m); }), errc::degenerate_face);
}

TEST(FaceFeature, AnglesMatchLawOfCosines) {
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int t = 0; t < 200; ++t) {
        TriangleMesh m;
        for (int i = 0; i < 3; ++i) m.vertices.emplace_back(u(gen), u(gen), u(gen));
        m.faces = {{0, 1, 2}};
        const FaceFeature f = face_feature(m, std::vector<Vec3>(3, Vec3(0, 0, 1)), 0);
        const auto expected = law_of_cosines(m.vertices[0], m.vertices[1], m.vertices[2]);
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(f.interior_angles[k], expected[k], 1e-7);
        EXPECT_NEAR(f.interior_angles[0] + f.interior_angles[1] + f.interior_angles[2], pi, 1e-9);
        EXPECT_NEAR(f.face_normal.norm(), 1.0, 1e-9);
        EXPECT_NEAR(f.area, 0.5 * (m.vertices[1] - m.vertices[0]).cross(m.vertices[2] - m.vertices[0]).norm(), 1e-15);
    }
}

TEST(FaceFeature, InvariantToCyclicVertexOrder) {
    const TriangleMesh m = parse_obj("v 0 0 0\nv 2 0 0.3\nv 0.4 1 0\nf 1 2 3\n");
    const std::vector<Vec3> normals = {Vec3(0, 0, 1), Vec3(0.6, 0, 0.8), Vec3(0, 0.6, 0.8)};
    TriangleMesh r = m;
    r.faces = {{1, 2, 0}};
    const auto a = face_feature(m, normals, 0).row();
    const auto b = face_feature(r, normals, 0).row();
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Featurize, OneFaceOneRow) {
    const FeatureMatrix f = featurize(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"));
    EXPECT_EQ(f.rows(), 1);
    EXPECT_EQ(f.cols(), 10);
}

TEST(Featurize, BoxAngleSums) {
    const FeatureMatrix f = featurize(primitives::box(1));
    ASSERT_EQ(f.rows(), 12);
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
        EXPECT_NEAR(f(r, 1) + f(r, 2) + f(r, 3), pi, 1e-9);
        EXPECT_LE(f(r, 1), f(r, 2));
        EXPECT_LE(f(r, 2), f(r, 3));
    }
}

TEST(Featurize, RowsMatchFaceFeature) {
    const TriangleMesh m = jittered(primitives::icosphere(1), 0.02, 4);
    const FeatureMatrix f = featurize(m);
    const auto normals = vertex_normals(m);
    for (std::size_t i = 0; i < m.faces.size(); ++i)
        EXPECT_EQ(f.row(static_cast<Eigen::Index>(i)), face_feature(m, normals, i).row());
}

TEST(Featurize, Ranges) {
    const FeatureMatrix f = featurize(jittered(primitives::torus(), 0.03, 5));
    for (Eigen::Index r = 0; r < f.rows(); ++r) {
        EXPECT_GT(f(r, 0), 0.0);
        for (int k = 1; k <= 3; ++k) {
            EXPECT_GT(f(r, k), 0.0);
            EXPECT_LT(f(r, k), pi);
        }
        EXPECT_NEAR(f.row(r).segment<3>(4).norm(), 1.0, 1e-9);
        for (int k = 7; k <= 9; ++k) {
            EXPECT_GE(f(r, k), -1.0);
            EXPECT_LE(f(r, k), 1.0);
        }
    }
}

TEST(Featurize, TranslationInvariant) {
    const TriangleMesh m = jittered(primitives::icosphere(2), 0.02, 6);
    TriangleMesh t = m;
    for (Vec3& v : t.vertices) v += Vec3(0.7, -1.3, 2.1);
    EXPECT_LE((featurize(m) - featurize(t)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Featurize, RotationInvariantAndEquivariant) {
    std::mt19937_64 gen(9);
    const TriangleMesh m = jittered(primitives::cylinder(), 0.01, 7);
    const FeatureMatrix base = featurize(m);
    for (int t = 0; t < 10; ++t) {
        const Eigen::Matrix3d rot = random_rotation(gen);
        TriangleMesh r = m;
        for (Vec3& v : r.vertices) v = rot * v;
        const FeatureMatrix f = featurize(r);
        for (Eigen::Index i = 0; i < f.rows(); ++i) {
            for (int k : {0, 1, 2, 3, 7, 8, 9}) EXPECT_NEAR(f(i, k), base(i, k), 1e-9);
            const Vec3 n_rot = rot * base.row(i).segment<3>(4).transpose();
            EXPECT_LE((f.row(i).segment<3>(4).transpose() - n_rot).norm(), 1e-9);
        }
    }
}

TEST(Featurize, UniformScaling) {
    const TriangleMesh m = jittered(primitives::box(2), 0.01, 8);
    const double s = 2.5;
    TriangleMesh big = m;
    for (Vec3& v : big.vertices) v *= s;
    const FeatureMatrix a = featurize(m), b = featurize(big);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        EXPECT_NEAR(b(i, 0), s * s * a(i, 0), 1e-12);
        for (int k = 1; k < kFeatureDim; ++k) EXPECT_NEAR(b(i, k), a(i, k), 1e-12);
    }
}

TEST(Mpf1, ByteLayout) {
    FeatureMatrix f(1, kFeatureDim);
    for (int k = 0; k < kFeatureDim; ++k) f(0, k) = k + 0.5;
    const std::string bytes = write_mpf1(f);
    ASSERT_EQ(bytes.size(), 12u + 80u);
    EXPECT_EQ(bytes.substr(0, 4), "MPF1");
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
    EXPECT_EQ(p[4], 1);
    EXPECT_EQ(p[5] | p[6] | p[7], 0);
    EXPECT_EQ(p[8], 10);
    double third;
    std::memcpy(&third, bytes.data() + 12 + 2 * 8, 8);
    EXPECT_EQ(third, 2.5);
}

TEST(Mpf1, RoundTripBitwise) {
    const FeatureMatrix f = featurize(jittered(primitives::icosphere(2), 0.01, 10));
    const Eigen::MatrixXd back = read_mpf1(write_mpf1(f));
    ASSERT_EQ(back.rows(), f.rows());
    ASSERT_EQ(back.cols(), kFeatureDim);
    EXPECT_EQ(FeatureMatrix(back), f);
}

TEST(Mpf1, RejectsBadInput) {
    EXPECT_EQ(code_of([] { read_mpf1("MPF2xxxxxxxx"); }), errc::parse);
    const std::string good = write_mpf1(FeatureMatrix::Zero(2, kFeatureDim));
    EXPECT_EQ(code_of([&] { read_mpf1(good.substr(0, good.size() - 1)); }), errc::parse);
}

TEST(Csv, RoundTripExact) {
    const FeatureMatrix f = featurize(jittered(primitives::torus(), 0.01, 11));
    const std::string csv = write_feature_csv(f);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "area,angle0,angle1,angle2,normal_x,normal_y,normal_z,dot0,dot1,dot2");
    EXPECT_EQ(FeatureMatrix(read_csv(csv)), f);
}

TEST(Csv, RaggedRowsRejected) {
    EXPECT_EQ(code_of([] { read_csv("1,2,3\n4,5\n"); }), errc::parse);
}

TEST(FeaturizeVjp, MatchesFiniteDifferences) {
    std::mt19937_64 gen(12);
    std::normal_distribution<double> nd;
    const TriangleMesh m = jittered(primitives::icosphere(1), 0.05, 13);
    FeatureMatrix upstream(static_cast<Eigen::Index>(m.faces.size()), kFeatureDim);
    for (Eigen::Index i = 0; i < upstream.size(); ++i) upstream.data()[i] = nd(gen);
    const Eigen::MatrixX3d grad = featurize_vjp(m, upstream);
    const auto objective = [&](const TriangleMesh& mm) { return featurize(mm).cwiseProduct(upstream).sum(); };
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t v = 0; v < m.vertices.size(); ++v)
        for (int k = 0; k < 3; ++k) {
            TriangleMesh plus = m, minus = m;
            plus.vertices[v][k] += h;
            minus.vertices[v][k] -= h;
            const double fd = (objective(plus) - objective(minus)) / (2 * h);
            worst = std::max(worst, std::abs(fd - grad(static_cast<Eigen::Index>(v), k)) / std::max(1.0, std::abs(fd)));
        }
    EXPECT_LT(worst, 1e-6);
}

TEST(FeaturizeVjp, ShapeMismatch) {
    const TriangleMesh m = primitives::box(1);
    EXPECT_EQ(code_of([&] { featurize_vjp(m, FeatureMatrix::Zero(3, kFeatureDim)); }), errc::shape_mismatch);
}
