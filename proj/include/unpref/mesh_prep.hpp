#ifndef UNPREF_MESH_PREP_HPP
#define UNPREF_MESH_PREP_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <queue>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "unpref/error.hpp"
#include "unpref/face_features.hpp"
#include "unpref/mesh_core.hpp"

namespace unpref {

inline constexpr int kPatchCount = 256;
inline constexpr int kSlotsPerPatch = 64;
inline constexpr int kFaceCapacity = kPatchCount * kSlotsPerPatch;  // 16384

// ---------------------------------------------------------------------------
// QEM simplification (Garland-Heckbert quadrics, greedy edge collapse)

namespace detail {

struct CollapseCandidate {
    double cost;
    int u, v;
    std::uint32_t version_u, version_v;
    Vec3 position;

    // Min-heap on cost; ties resolved by the lower vertex pair.
    bool operator>(const CollapseCandidate& o) const {
        return std::tie(cost, u, v) > std::tie(o.cost, o.u, o.v);
    }
};

inline constexpr double kQuadricMaxCondition = 1e12;

class EdgeCollapser {
public:
    explicit EdgeCollapser(const TriangleMesh& mesh)
        : pos_(mesh.vertices), faces_(mesh.faces), face_alive_(mesh.faces.size(), 1),
          quadric_(mesh.vertices.size(), Eigen::Matrix4d::Zero()),
          vertex_faces_(mesh.vertices.size()), version_(mesh.vertices.size(), 0),
          vertex_alive_(mesh.vertices.size(), 1), alive_faces_(mesh.faces.size()) {
        for (std::size_t f = 0; f < faces_.size(); ++f) {
            const Vec3 n = face_normal(mesh, faces_[f]);
            Eigen::Vector4d plane(n.x(), n.y(), n.z(), -n.dot(pos_[faces_[f][0]]));
            const Eigen::Matrix4d k = plane * plane.transpose();
            for (int v : faces_[f]) {
                quadric_[v] += k;
                vertex_faces_[v].push_back(static_cast<int>(f));
            }
        }
        std::set<EdgeKey> edges;
        for (const Face& f : faces_)
            for (int k = 0; k < 3; ++k) edges.insert(edge_key(f[k], f[(k + 1) % 3]));
        for (const auto& [a, b] : edges) push(a, b);
    }

    std::size_t alive_faces() const { return alive_faces_; }

    /// Collapses the cheapest valid edge; false when no edge remains.
    bool collapse_next() {
        while (!heap_.empty()) {
            const CollapseCandidate c = heap_.top();
            heap_.pop();
            if (!vertex_alive_[c.u] || !vertex_alive_[c.v]) continue;
            if (version_[c.u] != c.version_u || version_[c.v] != c.version_v) continue;
            if (!link_condition(c.u, c.v) || flips_or_degenerates(c.u, c.v, c.position)) continue;
            apply(c.u, c.v, c.position);
            return true;
        }
        return false;
    }

    TriangleMesh result() const {
        TriangleMesh out;
        out.vertices = pos_;
        for (std::size_t f = 0; f < faces_.size(); ++f)
            if (face_alive_[f]) out.faces.push_back(faces_[f]);
        return compact_vertices(out);
    }

private:
    std::vector<int> neighbors(int v) const {
        std::vector<int> out;
        for (int f : vertex_faces_[v]) {
            if (!face_alive_[f]) continue;
            for (int w : faces_[f])
                if (w != v) out.push_back(w);
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    void push(int a, int b) {
        const Eigen::Matrix4d q = quadric_[a] + quadric_[b];
        const Eigen::Matrix3d A = q.topLeftCorner<3, 3>();
        const Vec3 rhs = -q.topRightCorner<3, 1>();
        Vec3 p;
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const auto& sv = svd.singularValues();
        if (sv(2) > 0.0 && sv(0) / sv(2) <= kQuadricMaxCondition)
            p = svd.solve(rhs);
        else
            p = 0.5 * (pos_[a] + pos_[b]);
        Eigen::Vector4d h(p.x(), p.y(), p.z(), 1.0);
        const double cost = std::max(0.0, h.dot(q * h));
        heap_.push({cost, a, b, version_[a], version_[b], p});
    }

    // Vertices adjacent to both ends must be exactly the apexes of the faces
    // on the edge; otherwise the collapse pinches the surface.
    bool link_condition(int u, int v) const {
        const auto nu = neighbors(u), nv = neighbors(v);
        std::vector<int> common;
        std::set_intersection(nu.begin(), nu.end(), nv.begin(), nv.end(), std::back_inserter(common));
        std::vector<int> apexes;
        for (int f : vertex_faces_[u]) {
            if (!face_alive_[f]) continue;
            const Face& fc = faces_[f];
            if (std::find(fc.begin(), fc.end(), v) == fc.end()) continue;
            for (int w : fc)
                if (w != u && w != v) apexes.push_back(w);
        }
        std::sort(apexes.begin(), apexes.end());
        return common == apexes && !apexes.empty();
    }

    bool flips_or_degenerates(int u, int v, const Vec3& p) const {
        for (int end : {u, v})
            for (int f : vertex_faces_[end]) {
                if (!face_alive_[f]) continue;
                const Face& fc = faces_[f];
                const bool has_u = std::find(fc.begin(), fc.end(), u) != fc.end();
                const bool has_v = std::find(fc.begin(), fc.end(), v) != fc.end();
                if (has_u && has_v) continue;
                std::array<Vec3, 3> moved;
                for (int k = 0; k < 3; ++k) moved[k] = (fc[k] == u || fc[k] == v) ? p : pos_[fc[k]];
                const Vec3 before = (pos_[fc[1]] - pos_[fc[0]]).cross(pos_[fc[2]] - pos_[fc[0]]);
                const Vec3 after = (moved[1] - moved[0]).cross(moved[2] - moved[0]);
                if (0.5 * after.norm() < kDegenerateArea || before.dot(after) <= 0.0) return true;
            }
        return false;
    }

    void apply(int u, int v, const Vec3& p) {
        pos_[u] = p;
        quadric_[u] += quadric_[v];
        for (int f : vertex_faces_[v]) {
            Face& fc = faces_[f];
            if (std::find(fc.begin(), fc.end(), u) != fc.end()) {
                if (face_alive_[f]) --alive_faces_;
                face_alive_[f] = 0;
                continue;
            }
            for (int& w : fc)
                if (w == v) w = u;
            vertex_faces_[u].push_back(f);
        }
        vertex_faces_[v].clear();
        vertex_alive_[v] = 0;
        auto& uf = vertex_faces_[u];
        uf.erase(std::remove_if(uf.begin(), uf.end(), [&](int f) { return !face_alive_[f]; }), uf.end());
        std::sort(uf.begin(), uf.end());
        uf.erase(std::unique(uf.begin(), uf.end()), uf.end());
        // Removed faces also leave the incidence lists of their apexes.
        for (int w : neighbors(u)) {
            auto& wf = vertex_faces_[w];
            wf.erase(std::remove_if(wf.begin(), wf.end(), [&](int f) { return !face_alive_[f]; }), wf.end());
        }
        ++version_[u];
        ++version_[v];
        for (int w : neighbors(u)) push(std::min(u, w), std::max(u, w));
    }

    std::vector<Vec3> pos_;
    std::vector<Face> faces_;
    std::vector<char> face_alive_;
    std::vector<Eigen::Matrix4d, Eigen::aligned_allocator<Eigen::Matrix4d>> quadric_;
    std::vector<std::vector<int>> vertex_faces_;
    std::vector<std::uint32_t> version_;
    std::vector<char> vertex_alive_;
    std::size_t alive_faces_;
    std::priority_queue<CollapseCandidate, std::vector<CollapseCandidate>, std::greater<>> heap_;
};

} // namespace detail

/// Decimates to at most `target_faces` faces by quadric-error edge collapse.
///
/// Degenerate input faces are dropped first. Collapses that would flip or
/// flatten a surviving face, or violate the link condition, are skipped.
inline TriangleMesh qem_simplify(const TriangleMesh& mesh, int target_faces) {
    if (target_faces < 4)
        throw Error(errc::invalid_target, "target_faces must be >= 4, got " + std::to_string(target_faces));
    TriangleMesh clean;
    clean.vertices = mesh.vertices;
    for (const Face& f : mesh.faces)
        if (face_area(mesh, f) >= kDegenerateArea) clean.faces.push_back(f);
    if (clean.faces.empty()) throw Error(errc::empty_mesh, "mesh has no non-degenerate faces");
    if (mesh.faces.size() <= static_cast<std::size_t>(target_faces) && clean.faces.size() == mesh.faces.size())
        return mesh;

    detail::EdgeCollapser collapser(clean);
    while (collapser.alive_faces() > static_cast<std::size_t>(target_faces))
        if (!collapser.collapse_next())
            throw Error(errc::simplify_stalled,
                        "no valid collapse left at " + std::to_string(collapser.alive_faces()) +
                            " faces (target " + std::to_string(target_faces) + ")");
    return collapser.result();
}

// ---------------------------------------------------------------------------
// Adaptive fusion

struct FusionConfig {
    double normal_similarity_threshold = 0.99;
    int target_faces = kFaceCapacity;
    int max_passes = 32;
};

namespace detail {

inline void check_fusion_config(const FusionConfig& cfg) {
    if (!(cfg.normal_similarity_threshold > -1.0 && cfg.normal_similarity_threshold <= 1.0))
        throw Error(errc::invalid_argument, "normal_similarity_threshold must lie in (-1, 1]");
    if (cfg.target_faces < 4) throw Error(errc::invalid_target, "target_faces must be >= 4");
    if (cfg.max_passes < 1) throw Error(errc::invalid_argument, "max_passes must be >= 1");
}

struct FusionCandidate {
    double similarity;
    int f, g;
};

// Orients (a, b, c) so its normal agrees with `reference`.
inline Face oriented(const TriangleMesh& mesh, int a, int b, int c, const Vec3& reference) {
    Face face{a, b, c};
    if (face_cross(mesh, face).dot(reference) < 0.0) std::swap(face[1], face[2]);
    return face;
}

} // namespace detail

/// Greedily merges pairs of similar-normal faces that share a vertex or an
/// edge. The first pass always runs; when it starts over budget, merging
/// stops as soon as the budget is met, and further passes run only while
/// the mesh is still over budget.
///
/// Edge-sharing pairs become the shared edge plus whichever apex gives the
/// larger triangle; vertex-sharing pairs become the shared vertex plus the
/// corner of each face farthest from it. Candidates are visited by
/// descending normal similarity, then by face index pair; a face takes part
/// in at most one merge per pass.
inline TriangleMesh adaptive_fuse(const TriangleMesh& mesh, const FusionConfig& cfg = {}) {
    detail::check_fusion_config(cfg);
    const auto budget = static_cast<std::size_t>(cfg.target_faces);
    TriangleMesh current = mesh;
    bool changed = false;

    for (int pass = 0; pass < cfg.max_passes && (pass == 0 || current.faces.size() > budget); ++pass) {
        const std::size_t nf = current.faces.size();
        const bool capped = nf > budget;
        std::vector<Vec3> normals(nf);
        for (std::size_t i = 0; i < nf; ++i) normals[i] = face_normal(current, current.faces[i]);
        const FaceAdjacency adj = face_adjacency(current);

        std::vector<detail::FusionCandidate> candidates;
        for (std::size_t f = 0; f < nf; ++f)
            for (int g : adj.vertex_adjacent[f]) {
                if (g <= static_cast<int>(f)) continue;
                const double sim = normals[f].dot(normals[g]);
                if (sim >= cfg.normal_similarity_threshold)
                    candidates.push_back({sim, static_cast<int>(f), g});
            }
        std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
            if (a.similarity != b.similarity) return a.similarity > b.similarity;
            return std::tie(a.f, a.g) < std::tie(b.f, b.g);
        });

        std::set<Face> existing;
        for (Face f : current.faces) {
            std::sort(f.begin(), f.end());
            existing.insert(f);
        }
        std::vector<char> consumed(nf, 0), removed(nf, 0);
        std::vector<Face> faces = current.faces;
        std::size_t count = nf;
        for (const auto& c : candidates) {
            if (capped && count <= budget) break;
            if (consumed[c.f] || consumed[c.g]) continue;
            const Face& a = current.faces[c.f];
            const Face& b = current.faces[c.g];
            std::vector<int> shared;
            for (int v : a)
                if (std::find(b.begin(), b.end(), v) != b.end()) shared.push_back(v);
            const auto other = [&](const Face& face) {
                std::vector<int> out;
                for (int v : face)
                    if (std::find(shared.begin(), shared.end(), v) == shared.end()) out.push_back(v);
                return out;
            };
            const Vec3 reference = normals[c.f] + normals[c.g];
            Face merged;
            if (shared.size() == 2) {
                const int apex_a = other(a)[0], apex_b = other(b)[0];
                const double area_a = face_area(current, {shared[0], shared[1], apex_a});
                const double area_b = face_area(current, {shared[0], shared[1], apex_b});
                merged = detail::oriented(current, shared[0], shared[1], area_b > area_a ? apex_b : apex_a,
                                          reference);
            } else if (shared.size() == 1) {
                const int s = shared[0];
                const auto farthest = [&](const std::vector<int>& cands) {
                    const double d0 = (current.vertices[cands[0]] - current.vertices[s]).squaredNorm();
                    const double d1 = (current.vertices[cands[1]] - current.vertices[s]).squaredNorm();
                    return d1 > d0 ? cands[1] : cands[0];
                };
                merged = detail::oriented(current, s, farthest(other(a)), farthest(other(b)), reference);
            } else {
                continue;  // duplicate faces
            }
            if (face_area(current, merged) < kDegenerateArea) continue;
            Face key = merged;
            std::sort(key.begin(), key.end());
            Face key_a = a, key_b = b;
            std::sort(key_a.begin(), key_a.end());
            std::sort(key_b.begin(), key_b.end());
            if (existing.count(key) && key != key_a && key != key_b) continue;

            existing.erase(key_a);
            existing.erase(key_b);
            existing.insert(key);
            faces[c.f] = merged;
            removed[c.g] = 1;
            consumed[c.f] = consumed[c.g] = 1;
            --count;
        }
        if (count == nf) break;
        changed = true;
        TriangleMesh next;
        next.vertices = current.vertices;
        for (std::size_t i = 0; i < nf; ++i)
            if (!removed[i]) next.faces.push_back(faces[i]);
        current = std::move(next);
    }
    return changed ? compact_vertices(current) : current;
}

// ---------------------------------------------------------------------------
// Patchification

/// Fixed 256 x 64 x 10 grid of face features with an occupancy mask.
/// Unoccupied slots hold zeros.
struct PatchTensor {
    std::vector<double> values = std::vector<double>(kFaceCapacity * kFeatureDim, 0.0);
    std::vector<std::uint8_t> mask = std::vector<std::uint8_t>(kFaceCapacity, 0);

    static constexpr std::size_t index(int patch, int slot, int k) {
        return (static_cast<std::size_t>(patch) * kSlotsPerPatch + slot) * kFeatureDim + k;
    }
    double& at(int patch, int slot, int k) { return values[index(patch, slot, k)]; }
    double at(int patch, int slot, int k) const { return values[index(patch, slot, k)]; }
    bool occupied(int patch, int slot) const {
        return mask[static_cast<std::size_t>(patch) * kSlotsPerPatch + slot] != 0;
    }
    /// Row-major 640-vector of one patch.
    const double* patch_data(int patch) const { return values.data() + index(patch, 0, 0); }

    std::size_t occupied_count() const {
        return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
    }

    /// Zeroes every unoccupied slot.
    void apply_mask() {
        for (int s = 0; s < kFaceCapacity; ++s)
            if (!mask[s]) std::fill_n(values.begin() + s * kFeatureDim, kFeatureDim, 0.0);
    }

    /// 16384 x 10 view, patch-major, for MPF1 serialization.
    FeatureMatrix as_rows() const {
        FeatureMatrix out(kFaceCapacity, kFeatureDim);
        std::copy(values.begin(), values.end(), out.data());
        return out;
    }
};

struct PatchAssignment {
    std::vector<int> patch_of_face;
    std::vector<int> slot_of_face;
    std::vector<std::uint8_t> mask = std::vector<std::uint8_t>(kFaceCapacity, 0);
};

/// Places per-face feature rows into the grid using an existing assignment.
inline PatchTensor scatter_features(const Eigen::Ref<const FeatureMatrix>& features, const PatchAssignment& asg) {
    if (static_cast<std::size_t>(features.rows()) != asg.patch_of_face.size())
        throw Error(errc::shape_mismatch, "feature rows do not match the assignment");
    PatchTensor t;
    for (std::size_t i = 0; i < asg.patch_of_face.size(); ++i)
        for (int k = 0; k < kFeatureDim; ++k)
            t.at(asg.patch_of_face[i], asg.slot_of_face[i], k) = features(static_cast<Eigen::Index>(i), k);
    t.mask = asg.mask;
    return t;
}

struct Patchified {
    PatchTensor tensor;
    PatchAssignment assignment;
};

/// Groups faces into at most 256 patches of at most 64 faces.
///
/// Seeds: farthest-point sampling on face centroids starting at face 0.
/// Growth: breadth-first over edge-adjacent faces, one face per patch per
/// round. Faces not reached that way go to the patch whose seed centroid is
/// nearest among patches with free slots.
inline Patchified patchify(const TriangleMesh& mesh, const Eigen::Ref<const FeatureMatrix>& features) {
    const std::size_t nf = mesh.faces.size();
    if (nf > static_cast<std::size_t>(kFaceCapacity))
        throw Error(errc::capacity, "mesh has " + std::to_string(nf) + " faces; the patch grid holds " +
                                        std::to_string(kFaceCapacity) + " (simplify or fuse first)");
    if (static_cast<std::size_t>(features.rows()) != nf)
        throw Error(errc::shape_mismatch, "feature rows do not match face count");

    std::vector<Vec3> centroid(nf);
    for (std::size_t i = 0; i < nf; ++i) centroid[i] = face_centroid(mesh, mesh.faces[i]);

    const int seed_count = static_cast<int>(std::min<std::size_t>(nf, kPatchCount));
    std::vector<int> seeds;
    if (seed_count > 0) {
        std::vector<double> min_dist(nf, std::numeric_limits<double>::infinity());
        int next = 0;
        for (int s = 0; s < seed_count; ++s) {
            seeds.push_back(next);
            min_dist[next] = -1.0;
            int best = -1;
            double best_d = -1.0;
            for (std::size_t i = 0; i < nf; ++i) {
                if (min_dist[i] < 0.0) continue;
                min_dist[i] = std::min(min_dist[i], (centroid[i] - centroid[next]).squaredNorm());
                if (min_dist[i] > best_d) {
                    best_d = min_dist[i];
                    best = static_cast<int>(i);
                }
            }
            next = best;
        }
    }

    Patchified out;
    auto& asg = out.assignment;
    asg.patch_of_face.assign(nf, -1);
    asg.slot_of_face.assign(nf, -1);
    std::vector<int> size(kPatchCount, 0);
    const auto assign = [&](int face, int patch) {
        asg.patch_of_face[face] = patch;
        asg.slot_of_face[face] = size[patch]++;
    };

    const FaceAdjacency adj = face_adjacency(mesh);
    std::vector<std::deque<int>> frontier(kPatchCount);
    for (int p = 0; p < seed_count; ++p) {
        assign(seeds[p], p);
        for (int g : adj.edge_adjacent[seeds[p]]) frontier[p].push_back(g);
    }
    for (bool progress = true; progress;) {
        progress = false;
        for (int p = 0; p < seed_count; ++p) {
            if (size[p] >= kSlotsPerPatch) continue;
            while (!frontier[p].empty()) {
                const int g = frontier[p].front();
                frontier[p].pop_front();
                if (asg.patch_of_face[g] >= 0) continue;
                assign(g, p);
                for (int h : adj.edge_adjacent[g])
                    if (asg.patch_of_face[h] < 0) frontier[p].push_back(h);
                progress = true;
                break;
            }
        }
    }
    for (std::size_t i = 0; i < nf; ++i) {
        if (asg.patch_of_face[i] >= 0) continue;
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int p = 0; p < seed_count; ++p) {
            if (size[p] >= kSlotsPerPatch) continue;
            const double d = (centroid[i] - centroid[seeds[p]]).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = p;
            }
        }
        assign(static_cast<int>(i), best);
    }

    for (std::size_t i = 0; i < nf; ++i)
        asg.mask[static_cast<std::size_t>(asg.patch_of_face[i]) * kSlotsPerPatch + asg.slot_of_face[i]] = 1;
    out.tensor = scatter_features(features, asg);
    return out;
}

/// Routes a patch-grid gradient back to per-face feature rows.
inline FeatureMatrix gather_face_rows(const PatchTensor& grid, const PatchAssignment& asg) {
    FeatureMatrix out(static_cast<Eigen::Index>(asg.patch_of_face.size()), kFeatureDim);
    for (std::size_t i = 0; i < asg.patch_of_face.size(); ++i)
        for (int k = 0; k < kFeatureDim; ++k)
            out(static_cast<Eigen::Index>(i), k) = grid.at(asg.patch_of_face[i], asg.slot_of_face[i], k);
    return out;
}

} // namespace unpref

#endif // UNPREF_MESH_PREP_HPP
