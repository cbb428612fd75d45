#ifndef UNPREF_SYNTH_DATASET_HPP
#define UNPREF_SYNTH_DATASET_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unpref/error.hpp"
#include "unpref/mesh_core.hpp"
#include "unpref/parallel.hpp"
#include "unpref/primitives.hpp"

namespace unpref {

enum class MeshKind { sphere, box, torus, cylinder };
enum class PrefLabel { preferred, dispreferred, excluded };

inline constexpr std::array<MeshKind, 4> kMeshKinds = {MeshKind::sphere, MeshKind::box, MeshKind::torus,
                                                       MeshKind::cylinder};

inline std::string to_string(MeshKind k) {
    switch (k) {
    case MeshKind::sphere: return "sphere";
    case MeshKind::box: return "box";
    case MeshKind::torus: return "torus";
    case MeshKind::cylinder: return "cylinder";
    }
    return "?";
}

inline MeshKind mesh_kind_from_string(std::string_view s) {
    for (MeshKind k : kMeshKinds)
        if (to_string(k) == s) return k;
    throw Error(errc::invalid_argument, "unknown mesh kind '" + std::string(s) + "'");
}

inline std::string to_string(PrefLabel l) {
    switch (l) {
    case PrefLabel::preferred: return "preferred";
    case PrefLabel::dispreferred: return "dispreferred";
    case PrefLabel::excluded: return "excluded";
    }
    return "?";
}

inline constexpr double kPreferredMinScore = 4.0;
inline constexpr double kDispreferredMaxScore = 3.5;

/// >= 4.0 preferred, <= 3.5 dispreferred, the margin in between excluded.
inline PrefLabel label_for_score(double score) {
    if (score >= kPreferredMinScore) return PrefLabel::preferred;
    if (score <= kDispreferredMaxScore) return PrefLabel::dispreferred;
    return PrefLabel::excluded;
}

struct GeneratedMesh {
    TriangleMesh mesh;
    double score;
};

inline TriangleMesh base_primitive(MeshKind kind) {
    switch (kind) {
    case MeshKind::sphere: return primitives::icosphere(2);
    case MeshKind::box: return primitives::box(3);
    case MeshKind::torus: return primitives::torus();
    case MeshKind::cylinder: return primitives::cylinder();
    }
    return {};
}

/// Procedural mesh of the given kind degraded according to `quality`.
///
/// At quality q the primitive gets per-coordinate jitter of up to
/// (1-q) * 5% of its bounding radius, loses round((1-q) * 20%) of its faces,
/// and receives round((1-q) * 10%) reversed duplicates of surviving faces
/// (inverted-normal fragments). Score = 0.5 + 4.5 q + U(-0.25, 0.25) noise
/// that depends only on (kind, seed), clamped to [0, 5].
inline GeneratedMesh gen_mesh(MeshKind kind, double quality, std::uint64_t seed) {
    quality = std::clamp(quality, 0.0, 1.0);
    const double damage = 1.0 - quality;
    std::mt19937_64 score_rng(seed ^ (0xA5A5A5A5ULL + static_cast<std::uint64_t>(kind)));
    const double noise = std::uniform_real_distribution<double>(-0.25, 0.25)(score_rng);
    const double score = std::clamp(0.5 + 4.5 * quality + noise, 0.0, 5.0);

    TriangleMesh mesh = base_primitive(kind);
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(kind) + 1);

    Vec3 centroid = Vec3::Zero();
    for (const Vec3& v : mesh.vertices) centroid += v;
    centroid /= static_cast<double>(mesh.vertices.size());
    double radius = 0.0;
    for (const Vec3& v : mesh.vertices) radius = std::max(radius, (v - centroid).norm());

    const double amplitude = damage * 0.05 * radius;
    if (amplitude > 0.0) {
        std::uniform_real_distribution<double> jitter(-amplitude, amplitude);
        for (Vec3& v : mesh.vertices)
            for (int k = 0; k < 3; ++k) v[k] += jitter(rng);
    }

    const auto delete_count = static_cast<std::size_t>(std::lround(damage * 0.20 * mesh.faces.size()));
    if (delete_count > 0) {
        std::vector<std::size_t> order(mesh.faces.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<char> drop(mesh.faces.size(), 0);
        for (std::size_t i = 0; i < delete_count; ++i) drop[order[i]] = 1;
        std::vector<Face> kept;
        for (std::size_t f = 0; f < mesh.faces.size(); ++f)
            if (!drop[f]) kept.push_back(mesh.faces[f]);
        mesh.faces = std::move(kept);
    }

    const auto flip_count = static_cast<std::size_t>(std::lround(damage * 0.10 * mesh.faces.size()));
    if (flip_count > 0) {
        // Only faces whose corners keep at least two other incident faces, so
        // vertex normals stay well defined after the reversed copy cancels.
        std::vector<int> valence(mesh.vertices.size(), 0);
        for (const Face& f : mesh.faces)
            for (int v : f) ++valence[v];
        std::vector<std::size_t> eligible;
        for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
            const Face& fc = mesh.faces[f];
            if (valence[fc[0]] >= 3 && valence[fc[1]] >= 3 && valence[fc[2]] >= 3) eligible.push_back(f);
        }
        std::shuffle(eligible.begin(), eligible.end(), rng);
        std::vector<int> flipped_at(mesh.vertices.size(), 0);
        std::size_t added = 0;
        for (std::size_t f : eligible) {
            if (added == flip_count) break;
            const Face fc = mesh.faces[f];
            if (flipped_at[fc[0]] || flipped_at[fc[1]] || flipped_at[fc[2]]) continue;
            for (int v : fc) flipped_at[v] = 1;
            mesh.faces.push_back({fc[0], fc[2], fc[1]});
            ++added;
        }
    }
    return {compact_vertices(mesh), score};
}

inline std::string prompt_for(MeshKind kind, double quality) {
    const std::string k = to_string(kind);
    if (quality >= 0.8) return "a clean " + k;
    if (quality >= 0.6) return "a slightly rough " + k;
    if (quality >= 0.3) return "a dented " + k + " with rough faces";
    return "a damaged " + k + " with holes";
}

struct PrefItem {
    std::string id;
    MeshKind kind;
    double quality;
    std::uint64_t seed;
    TriangleMesh mesh;
    std::string prompt;
    double score;
    PrefLabel label;
};

struct PrefDataset {
    std::uint64_t seed = 0;
    int n = 0;
    std::vector<PrefItem> items;

    std::size_t count(PrefLabel l) const {
        return static_cast<std::size_t>(
            std::count_if(items.begin(), items.end(), [&](const PrefItem& it) { return it.label == l; }));
    }
};

inline void check_populations(const PrefDataset& ds) {
    if (ds.count(PrefLabel::preferred) == 0 || ds.count(PrefLabel::dispreferred) == 0)
        throw Error(errc::empty_population, "dataset needs at least one preferred and one dispreferred item");
}

inline PrefItem make_item(int index, MeshKind kind, double quality, std::uint64_t seed) {
    GeneratedMesh g = gen_mesh(kind, quality, seed);
    char id[16];
    std::snprintf(id, sizeof id, "%05d", index);
    return {id, kind, quality, seed, std::move(g.mesh), prompt_for(kind, quality), g.score, label_for_score(g.score)};
}

/// Draws n items. Qualities come from a three-part mixture aimed at roughly
/// 45% preferred / 55% dispreferred among labeled items, with a thin band
/// landing in the excluded margin. Kinds, qualities and per-item seeds are
/// drawn up front, so the result does not depend on `threads`.
inline PrefDataset gen_dataset(int n, std::uint64_t seed, int threads = 1) {
    if (n < 4) throw Error(errc::invalid_argument, "dataset size must be >= 4");
    PrefDataset ds;
    ds.seed = seed;
    ds.n = n;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    struct Plan {
        MeshKind kind;
        double quality;
        std::uint64_t seed;
    };
    std::vector<Plan> plan;
    for (int i = 0; i < n; ++i) {
        const MeshKind kind = kMeshKinds[static_cast<std::size_t>(rng() % kMeshKinds.size())];
        const double pick = unit(rng), u = unit(rng);
        double quality;
        if (pick < 0.42)
            quality = 0.80 + 0.20 * u;
        else if (pick < 0.90)
            quality = 0.65 * u;
        else
            quality = 0.65 + 0.15 * u;
        plan.push_back({kind, quality, rng()});
    }
    ds.items.resize(static_cast<std::size_t>(n));
    parallel_for(plan.size(), threads, [&](std::size_t i) {
        ds.items[i] = make_item(static_cast<int>(i), plan[i].kind, plan[i].quality, plan[i].seed);
    });
    check_populations(ds);
    return ds;
}

inline nlohmann::json manifest_json(const PrefDataset& ds) {
    nlohmann::json items = nlohmann::json::array();
    for (const PrefItem& it : ds.items)
        items.push_back({{"id", it.id},
                         {"kind", to_string(it.kind)},
                         {"quality", it.quality},
                         {"seed", it.seed},
                         {"prompt", it.prompt},
                         {"score", it.score},
                         {"label", to_string(it.label)},
                         {"faces", it.mesh.faces.size()}});
    return {{"format_version", 1}, {"seed", ds.seed}, {"n", ds.n}, {"items", items}};
}

/// Rebuilds every item from the seeds and qualities recorded in a manifest.
inline PrefDataset regenerate(const nlohmann::json& manifest) {
    PrefDataset ds;
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.n = manifest.at("n").get<int>();
    int index = 0;
    for (const auto& it : manifest.at("items"))
        ds.items.push_back(make_item(index++, mesh_kind_from_string(it.at("kind").get<std::string>()),
                                     it.at("quality").get<double>(), it.at("seed").get<std::uint64_t>()));
    return ds;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(errc::io, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(errc::io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Layout: <dir>/manifest.json and <dir>/items/<id>.obj.
inline void write_dataset(const PrefDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "items");
    for (const PrefItem& it : ds.items) write_file(dir / "items" / (it.id + ".obj"), write_obj(it.mesh));
    write_file(dir / "manifest.json", manifest_json(ds).dump(2) + "\n");
}

/// Loads meshes from disk and labels/prompts/scores from the manifest.
inline PrefDataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    PrefDataset ds;
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.n = manifest.at("n").get<int>();
    for (const auto& j : manifest.at("items")) {
        PrefItem it;
        it.id = j.at("id").get<std::string>();
        it.kind = mesh_kind_from_string(j.at("kind").get<std::string>());
        it.quality = j.at("quality").get<double>();
        it.seed = j.at("seed").get<std::uint64_t>();
        it.prompt = j.at("prompt").get<std::string>();
        it.score = j.at("score").get<double>();
        it.label = label_for_score(it.score);
        it.mesh = parse_obj(read_file(dir / "items" / (it.id + ".obj")));
        ds.items.push_back(std::move(it));
    }
    check_populations(ds);
    return ds;
}

} // namespace unpref

#endif // UNPREF_SYNTH_DATASET_HPP
