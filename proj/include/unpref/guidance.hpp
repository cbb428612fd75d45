#ifndef UNPREF_GUIDANCE_HPP
#define UNPREF_GUIDANCE_HPP

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "unpref/error.hpp"
#include "unpref/face_features.hpp"
#include "unpref/mesh_core.hpp"
#include "unpref/mesh_prep.hpp"
#include "unpref/reward_net.hpp"

namespace unpref {

struct GuidanceSchedule {
    double alpha_start = 10.0;
    double alpha_end = 20.0;
    int total_steps = 300;
};

inline void check_schedule(const GuidanceSchedule& s) {
    if (s.total_steps < 1) throw Error(errc::invalid_argument, "total_steps must be >= 1");
    if (!(s.alpha_end >= s.alpha_start)) throw Error(errc::invalid_argument, "alpha_end must be >= alpha_start");
}

/// Linear ramp from alpha_start at step 0 to alpha_end at total_steps.
inline double alpha_at(const GuidanceSchedule& s, int step) {
    check_schedule(s);
    if (step < 0 || step > s.total_steps)
        throw Error(errc::invalid_argument, "step " + std::to_string(step) + " outside [0, " +
                                                std::to_string(s.total_steps) + "]");
    if (step == s.total_steps) return s.alpha_end;
    return s.alpha_start + (s.alpha_end - s.alpha_start) * static_cast<double>(step) / s.total_steps;
}

/// Value and gradient of a base objective over vertex offsets.
struct BaseEval {
    double value = 0.0;
    Eigen::MatrixX3d grad;
};
using BaseLoss = std::function<BaseEval(const Eigen::MatrixX3d& offsets)>;

/// 0.5 * |psi|^2: pulls the shape back toward the base mesh.
inline BaseLoss anchor_loss() {
    return [](const Eigen::MatrixX3d& psi) { return BaseEval{0.5 * psi.squaredNorm(), psi}; };
}

inline TriangleMesh deformed(const TriangleMesh& base, const Eigen::MatrixX3d& offsets) {
    if (offsets.rows() != static_cast<Eigen::Index>(base.vertices.size()))
        throw Error(errc::shape_mismatch, "offsets must have one row per vertex");
    if (!offsets.allFinite()) throw Error(errc::non_finite, "vertex offsets are not finite");
    TriangleMesh m = base;
    for (std::size_t v = 0; v < m.vertices.size(); ++v)
        m.vertices[v] += offsets.row(static_cast<Eigen::Index>(v)).transpose();
    return m;
}

struct CombinedEval {
    double loss = 0.0;
    double base = 0.0;
    double reward = 0.0;
    Eigen::MatrixX3d grad;
    PatchAssignment assignment;
};

/// loss = base(psi) - alpha * reward(base_mesh + psi).
///
/// The patch assignment is computed from the deformed mesh unless `frozen`
/// is given; either way it is a constant of the differentiation. Reward
/// gradients travel reward -> patch grid -> face features -> vertices.
inline CombinedEval combined_loss(const TriangleMesh& base_mesh, const Eigen::MatrixX3d& offsets,
                                  const BaseLoss& base_loss, const RewardParams& params, const TextTokens& text,
                                  double alpha, const PatchAssignment* frozen = nullptr) {
    const TriangleMesh mesh = deformed(base_mesh, offsets);
    if (mesh.faces.size() > static_cast<std::size_t>(kFaceCapacity))
        throw Error(errc::capacity, "guided mesh exceeds the patch grid capacity");
    const FeatureMatrix features = featurize(mesh);

    CombinedEval out;
    if (frozen) {
        out.assignment = *frozen;
    } else {
        out.assignment = patchify(mesh, features).assignment;
    }
    const PatchTensor grid = scatter_features(features, out.assignment);
    const ForwardResult fw = forward(params, grid, text);
    const BaseEval b = base_loss(offsets);
    if (b.grad.rows() != offsets.rows()) throw Error(errc::shape_mismatch, "base loss gradient has the wrong shape");

    out.base = b.value;
    out.reward = fw.reward;
    if (alpha == 0.0) {
        out.loss = b.value;
        out.grad = b.grad;
        return out;
    }
    RewardParams unused(params.dims());
    PatchTensor grid_grad;
    backward_accumulate(params, fw.cache, 1.0, nullptr, unused, &grid_grad);
    const FeatureMatrix feature_grad = gather_face_rows(grid_grad, out.assignment);
    out.loss = b.value - alpha * fw.reward;
    out.grad = b.grad - alpha * featurize_vjp(mesh, feature_grad);
    return out;
}

struct GuidanceState {
    Eigen::MatrixX3d offsets;
    int step = 0;
    std::vector<double> reward_trajectory;
    std::vector<double> loss_trajectory;
};

struct GuideResult {
    TriangleMesh mesh;
    GuidanceState state;
    double final_reward = 0.0;
};

/// Plain gradient descent on the offsets, alpha from the schedule at each
/// step. Trajectories hold the values evaluated before each update.
inline GuideResult guide_optimize(const TriangleMesh& base_mesh, std::string_view prompt,
                                  const RewardParams& params, const GuidanceSchedule& schedule,
                                  const BaseLoss& base_loss, double lr, std::uint64_t text_seed = 0) {
    check_schedule(schedule);
    if (!(lr > 0.0)) throw Error(errc::invalid_argument, "lr must be positive");
    if (base_mesh.faces.size() > static_cast<std::size_t>(kFaceCapacity))
        throw Error(errc::capacity, "base mesh has " + std::to_string(base_mesh.faces.size()) +
                                        " faces; the patch grid holds " + std::to_string(kFaceCapacity));
    const TextTokens text = text_featurize(prompt, text_seed, params.dims());

    GuideResult r;
    r.state.offsets = Eigen::MatrixX3d::Zero(static_cast<Eigen::Index>(base_mesh.vertices.size()), 3);
    for (int t = 0; t < schedule.total_steps; ++t) {
        CombinedEval e;
        try {
            e = combined_loss(base_mesh, r.state.offsets, base_loss, params, text, alpha_at(schedule, t));
        } catch (const Error& err) {
            throw Error(err.code(), "step " + std::to_string(t) + ": " + err.what());
        }
        r.state.reward_trajectory.push_back(e.reward);
        r.state.loss_trajectory.push_back(e.loss);
        r.state.offsets -= lr * e.grad;
        r.state.step = t + 1;
    }
    r.mesh = deformed(base_mesh, r.state.offsets);
    const FeatureMatrix features = featurize(r.mesh);
    r.final_reward = forward(params, patchify(r.mesh, features).tensor, text).reward;
    return r;
}

inline nlohmann::json to_json(const GuidanceState& s) {
    return {{"step", s.step}, {"reward_trajectory", s.reward_trajectory}, {"loss_trajectory", s.loss_trajectory}};
}

} // namespace unpref

#endif // UNPREF_GUIDANCE_HPP
