#ifndef UNPREF_REWARD_TRAIN_HPP
#define UNPREF_REWARD_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "unpref/cs_divergence.hpp"
#include "unpref/error.hpp"
#include "unpref/reward_net.hpp"
#include "unpref/synth_dataset.hpp"

namespace unpref {

/// One training example with its preprocessing already done.
struct TrainSample {
    PatchTensor patch;
    TextTokens text;
    double score = 0.0;
};

inline TrainSample make_sample(const TriangleMesh& mesh, std::string_view prompt, double score,
                               std::uint64_t text_seed = 0, const ModelDims& dims = {}) {
    return {prepare_mesh(mesh).grid.tensor, text_featurize(prompt, text_seed, dims), score};
}

struct SampleSplit {
    std::vector<TrainSample> preferred, dispreferred;
};

/// Preprocesses every labeled item; excluded items are dropped.
inline SampleSplit make_samples(const PrefDataset& ds, std::uint64_t text_seed = 0, const ModelDims& dims = {}) {
    check_populations(ds);
    SampleSplit out;
    for (const PrefItem& it : ds.items) {
        if (it.label == PrefLabel::excluded) continue;
        auto& dst = it.label == PrefLabel::preferred ? out.preferred : out.dispreferred;
        dst.push_back(make_sample(it.mesh, it.prompt, it.score, text_seed, dims));
    }
    return out;
}

struct BatchLoss {
    double loss = 0.0;
    double mse = 0.0;
    double cs = 0.0;
    RewardParams grad;
};

/// loss = MSE over both lists - lambda * D_CS(class embeddings of preferred,
/// class embeddings of dispreferred), with gradients for every parameter.
/// With lambda == 0 the divergence is still reported but does not touch the
/// loss or the gradient.
inline BatchLoss loss_batch(const RewardParams& params, std::span<const TrainSample* const> preferred,
                            std::span<const TrainSample* const> dispreferred, double lambda,
                            const KernelConfig& kernel = KernelConfig::median()) {
    if (preferred.empty() || dispreferred.empty())
        throw Error(errc::empty_population,
                    "the divergence term needs at least one preferred and one dispreferred sample");
    const ModelDims& d = params.dims();
    const std::size_t np = preferred.size(), nd = dispreferred.size(), total = np + nd;

    std::vector<ForwardResult> fw;
    fw.reserve(total);
    for (const TrainSample* s : preferred) fw.push_back(forward(params, s->patch, s->text));
    for (const TrainSample* s : dispreferred) fw.push_back(forward(params, s->patch, s->text));

    BatchLoss out{0.0, 0.0, 0.0, RewardParams(d)};
    std::vector<double> d_reward(total);
    for (std::size_t i = 0; i < total; ++i) {
        const double target = i < np ? preferred[i]->score : dispreferred[i - np]->score;
        const double err = fw[i].reward - target;
        out.mse += err * err;
        d_reward[i] = 2.0 * err / static_cast<double>(total);
    }
    out.mse /= static_cast<double>(total);

    EmbeddingBatch ex(static_cast<Eigen::Index>(np), d.d_model), ey(static_cast<Eigen::Index>(nd), d.d_model);
    for (std::size_t i = 0; i < np; ++i) ex.row(static_cast<Eigen::Index>(i)) = fw[i].class_embedding;
    for (std::size_t i = 0; i < nd; ++i) ey.row(static_cast<Eigen::Index>(i)) = fw[np + i].class_embedding;

    if (lambda == 0.0) {
        out.cs = cs_divergence(ex, ey, kernel).value;
        out.loss = out.mse;
        for (std::size_t i = 0; i < total; ++i)
            backward_accumulate(params, fw[i].cache, d_reward[i], nullptr, out.grad);
        return out;
    }

    const CSReport cs = cs_divergence_grad(ex, ey, kernel);
    out.cs = cs.value;
    out.loss = out.mse - lambda * cs.value;
    for (std::size_t i = 0; i < total; ++i) {
        const Eigen::RowVectorXd d_class =
            i < np ? Eigen::RowVectorXd(-lambda * cs.grad_x->row(static_cast<Eigen::Index>(i)))
                   : Eigen::RowVectorXd(-lambda * cs.grad_y->row(static_cast<Eigen::Index>(i - np)));
        backward_accumulate(params, fw[i].cache, d_reward[i], &d_class, out.grad);
    }
    return out;
}

struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    std::vector<double> m, v;
    std::int64_t t = 0;

    /// Decoupled decay first, then the bias-corrected Adam update.
    void step(RewardParams& params, const RewardParams& grad) {
        std::vector<double>& p = params.mutable_data();
        const std::vector<double>& g = grad.data();
        if (g.size() != p.size()) throw Error(errc::shape_mismatch, "gradient size differs from parameters");
        if (m.empty()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        const double decay = 1.0 - lr * weight_decay;
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] *= decay;
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

struct TrainConfig {
    double lambda = 1.0;
    double lr = 1e-3;
    int epochs = 100;
    int batch_preferred = 8;
    int batch_dispreferred = 8;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    KernelConfig kernel = KernelConfig::median();
};

struct EpochStats {
    double mse = 0.0;
    double cs = 0.0;
    double total = 0.0;
};

struct TrainResult {
    RewardParams params;
    std::vector<EpochStats> history;
};

/// Mini-batch AdamW. Each epoch reshuffles both populations; the number of
/// batches is set by the larger population and the smaller one wraps
/// around, so every batch holds both. History entries are batch means.
inline TrainResult train(const SampleSplit& data, const TrainConfig& cfg, const ModelDims& dims = {}) {
    if (data.preferred.empty() || data.dispreferred.empty())
        throw Error(errc::empty_population, "training needs both preferred and dispreferred samples");
    if (cfg.epochs < 0 || cfg.batch_preferred < 1 || cfg.batch_dispreferred < 1 || !(cfg.lr > 0.0))
        throw Error(errc::invalid_argument, "epochs >= 0, batch sizes >= 1 and lr > 0 required");

    TrainResult out{init_params(cfg.seed, dims), {}};
    AdamW opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    std::mt19937_64 shuffler(cfg.seed ^ 0x5DEECE66DULL);

    const std::size_t np = data.preferred.size(), nd = data.dispreferred.size();
    const std::size_t bp = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_preferred), np);
    const std::size_t bd = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_dispreferred), nd);
    const std::size_t batches = std::max((np + bp - 1) / bp, (nd + bd - 1) / bd);
    std::vector<std::size_t> op(np), od(nd);
    std::vector<const TrainSample*> xp(bp), xd(bd);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(op.begin(), op.end(), 0);
        std::iota(od.begin(), od.end(), 0);
        std::shuffle(op.begin(), op.end(), shuffler);
        std::shuffle(od.begin(), od.end(), shuffler);
        EpochStats stats;
        for (std::size_t b = 0; b < batches; ++b) {
            for (std::size_t i = 0; i < bp; ++i) xp[i] = &data.preferred[op[(b * bp + i) % np]];
            for (std::size_t i = 0; i < bd; ++i) xd[i] = &data.dispreferred[od[(b * bd + i) % nd]];
            const BatchLoss bl = loss_batch(out.params, xp, xd, cfg.lambda, cfg.kernel);
            stats.mse += bl.mse;
            stats.cs += bl.cs;
            stats.total += bl.loss;
            opt.step(out.params, bl.grad);
        }
        const double inv = 1.0 / static_cast<double>(batches);
        out.history.push_back({stats.mse * inv, stats.cs * inv, stats.total * inv});
    }
    return out;
}

inline EmbeddingBatch class_embeddings(const RewardParams& params, const std::vector<TrainSample>& samples) {
    EmbeddingBatch e(static_cast<Eigen::Index>(samples.size()), params.dims().d_model);
    for (std::size_t i = 0; i < samples.size(); ++i)
        e.row(static_cast<Eigen::Index>(i)) = forward(params, samples[i].patch, samples[i].text).class_embedding;
    return e;
}

/// D_CS between the class embeddings of the two whole populations.
inline double population_divergence(const RewardParams& params, const SampleSplit& data,
                                    const KernelConfig& kernel = KernelConfig::median()) {
    return cs_divergence(class_embeddings(params, data.preferred), class_embeddings(params, data.dispreferred),
                         kernel)
        .value;
}

/// Fraction of (preferred, dispreferred) pairs whose rewards are strictly
/// ordered the right way.
inline double ranking_accuracy(const RewardParams& params, const SampleSplit& data) {
    if (data.preferred.empty() || data.dispreferred.empty())
        throw Error(errc::empty_population, "ranking accuracy needs both populations");
    std::vector<double> rp, rd;
    for (const auto& s : data.preferred) rp.push_back(forward(params, s.patch, s.text).reward);
    for (const auto& s : data.dispreferred) rd.push_back(forward(params, s.patch, s.text).reward);
    std::size_t good = 0;
    for (double a : rp)
        for (double b : rd) good += a > b ? 1 : 0;
    return static_cast<double>(good) / static_cast<double>(rp.size() * rd.size());
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kParamsFormatVersion = 1;

inline nlohmann::json params_to_json(const RewardParams& p) {
    const ModelDims& d = p.dims();
    nlohmann::json tensors = nlohmann::json::array();
    for (int t = 0; t < static_cast<int>(Tensor::count); ++t) {
        const auto view = p.view(static_cast<Tensor>(t));
        tensors.push_back({{"name", kTensorNames[static_cast<std::size_t>(t)]},
                           {"shape", {view.rows(), view.cols()}},
                           {"values", std::vector<double>(view.data(), view.data() + view.size())}});
    }
    return {{"format_version", kParamsFormatVersion},
            {"dims",
             {{"d_model", d.d_model},
              {"n_patches", d.n_patches},
              {"patch_feature_dim", d.patch_feature_dim},
              {"text_tokens", d.text_tokens},
              {"d_text", d.d_text},
              {"head_hidden", d.head_hidden}}},
            {"tensors", tensors}};
}

inline RewardParams params_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format_version").get<int>() != kParamsFormatVersion)
            throw Error(errc::parse, "unsupported params format_version");
        const auto& jd = j.at("dims");
        ModelDims d;
        d.d_model = jd.at("d_model").get<int>();
        d.n_patches = jd.at("n_patches").get<int>();
        d.patch_feature_dim = jd.at("patch_feature_dim").get<int>();
        d.text_tokens = jd.at("text_tokens").get<int>();
        d.d_text = jd.at("d_text").get<int>();
        d.head_hidden = jd.at("head_hidden").get<int>();
        if (d.n_patches != kPatchCount || d.patch_feature_dim != kSlotsPerPatch * kFeatureDim)
            throw Error(errc::shape_mismatch, "params were built for a different patch grid");
        RewardParams p(d);
        const auto& tensors = j.at("tensors");
        if (tensors.size() != static_cast<std::size_t>(Tensor::count))
            throw Error(errc::shape_mismatch, "wrong number of tensors");
        for (int t = 0; t < static_cast<int>(Tensor::count); ++t) {
            const auto& jt = tensors.at(static_cast<std::size_t>(t));
            if (jt.at("name").get<std::string>() != kTensorNames[static_cast<std::size_t>(t)])
                throw Error(errc::shape_mismatch, "unexpected tensor '" + jt.at("name").get<std::string>() + "'");
            auto view = p.mutable_view(static_cast<Tensor>(t));
            const auto shape = jt.at("shape").get<std::vector<long>>();
            const auto values = jt.at("values").get<std::vector<double>>();
            if (shape.size() != 2 || shape[0] != view.rows() || shape[1] != view.cols() ||
                values.size() != static_cast<std::size_t>(view.size()))
                throw Error(errc::shape_mismatch, std::string("tensor ") + kTensorNames[static_cast<std::size_t>(t)] +
                                                      " has the wrong shape");
            std::copy(values.begin(), values.end(), view.data());
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error(errc::parse, std::string("malformed params document: ") + e.what());
    }
}

} // namespace unpref

#endif // UNPREF_REWARD_TRAIN_HPP
