#ifndef UNPREF_REWARD_NET_HPP
#define UNPREF_REWARD_NET_HPP

#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "unpref/error.hpp"
#include "unpref/face_features.hpp"
#include "unpref/mesh_core.hpp"
#include "unpref/mesh_prep.hpp"

namespace unpref {

struct ModelDims {
    int d_model = 128;
    int n_patches = kPatchCount;
    int patch_feature_dim = kSlotsPerPatch * kFeatureDim;  // 640
    int text_tokens = 16;
    int d_text = 128;
    int head_hidden = 64;

    bool operator==(const ModelDims&) const = default;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;

/// Named tensor slots inside the flat parameter buffer.
enum class Tensor : int {
    patch_projection,  // patch_feature_dim x d_model
    patch_bias,        // 1 x d_model
    class_token,       // 1 x d_model
    query,             // d_model x d_model
    key,               // d_text x d_model
    value,             // d_text x d_model
    attn_out,          // d_model x d_model
    head_hidden,       // d_model x head_hidden
    head_hidden_bias,  // 1 x head_hidden
    head_out,          // head_hidden x 1
    head_out_bias,     // 1 x 1
    count
};

inline constexpr std::array<const char*, static_cast<int>(Tensor::count)> kTensorNames = {
    "patch_projection", "patch_bias", "class_token", "query", "key", "value",
    "attn_out", "head_hidden", "head_hidden_bias", "head_out", "head_out_bias"};

struct TensorShape {
    int rows, cols;
    std::size_t offset;
};

inline std::array<TensorShape, static_cast<int>(Tensor::count)> tensor_layout(const ModelDims& d) {
    const std::array<std::pair<int, int>, static_cast<int>(Tensor::count)> shapes = {{
        {d.patch_feature_dim, d.d_model}, {1, d.d_model}, {1, d.d_model}, {d.d_model, d.d_model},
        {d.d_text, d.d_model}, {d.d_text, d.d_model}, {d.d_model, d.d_model}, {d.d_model, d.head_hidden},
        {1, d.head_hidden}, {d.head_hidden, 1}, {1, 1}}};
    std::array<TensorShape, static_cast<int>(Tensor::count)> out{};
    std::size_t offset = 0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        out[i] = {shapes[i].first, shapes[i].second, offset};
        offset += static_cast<std::size_t>(shapes[i].first) * shapes[i].second;
    }
    return out;
}

/// All trainable weights in one contiguous buffer.
///
/// Every mutable access bumps `revision()`, and copies get a fresh `id()`,
/// so a ForwardCache can tell whether it still describes these weights.
class RewardParams {
public:
    explicit RewardParams(const ModelDims& dims = {})
        : dims_(dims), layout_(tensor_layout(dims)), id_(next_id()) {
        const auto& last = layout_.back();
        data_.assign(last.offset + static_cast<std::size_t>(last.rows) * last.cols, 0.0);
    }
    RewardParams(const RewardParams& o)
        : dims_(o.dims_), layout_(o.layout_), data_(o.data_), id_(next_id()) {}
    RewardParams& operator=(const RewardParams& o) {
        dims_ = o.dims_;
        layout_ = o.layout_;
        data_ = o.data_;
        ++revision_;
        return *this;
    }
    RewardParams(RewardParams&&) noexcept = default;
    RewardParams& operator=(RewardParams&&) noexcept = default;

    const ModelDims& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& mutable_data() {
        ++revision_;
        return data_;
    }
    std::uint64_t id() const { return id_; }
    std::uint64_t revision() const { return revision_; }

    const TensorShape& shape(Tensor t) const { return layout_[static_cast<int>(t)]; }
    ConstMatrixView view(Tensor t) const {
        const auto& s = shape(t);
        return ConstMatrixView(data_.data() + s.offset, s.rows, s.cols);
    }
    MatrixView mutable_view(Tensor t) {
        ++revision_;
        const auto& s = shape(t);
        return MatrixView(data_.data() + s.offset, s.rows, s.cols);
    }

    void set_zero() { std::fill(mutable_data().begin(), data_.end(), 0.0); }

private:
    static std::uint64_t next_id() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    ModelDims dims_;
    std::array<TensorShape, static_cast<int>(Tensor::count)> layout_;
    std::vector<double> data_;
    std::uint64_t id_;
    std::uint64_t revision_ = 0;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights from mt19937_64(seed);
/// biases start at zero. The class token uses fan_in = d_model.
inline RewardParams init_params(std::uint64_t seed, const ModelDims& dims = {}) {
    RewardParams p(dims);
    std::mt19937_64 gen(seed);
    for (int t = 0; t < static_cast<int>(Tensor::count); ++t) {
        const auto tensor = static_cast<Tensor>(t);
        if (tensor == Tensor::patch_bias || tensor == Tensor::head_hidden_bias || tensor == Tensor::head_out_bias)
            continue;
        auto w = p.mutable_view(tensor);
        const int fan_in = tensor == Tensor::class_token ? dims.d_model : static_cast<int>(w.rows());
        std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(gen);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Text tokens

/// text_tokens x d_text; rows past the prompt length are zero.
struct TextTokens {
    RowMatrix tokens;
};

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Deterministic stand-in for a learned text encoder: each lowercase
/// whitespace-separated word seeds mt19937_64 with FNV-1a(word) mixed with
/// `seed`, and becomes a Gaussian direction normalized to unit length.
inline TextTokens text_featurize(std::string_view prompt, std::uint64_t seed = 0, const ModelDims& dims = {}) {
    TextTokens out{RowMatrix::Zero(dims.text_tokens, dims.d_text)};
    std::string lowered(prompt);
    for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    int row = 0;
    for (std::string_view word : detail::split_ws(lowered)) {
        if (row >= dims.text_tokens) break;
        std::mt19937_64 gen(fnv1a64(word) ^ (seed * 0x9E3779B97F4A7C15ULL));
        std::normal_distribution<double> normal;
        Eigen::RowVectorXd v(dims.d_text);
        for (int k = 0; k < dims.d_text; ++k) v(k) = normal(gen);
        out.tokens.row(row++) = v / v.norm();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

/// Activations kept for the backward pass.
struct ForwardCache {
    std::uint64_t params_id = 0;
    std::uint64_t params_revision = 0;
    std::vector<std::uint8_t> mask;
    int occupied_patches = 0;
    Eigen::RowVectorXd mean_patch_input;  // mean of flattened occupied patches
    RowMatrix text;                        // non-padding text rows
    Eigen::RowVectorXd class_in;           // class token + pooled patch tokens
    Eigen::RowVectorXd query;
    RowMatrix keys, values;
    Eigen::RowVectorXd attention;  // softmax weights over text rows
    Eigen::RowVectorXd attended;
    Eigen::RowVectorXd class_embedding;
    Eigen::RowVectorXd hidden;  // tanh activations
    double reward = 0.0;
};

struct ForwardResult {
    double reward;
    Eigen::RowVectorXd class_embedding;
    ForwardCache cache;
};

/// Scores one (patch grid, text) pair.
///
/// Mesh tokens are the projected patches with the class token prepended;
/// the class token starts as the learnable vector plus the mean projected
/// token of the occupied patches. Mesh tokens query the text tokens through
/// one cross-attention head with a residual connection. Only the class
/// token row reaches the head, so only that row is evaluated.
inline ForwardResult forward(const RewardParams& params, const PatchTensor& patch, const TextTokens& text) {
    const ModelDims& d = params.dims();
    if (patch.values.size() != static_cast<std::size_t>(d.n_patches) * d.patch_feature_dim ||
        patch.mask.size() != static_cast<std::size_t>(d.n_patches) * kSlotsPerPatch)
        throw Error(errc::shape_mismatch, "patch tensor does not match model dims");
    if (text.tokens.rows() != d.text_tokens || text.tokens.cols() != d.d_text)
        throw Error(errc::shape_mismatch, "text tokens must be " + std::to_string(d.text_tokens) + "x" +
                                              std::to_string(d.d_text));

    ForwardCache c;
    c.params_id = params.id();
    c.params_revision = params.revision();
    c.mask = patch.mask;
    c.mean_patch_input = Eigen::RowVectorXd::Zero(d.patch_feature_dim);
    for (int p = 0; p < d.n_patches; ++p) {
        bool any = false;
        for (int s = 0; s < kSlotsPerPatch && !any; ++s) any = patch.occupied(p, s);
        if (!any) continue;
        ++c.occupied_patches;
        c.mean_patch_input += Eigen::Map<const Eigen::RowVectorXd>(patch.patch_data(p), d.patch_feature_dim);
    }
    if (c.occupied_patches == 0) throw Error(errc::empty_mesh, "patch tensor has no occupied slot");
    c.mean_patch_input /= static_cast<double>(c.occupied_patches);

    c.class_in = params.view(Tensor::class_token) + c.mean_patch_input * params.view(Tensor::patch_projection) +
                 params.view(Tensor::patch_bias);

    int valid = 0;
    while (valid < text.tokens.rows() && !text.tokens.row(valid).isZero(0.0)) ++valid;
    c.text = text.tokens.topRows(valid);
    c.query = c.class_in * params.view(Tensor::query);
    c.attended = Eigen::RowVectorXd::Zero(d.d_model);
    if (valid > 0) {
        c.keys = c.text * params.view(Tensor::key);
        c.values = c.text * params.view(Tensor::value);
        Eigen::RowVectorXd logits = (c.query * c.keys.transpose()) / std::sqrt(static_cast<double>(d.d_model));
        const double mx = logits.maxCoeff();
        c.attention = (logits.array() - mx).exp().matrix();
        c.attention /= c.attention.sum();
        c.attended = c.attention * c.values;
    }
    c.class_embedding = c.class_in + c.attended * params.view(Tensor::attn_out);
    c.hidden = (c.class_embedding * params.view(Tensor::head_hidden) + params.view(Tensor::head_hidden_bias))
                   .array()
                   .tanh()
                   .matrix();
    c.reward = (c.hidden * params.view(Tensor::head_out))(0, 0) + params.view(Tensor::head_out_bias)(0, 0);

    ForwardResult r{c.reward, c.class_embedding, {}};
    r.cache = std::move(c);
    return r;
}

/// Adds d(objective)/d(params) into `grad` for upstream gradients on the
/// reward and on the class embedding. If `input_grad` is given it receives
/// d(objective)/d(patch tensor), zero on unoccupied slots.
inline void backward_accumulate(const RewardParams& params, const ForwardCache& c, double d_reward,
                                const Eigen::RowVectorXd* d_class, RewardParams& grad,
                                PatchTensor* input_grad = nullptr) {
    if (c.params_id != params.id() || c.params_revision != params.revision())
        throw Error(errc::stale_cache, "forward cache was produced with different parameters");
    if (grad.dims() != params.dims()) throw Error(errc::shape_mismatch, "gradient buffer dims differ");
    const ModelDims& d = params.dims();
    std::vector<double>& g = grad.mutable_data();
    const auto gview = [&](Tensor t) {
        const auto& s = grad.shape(t);
        return MatrixView(g.data() + s.offset, s.rows, s.cols);
    };

    // Head.
    gview(Tensor::head_out_bias)(0, 0) += d_reward;
    gview(Tensor::head_out) += c.hidden.transpose() * d_reward;
    const Eigen::RowVectorXd d_hidden_pre =
        (d_reward * params.view(Tensor::head_out).transpose()).array() * (1.0 - c.hidden.array().square());
    gview(Tensor::head_hidden_bias) += d_hidden_pre;
    gview(Tensor::head_hidden) += c.class_embedding.transpose() * d_hidden_pre;
    Eigen::RowVectorXd d_emb = d_hidden_pre * params.view(Tensor::head_hidden).transpose();
    if (d_class) {
        if (d_class->size() != d.d_model) throw Error(errc::shape_mismatch, "class-embedding gradient size");
        d_emb += *d_class;
    }

    // Residual cross-attention.
    Eigen::RowVectorXd d_class_in = d_emb;
    gview(Tensor::attn_out) += c.attended.transpose() * d_emb;
    if (c.text.rows() > 0) {
        const Eigen::RowVectorXd d_attended = d_emb * params.view(Tensor::attn_out).transpose();
        const Eigen::RowVectorXd d_weights = d_attended * c.values.transpose();
        const RowMatrix d_values = c.attention.transpose() * d_attended;
        gview(Tensor::value) += c.text.transpose() * d_values;
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d.d_model));
        const Eigen::RowVectorXd d_logits =
            (c.attention.array() * (d_weights.array() - c.attention.dot(d_weights))).matrix() * inv_sqrt;
        const Eigen::RowVectorXd d_query = d_logits * c.keys;
        const RowMatrix d_keys = d_logits.transpose() * c.query;
        gview(Tensor::key) += c.text.transpose() * d_keys;
        gview(Tensor::query) += c.class_in.transpose() * d_query;
        d_class_in += d_query * params.view(Tensor::query).transpose();
    }

    // Class token and pooled patch projection.
    gview(Tensor::class_token) += d_class_in;
    gview(Tensor::patch_bias) += d_class_in;
    gview(Tensor::patch_projection) += c.mean_patch_input.transpose() * d_class_in;

    if (input_grad) {
        const Eigen::RowVectorXd per_patch = (d_class_in * params.view(Tensor::patch_projection).transpose()) /
                                             static_cast<double>(c.occupied_patches);
        input_grad->mask = c.mask;
        std::fill(input_grad->values.begin(), input_grad->values.end(), 0.0);
        for (int p = 0; p < d.n_patches; ++p)
            for (int s = 0; s < kSlotsPerPatch; ++s) {
                if (!c.mask[static_cast<std::size_t>(p) * kSlotsPerPatch + s]) continue;
                for (int k = 0; k < kFeatureDim; ++k) input_grad->at(p, s, k) = per_patch(s * kFeatureDim + k);
            }
    }
}

struct Gradients {
    RewardParams params;
    PatchTensor input;
};

inline Gradients backward(const RewardParams& params, const ForwardCache& cache, double d_reward,
                          const Eigen::RowVectorXd* d_class = nullptr) {
    Gradients g{RewardParams(params.dims()), PatchTensor{}};
    backward_accumulate(params, cache, d_reward, d_class, g.params, &g.input);
    return g;
}

// ---------------------------------------------------------------------------
// Mesh -> grid

struct PreparedInput {
    FeatureMatrix features;
    Patchified grid;
};

/// featurize + patchify, with the assignment kept for gradient routing.
inline PreparedInput prepare_mesh(const TriangleMesh& mesh) {
    if (mesh.faces.size() > static_cast<std::size_t>(kFaceCapacity))
        throw Error(errc::capacity, "mesh has " + std::to_string(mesh.faces.size()) +
                                        " faces; the patch grid holds " + std::to_string(kFaceCapacity) +
                                        " (simplify or fuse first)");
    PreparedInput in;
    in.features = featurize(mesh);
    in.grid = patchify(mesh, in.features);
    return in;
}

inline double score(const RewardParams& params, const TriangleMesh& mesh, std::string_view prompt,
                    std::uint64_t text_seed = 0) {
    const PreparedInput in = prepare_mesh(mesh);
    return forward(params, in.grid.tensor, text_featurize(prompt, text_seed, params.dims())).reward;
}

} // namespace unpref

#endif // UNPREF_REWARD_NET_HPP
