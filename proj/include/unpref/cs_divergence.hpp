#ifndef UNPREF_CS_DIVERGENCE_HPP
#define UNPREF_CS_DIVERGENCE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "unpref/error.hpp"

namespace unpref {

/// N x d sample matrix, one embedding per row.
using EmbeddingBatch = Eigen::MatrixXd;

/// Either an explicit Gaussian bandwidth or the pooled median heuristic.
struct KernelConfig {
    struct Median {};
    std::variant<Median, double> bandwidth = Median{};

    static KernelConfig median() { return {}; }
    static KernelConfig fixed(double sigma) { return {sigma}; }
    bool is_median() const { return std::holds_alternative<Median>(bandwidth); }
};

struct CSReport {
    double value = 0.0;
    double bandwidth_used = 0.0;
    std::optional<Eigen::MatrixXd> grad_x;
    std::optional<Eigen::MatrixXd> grad_y;
    /// log of the normalized kernel sums: (log S_xx, log S_yy, log S_xy).
    std::array<double, 3> term_logs{};
};

namespace detail {

inline void check_bandwidth(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw Error(errc::invalid_bandwidth, "bandwidth must be a positive finite number");
}

inline void check_batches(const EmbeddingBatch& x, const EmbeddingBatch& y) {
    if (x.rows() < 1 || y.rows() < 1) throw Error(errc::empty_population, "both batches need at least one row");
    if (x.cols() != y.cols())
        throw Error(errc::dimension_mismatch, "embedding dimensions differ: " + std::to_string(x.cols()) +
                                                  " vs " + std::to_string(y.cols()));
    if (!x.allFinite() || !y.allFinite()) throw Error(errc::non_finite, "embeddings contain non-finite values");
}

inline double checked_log(double s, const char* which) {
    if (!(s > 0.0)) throw Error(errc::numeric_domain, std::string("kernel sum ") + which + " underflowed to zero");
    return std::log(s);
}

} // namespace detail

inline double gaussian_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                              const Eigen::Ref<const Eigen::VectorXd>& y, double sigma) {
    detail::check_bandwidth(sigma);
    if (x.size() != y.size()) throw Error(errc::dimension_mismatch, "kernel arguments differ in dimension");
    return std::exp(-(x - y).squaredNorm() / (2.0 * sigma * sigma));
}

/// Median of the nonzero pairwise distances together with the row pairs
/// (indices into the pooled x-then-y sample) it was computed from: one pair
/// for an odd count, the two middle pairs for an even one.
struct MedianPick {
    double sigma = 1.0;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
};

inline MedianPick median_pick(const EmbeddingBatch& x, const EmbeddingBatch& y) {
    EmbeddingBatch pooled(x.rows() + y.rows(), x.cols());
    pooled << x, y;
    struct Entry {
        double dist;
        Eigen::Index i, j;
    };
    std::vector<Entry> d;
    d.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
    for (Eigen::Index i = 0; i < pooled.rows(); ++i)
        for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) {
            const double dist = (pooled.row(i) - pooled.row(j)).norm();
            if (dist > 0.0) d.push_back({dist, i, j});
        }
    MedianPick out;
    if (d.empty()) return out;
    const auto less = [](const Entry& a, const Entry& b) {
        return a.dist < b.dist || (a.dist == b.dist && (a.i < b.i || (a.i == b.i && a.j < b.j)));
    };
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end(), less);
    const Entry upper = d[mid];
    if (d.size() % 2 == 1) {
        out.sigma = upper.dist;
        out.pairs = {{upper.i, upper.j}};
        return out;
    }
    const Entry lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), less);
    out.sigma = 0.5 * (lower.dist + upper.dist);
    out.pairs = {{lower.i, lower.j}, {upper.i, upper.j}};
    return out;
}

/// Median of the nonzero pairwise distances of the pooled rows of x and y
/// (mean of the two middle values for an even count); 1.0 if every point
/// coincides.
inline double median_bandwidth(const EmbeddingBatch& x, const EmbeddingBatch& y) {
    return median_pick(x, y).sigma;
}

inline double resolve_bandwidth(const KernelConfig& cfg, const EmbeddingBatch& x, const EmbeddingBatch& y) {
    if (cfg.is_median()) return median_bandwidth(x, y);
    const double sigma = std::get<double>(cfg.bandwidth);
    detail::check_bandwidth(sigma);
    return sigma;
}

namespace detail {

using RowMajorSamples = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline double sq_dist(const double* a, const double* b, Eigen::Index d) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
        const double t = a[k] - b[k];
        s += t * t;
    }
    return s;
}

} // namespace detail

/// Sum of k(a_i, b_j) over all pairs, accumulated row by row in index order.
inline double kernel_sum(const EmbeddingBatch& a, const EmbeddingBatch& b, double sigma) {
    const detail::RowMajorSamples ra = a, rb = b;
    const Eigen::Index d = a.cols();
    const double scale = -1.0 / (2.0 * sigma * sigma);
    double total = 0.0;
    for (Eigen::Index i = 0; i < ra.rows(); ++i) {
        const double* pa = ra.data() + i * d;
        double row = 0.0;
        for (Eigen::Index j = 0; j < rb.rows(); ++j) row += std::exp(scale * detail::sq_dist(pa, rb.data() + j * d, d));
        total += row;
    }
    return total;
}

/// Sum of k(a_i, a_j) over all ordered pairs, using symmetry.
inline double kernel_sum_self(const EmbeddingBatch& a, double sigma) {
    const detail::RowMajorSamples ra = a;
    const Eigen::Index d = a.cols();
    const double scale = -1.0 / (2.0 * sigma * sigma);
    double off = 0.0;
    for (Eigen::Index i = 0; i < ra.rows(); ++i) {
        const double* pa = ra.data() + i * d;
        double row = 0.0;
        for (Eigen::Index j = i + 1; j < ra.rows(); ++j) row += std::exp(scale * detail::sq_dist(pa, ra.data() + j * d, d));
        off += row;
    }
    return static_cast<double>(a.rows()) + 2.0 * off;
}

/// Normalized kernel sums (1/m^2) S_xx, (1/n^2) S_yy, (1/mn) S_xy.
struct KernelMeans {
    double xx = 0.0, yy = 0.0, xy = 0.0;
};

inline KernelMeans kernel_means(const EmbeddingBatch& x, const EmbeddingBatch& y, double sigma) {
    const double m = static_cast<double>(x.rows()), n = static_cast<double>(y.rows());
    return {kernel_sum_self(x, sigma) / (m * m), kernel_sum_self(y, sigma) / (n * n),
            kernel_sum(x, y, sigma) / (m * n)};
}

/// Divergence from normalized kernel sums:
/// log(xx) + log(yy) - 2 log(xy).
inline CSReport cs_from_means(const KernelMeans& k, double sigma) {
    CSReport r;
    r.bandwidth_used = sigma;
    r.term_logs = {detail::checked_log(k.xx, "S_xx"), detail::checked_log(k.yy, "S_yy"),
                   detail::checked_log(k.xy, "S_xy")};
    r.value = r.term_logs[0] + r.term_logs[1] - 2.0 * r.term_logs[2];
    return r;
}

/// Empirical Cauchy-Schwarz divergence between the row samples of x and y
/// under a Gaussian kernel. Batch sizes may differ.
inline CSReport cs_divergence(const EmbeddingBatch& x, const EmbeddingBatch& y, const KernelConfig& cfg = {}) {
    detail::check_batches(x, y);
    const double sigma = resolve_bandwidth(cfg, x, y);
    return cs_from_means(kernel_means(x, y, sigma), sigma);
}

/// As cs_divergence, plus the gradient of the value with respect to every
/// row of x and y. For a median bandwidth the gradient also flows through
/// sigma via the pair distance(s) that define the median, which makes it the
/// gradient of the reported value; the divergence is then invariant to a
/// common rescaling of x and y, and so is the descent direction.
inline CSReport cs_divergence_grad(const EmbeddingBatch& x, const EmbeddingBatch& y, const KernelConfig& cfg = {}) {
    detail::check_batches(x, y);
    MedianPick pick;
    if (cfg.is_median()) {
        pick = median_pick(x, y);
    } else {
        pick.sigma = std::get<double>(cfg.bandwidth);
        detail::check_bandwidth(pick.sigma);
    }
    const double sigma = pick.sigma;
    const double s2 = sigma * sigma;
    const double scale = -1.0 / (2.0 * s2);
    const Eigen::Index m = x.rows(), n = y.rows(), d = x.cols();
    const detail::RowMajorSamples rx = x, ry = y;

    // For each row a_i: sum_j k(a_i, b_j) (b_j - a_i). Also returns the raw
    // kernel sum and the distance-weighted sum sum k |a_i - b_j|^2.
    struct Pulled {
        detail::RowMajorSamples pull;
        double sum = 0.0, sq_weighted = 0.0;
    };
    const auto pull = [&](const detail::RowMajorSamples& a, const detail::RowMajorSamples& b) {
        Pulled out{detail::RowMajorSamples::Zero(a.rows(), d)};
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double* pa = a.data() + i * d;
            double* po = out.pull.data() + i * d;
            double row = 0.0, row_sq = 0.0;
            for (Eigen::Index j = 0; j < b.rows(); ++j) {
                const double* pb = b.data() + j * d;
                const double dist2 = detail::sq_dist(pa, pb, d);
                const double k = std::exp(scale * dist2);
                row += k;
                row_sq += k * dist2;
                for (Eigen::Index c = 0; c < d; ++c) po[c] += k * (pb[c] - pa[c]);
            }
            out.sum += row;
            out.sq_weighted += row_sq;
        }
        return out;
    };
    const Pulled pxx = pull(rx, rx), pyy = pull(ry, ry), pxy = pull(rx, ry), pyx = pull(ry, rx);

    KernelMeans means{pxx.sum / static_cast<double>(m * m), pyy.sum / static_cast<double>(n * n),
                      pxy.sum / static_cast<double>(m * n)};
    CSReport r = cs_from_means(means, sigma);
    Eigen::MatrixXd gx = (2.0 / (s2 * pxx.sum)) * pxx.pull - (2.0 / (s2 * pxy.sum)) * pxy.pull;
    Eigen::MatrixXd gy = (2.0 / (s2 * pyy.sum)) * pyy.pull - (2.0 / (s2 * pxy.sum)) * pyx.pull;

    if (cfg.is_median() && !pick.pairs.empty()) {
        // dS/dsigma = sum k |a-b|^2 / sigma^3 for each block.
        const double s3 = s2 * sigma;
        const double d_sigma = pxx.sq_weighted / (s3 * pxx.sum) + pyy.sq_weighted / (s3 * pyy.sum) -
                               2.0 * pxy.sq_weighted / (s3 * pxy.sum);
        const double share = d_sigma / static_cast<double>(pick.pairs.size());
        const auto point = [&](Eigen::Index k) -> Eigen::RowVectorXd { return k < m ? x.row(k) : y.row(k - m); };
        const auto add_to = [&](Eigen::Index k, const Eigen::RowVectorXd& v) {
            if (k < m)
                gx.row(k) += v;
            else
                gy.row(k - m) += v;
        };
        for (const auto& [i, j] : pick.pairs) {
            const Eigen::RowVectorXd diff = point(i) - point(j);
            const Eigen::RowVectorXd g = share * diff / diff.norm();
            add_to(i, g);
            add_to(j, -g);
        }
    }
    r.grad_x = std::move(gx);
    r.grad_y = std::move(gy);
    return r;
}

/// Kernel-mean-embedding form, -2 log(<mu_x, mu_y> / (|mu_x| |mu_y|)),
/// evaluated from the same kernel sums.
inline double cs_divergence_embedding_form(const EmbeddingBatch& x, const EmbeddingBatch& y, double sigma) {
    detail::check_batches(x, y);
    detail::check_bandwidth(sigma);
    const KernelMeans k = kernel_means(x, y, sigma);
    if (!(k.xy > 0.0)) throw Error(errc::numeric_domain, "cross kernel mean underflowed to zero");
    return -2.0 * std::log(k.xy / std::sqrt(k.xx * k.yy));
}

/// |log-sum form - embedding form|; the two are algebraically equal.
inline double mean_embedding_identity_check(const EmbeddingBatch& x, const EmbeddingBatch& y, double sigma) {
    const double direct = cs_divergence(x, y, KernelConfig::fixed(sigma)).value;
    return std::abs(direct - cs_divergence_embedding_form(x, y, sigma));
}

/// Population divergence between N(mu1, cov1) and N(mu2, cov2) from the
/// Gaussian product integrals.
inline double gaussian_closed_form(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1,
                                   const Eigen::VectorXd& mu2, const Eigen::MatrixXd& cov2) {
    const Eigen::Index d = mu1.size();
    if (mu2.size() != d || cov1.rows() != d || cov1.cols() != d || cov2.rows() != d || cov2.cols() != d)
        throw Error(errc::dimension_mismatch, "mean/covariance shapes disagree");
    const auto log_density_at = [&](const Eigen::VectorXd& diff, const Eigen::MatrixXd& cov) {
        if (!cov.isApprox(cov.transpose(), 1e-12))
            throw Error(errc::not_spd, "covariance is not symmetric");
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) throw Error(errc::not_spd, "covariance is not positive definite");
        const Eigen::VectorXd z = llt.matrixL().solve(diff);
        const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        return -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
    };
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(d);
    const double log_pq = log_density_at(mu1 - mu2, cov1 + cov2);
    const double log_pp = log_density_at(zero, 2.0 * cov1);
    const double log_qq = log_density_at(zero, 2.0 * cov2);
    return -2.0 * log_pq + log_pp + log_qq;
}

} // namespace unpref

#endif // UNPREF_CS_DIVERGENCE_HPP
