#ifndef UNPREF_EQUIVALENCE_HPP
#define UNPREF_EQUIVALENCE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "unpref/cs_divergence.hpp"
#include "unpref/error.hpp"
#include "unpref/parallel.hpp"

namespace unpref {

/// Prompt feature c ~ U[prompt_low, prompt_high]; preferred samples
/// ~ N(offset + c * shift, noise_sd^2 I), dispreferred ~ N(c * shift, noise_sd^2 I).
struct Scenario {
    Eigen::VectorXd offset = Eigen::Vector2d(1.5, 0.0);
    Eigen::VectorXd shift = Eigen::Vector2d(0.0, 1.5);
    double prompt_low = -1.0;
    double prompt_high = 1.0;
    double noise_sd = 1.0;

    static Scenario identical() {
        Scenario s;
        s.offset.setZero();
        return s;
    }
    Eigen::Index dim() const { return offset.size(); }
};

/// One trial's samples at the largest size; smaller sizes use row prefixes.
/// Preferred samples x and the dispreferred noise are shared by both
/// routes, which differ only in the prompts conditioning y.
struct TrialDraw {
    EmbeddingBatch x;
    EmbeddingBatch y_paired;
    EmbeddingBatch y_unpaired;
};

inline TrialDraw draw_trial(const Scenario& sc, Eigen::Index size, std::uint64_t seed,
                            bool inject_identical_prompts = false) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> prompt(sc.prompt_low, sc.prompt_high);
    std::normal_distribution<double> noise(0.0, sc.noise_sd);
    const Eigen::Index d = sc.dim();
    std::vector<double> c(static_cast<std::size_t>(size)), c_other(static_cast<std::size_t>(size));
    for (double& v : c) v = prompt(gen);
    for (double& v : c_other) v = prompt(gen);
    if (inject_identical_prompts) c_other = c;

    TrialDraw t{EmbeddingBatch(size, d), EmbeddingBatch(size, d), EmbeddingBatch(size, d)};
    for (Eigen::Index i = 0; i < size; ++i)
        for (Eigen::Index k = 0; k < d; ++k) t.x(i, k) = sc.offset(k) + c[static_cast<std::size_t>(i)] * sc.shift(k) + noise(gen);
    for (Eigen::Index i = 0; i < size; ++i)
        for (Eigen::Index k = 0; k < d; ++k) {
            const double w = noise(gen);
            t.y_paired(i, k) = c[static_cast<std::size_t>(i)] * sc.shift(k) + w;
            t.y_unpaired(i, k) = c_other[static_cast<std::size_t>(i)] * sc.shift(k) + w;
        }
    return t;
}

struct Theorem1Config {
    std::vector<int> sizes = {50, 100, 200, 400, 800, 1600, 3200};
    int trials = 20;
    std::uint64_t seed = 42;
    Scenario scenario;
    bool inject_identical_prompts = false;
    int threads = 1;
};

struct Theorem1Report {
    std::vector<int> sizes;
    std::vector<std::vector<double>> gaps;  // [size][trial]
    std::vector<std::vector<double>> paired, unpaired;
    std::vector<double> median_gaps;
    double fitted_slope = 0.0;
    double fitted_C = 0.0;
    double bandwidth = 0.0;

    bool medians_nonincreasing() const {
        for (std::size_t i = 1; i < median_gaps.size(); ++i)
            if (median_gaps[i] > median_gaps[i - 1]) return false;
        return true;
    }
};

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw Error(errc::invalid_argument, "median of an empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Least-squares slope of ys against xs.
inline double ls_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    return sxy / sxx;
}

/// Paired vs unpaired empirical divergence over a ladder of sample sizes
/// (n = m). The bandwidth is the median heuristic of the first trial's
/// largest paired sample, then held fixed for every size and trial.
inline Theorem1Report run_theorem1(const Theorem1Config& cfg) {
    if (cfg.sizes.size() < 2) throw Error(errc::invalid_argument, "need at least two sizes");
    for (std::size_t i = 0; i < cfg.sizes.size(); ++i) {
        if (cfg.sizes[i] < 10) throw Error(errc::invalid_argument, "sizes must be >= 10");
        if (i > 0 && cfg.sizes[i] <= cfg.sizes[i - 1])
            throw Error(errc::invalid_argument, "sizes must be strictly increasing");
    }
    if (cfg.trials < 5) throw Error(errc::invalid_argument, "trials must be >= 5");
    const Scenario& sc = cfg.scenario;
    if (sc.offset.size() != sc.shift.size() || sc.offset.size() < 1)
        throw Error(errc::dimension_mismatch, "scenario offset and shift must share a positive dimension");
    if (!(sc.prompt_high > sc.prompt_low) || !(sc.noise_sd > 0.0))
        throw Error(errc::invalid_argument, "scenario needs prompt_high > prompt_low and noise_sd > 0");

    const Eigen::Index largest = cfg.sizes.back();
    const std::size_t ns = cfg.sizes.size(), nt = static_cast<std::size_t>(cfg.trials);
    const auto trial_seed = [&](std::size_t t) { return mix_seed(cfg.seed ^ mix_seed(t + 1)); };

    Theorem1Report r;
    r.sizes = cfg.sizes;
    {
        const TrialDraw pilot = draw_trial(sc, largest, trial_seed(0), cfg.inject_identical_prompts);
        r.bandwidth = median_bandwidth(pilot.x, pilot.y_paired);
    }
    const KernelConfig kernel = KernelConfig::fixed(r.bandwidth);

    r.gaps.assign(ns, std::vector<double>(nt));
    r.paired = r.unpaired = r.gaps;
    parallel_for(nt, cfg.threads, [&](std::size_t t) {
        const TrialDraw draw = draw_trial(sc, largest, trial_seed(t), cfg.inject_identical_prompts);
        for (std::size_t s = 0; s < ns; ++s) {
            const Eigen::Index m = cfg.sizes[s];
            const EmbeddingBatch x = draw.x.topRows(m);
            const double dp = cs_divergence(x, draw.y_paired.topRows(m), kernel).value;
            const double du = cs_divergence(x, draw.y_unpaired.topRows(m), kernel).value;
            r.paired[s][t] = dp;
            r.unpaired[s][t] = du;
            r.gaps[s][t] = std::abs(dp - du);
        }
    });

    std::vector<double> log_m, log_med;
    for (std::size_t s = 0; s < ns; ++s) {
        r.median_gaps.push_back(median_of(r.gaps[s]));
        const double m = cfg.sizes[s];
        const double bound = 2.0 / std::sqrt(m);  // 1/sqrt(m) + 1/sqrt(n), n = m
        for (double g : r.gaps[s]) r.fitted_C = std::max(r.fitted_C, g / bound);
        log_m.push_back(std::log(m));
        log_med.push_back(std::log(r.median_gaps.back()));
    }
    // An exactly zero median (identical routes) has no finite log.
    const bool all_positive = std::all_of(r.median_gaps.begin(), r.median_gaps.end(), [](double g) { return g > 0.0; });
    r.fitted_slope = all_positive ? ls_slope(log_m, log_med) : 0.0;
    return r;
}

inline nlohmann::json to_json(const Theorem1Report& r) {
    return {{"sizes", r.sizes},
            {"gaps", r.gaps},
            {"paired", r.paired},
            {"unpaired", r.unpaired},
            {"median_gaps", r.median_gaps},
            {"fitted_slope", r.fitted_slope},
            {"fitted_C", r.fitted_C},
            {"bandwidth", r.bandwidth},
            {"medians_nonincreasing", r.medians_nonincreasing()}};
}

} // namespace unpref

#endif // UNPREF_EQUIVALENCE_HPP
