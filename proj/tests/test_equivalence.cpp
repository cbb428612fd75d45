#include <gtest/gtest.h>

#include "test_support.hpp"
#include "unpref/equivalence.hpp"

using namespace unpref;
using unpref::testing::code_of;

namespace {

Theorem1Config small_config() {
    Theorem1Config cfg;
    cfg.sizes = {50, 100, 200, 400};
    cfg.trials = 6;
    cfg.seed = 3;
    return cfg;
}

} // namespace

TEST(Helpers, MedianOf) {
    EXPECT_EQ(median_of({3.0, 1.0, 2.0}), 2.0);
    EXPECT_EQ(median_of({4.0, 1.0, 3.0, 2.0}), 2.5);
    EXPECT_EQ(code_of([] { median_of({}); }), errc::invalid_argument);
}

TEST(Helpers, LeastSquaresSlopeOnExactLine) {
    std::vector<double> xs, ys;
    for (double m : {50.0, 100.0, 200.0, 400.0}) {
        xs.push_back(std::log(m));
        ys.push_back(std::log(3.0 / std::sqrt(m)));
    }
    EXPECT_NEAR(ls_slope(xs, ys), -0.5, 1e-12);
}

TEST(RunTheorem1, InputValidation) {
    Theorem1Config cfg = small_config();
    cfg.sizes = {100};
    EXPECT_EQ(code_of([&] { run_theorem1(cfg); }), errc::invalid_argument);
    cfg.sizes = {5, 100};
    EXPECT_EQ(code_of([&] { run_theorem1(cfg); }), errc::invalid_argument);
    cfg.sizes = {100, 100};
    EXPECT_EQ(code_of([&] { run_theorem1(cfg); }), errc::invalid_argument);
    cfg = small_config();
    cfg.trials = 4;
    EXPECT_EQ(code_of([&] { run_theorem1(cfg); }), errc::invalid_argument);
    cfg = small_config();
    cfg.scenario.shift = Eigen::Vector3d(0, 0, 1);
    EXPECT_EQ(code_of([&] { run_theorem1(cfg); }), errc::dimension_mismatch);
    cfg = small_config();
    cfg.scenario.noise_sd = 0.0;
    EXPECT_EQ(code_of([&] { run_theorem1(cfg); }), errc::invalid_argument);
}

TEST(RunTheorem1, ReportShapeAndFittedConstant) {
    const Theorem1Report r = run_theorem1(small_config());
    ASSERT_EQ(r.sizes.size(), 4u);
    ASSERT_EQ(r.gaps.size(), 4u);
    ASSERT_EQ(r.median_gaps.size(), 4u);
    EXPECT_GT(r.bandwidth, 0.0);
    EXPECT_GT(r.fitted_C, 0.0);
    for (std::size_t s = 0; s < r.sizes.size(); ++s) {
        ASSERT_EQ(r.gaps[s].size(), 6u);
        for (std::size_t t = 0; t < 6; ++t) {
            EXPECT_GE(r.gaps[s][t], 0.0);
            EXPECT_EQ(r.gaps[s][t], std::abs(r.paired[s][t] - r.unpaired[s][t]));
            EXPECT_LE(r.gaps[s][t], r.fitted_C * 2.0 / std::sqrt(static_cast<double>(r.sizes[s])) * (1 + 1e-12));
        }
    }
    // fitted_C is attained by some trial.
    double attained = 0.0;
    for (std::size_t s = 0; s < r.sizes.size(); ++s)
        for (double g : r.gaps[s]) attained = std::max(attained, g / (2.0 / std::sqrt(double(r.sizes[s]))));
    EXPECT_EQ(attained, r.fitted_C);
}

TEST(RunTheorem1, BandwidthIsPilotMedian) {
    const Theorem1Config cfg = small_config();
    const Theorem1Report r = run_theorem1(cfg);
    const TrialDraw pilot = draw_trial(cfg.scenario, 400, mix_seed(cfg.seed ^ mix_seed(1)));
    EXPECT_EQ(r.bandwidth, median_bandwidth(pilot.x, pilot.y_paired));
}

TEST(RunTheorem1, InjectedIdenticalPromptsCoincide) {
    Theorem1Config cfg = small_config();
    cfg.inject_identical_prompts = true;
    const Theorem1Report r = run_theorem1(cfg);
    for (const auto& row : r.gaps)
        for (double g : row) EXPECT_LT(g, 1e-12);
    EXPECT_EQ(r.fitted_slope, 0.0);
}

TEST(RunTheorem1, IdenticalPopulationsShrink) {
    Theorem1Config cfg;
    cfg.sizes = {100, 400, 1600};
    cfg.trials = 10;
    cfg.seed = 17;
    cfg.scenario = Scenario::identical();
    const Theorem1Report r = run_theorem1(cfg);
    EXPECT_LT(r.median_gaps[2], r.median_gaps[0]);
    EXPECT_LT(median_of(r.paired[2]), median_of(r.paired[0]));
    EXPECT_LT(median_of(r.unpaired[2]), median_of(r.unpaired[0]));
}

TEST(RunTheorem1, GapShrinksWithSize) {
    Theorem1Config cfg;
    cfg.sizes = {50, 200, 800};
    cfg.trials = 10;
    const Theorem1Report r = run_theorem1(cfg);
    EXPECT_LT(r.median_gaps[2], r.median_gaps[0]);
    EXPECT_LT(r.fitted_slope, 0.0);
}

TEST(RunTheorem1, ThreadCountDoesNotMatter) {
    Theorem1Config cfg = small_config();
    const Theorem1Report a = run_theorem1(cfg);
    cfg.threads = 3;
    const Theorem1Report b = run_theorem1(cfg);
    EXPECT_EQ(to_json(a), to_json(b));
}

TEST(RunTheorem1, JsonFields) {
    const nlohmann::json j = to_json(run_theorem1(small_config()));
    for (const char* key : {"sizes", "gaps", "median_gaps", "fitted_slope", "fitted_C", "bandwidth"})
        EXPECT_TRUE(j.contains(key)) << key;
}

TEST(DrawTrial, RoutesShareNoiseAndPreferredSamples) {
    const Scenario sc;
    const TrialDraw a = draw_trial(sc, 64, 5), b = draw_trial(sc, 64, 5, true);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.y_paired, b.y_paired);
    EXPECT_EQ(b.y_paired, b.y_unpaired);
    EXPECT_NE(a.y_paired, a.y_unpaired);
    // The routes differ only by the prompt-dependent mean, which moves along `shift`.
    EXPECT_EQ((a.y_paired - a.y_unpaired).col(0).cwiseAbs().maxCoeff(), 0.0);
}
