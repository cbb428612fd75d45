#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "cli_support.hpp"
#include "unpref/reward_train.hpp"

using namespace unpref;
using namespace unpref::testing;
using nlohmann::json;

TEST(Validate, BoxReport) {
    const fs::path dir = fresh_dir("validate");
    write_file(dir / "box.obj", write_obj(primitives::box()));
    const CliRun r = run_cli(dir, {"validate", "--input", "box.obj"});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const json j = json::parse(r.out);
    EXPECT_EQ(j.at("euler_characteristic"), 2);
    EXPECT_EQ(j.at("degenerate_face_count"), 0);
}

TEST(Validate, DegenerateAreaThreshold) {
    const fs::path dir = fresh_dir("validate_area");
    // Areas 0.5 and 1e-6.
    write_file(dir / "m.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nv 0.001 0 1\nv 0 0.002 1\nf 1 2 3\nf 4 5 6\n");
    EXPECT_EQ(json::parse(run_cli(dir, {"validate", "--input", "m.obj"}).out).at("degenerate_face_count"), 0);
    const CliRun r = run_cli(dir, {"validate", "--input", "m.obj", "--degenerate-area", "1e-5"});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out).at("degenerate_face_count"), 1);
}

TEST(Csdiv, IdenticalInputsGiveZero) {
    const fs::path dir = fresh_dir("csdiv");
    write_file(dir / "a.csv", "x,y\n0,0\n1,0.5\n-2,3\n0.25,0.75\n");
    const CliRun r = run_cli(dir, {"csdiv", "--x", "a.csv", "--y", "a.csv", "--bandwidth", "1.0"});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out).at("value").get<double>(), 0.0);
}

TEST(Score, OverCapacityIsDomainError) {
    const fs::path dir = fresh_dir("capacity");
    write_file(dir / "p.json", params_to_json(init_params(0)).dump());
    write_file(dir / "big.obj", write_obj(primitives::icosphere(5)));
    const CliRun r = run_cli(dir, {"score", "--params", "p.json", "--mesh", "big.obj"});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_EQ(r.err.rfind(std::string("error: ") + errc::capacity + ": ", 0), 0u) << r.err;
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Guide, OverBudgetMeshIsFusedFirst) {
    const fs::path dir = fresh_dir("guide_fuse");
    write_file(dir / "p.json", params_to_json(init_params(0)).dump());
    write_file(dir / "big.obj", write_obj(primitives::icosphere(5)));
    const CliRun r = run_cli(dir, {"guide", "--mesh", "big.obj", "--params", "p.json", "--steps", "1", "--out", "g.obj"});
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_LE(parse_obj(read_file(dir / "g.obj")).faces.size(), static_cast<std::size_t>(kFaceCapacity));
}

TEST(Dispatch, UsageErrors) {
    const fs::path dir = fresh_dir("usage");
    EXPECT_EQ(run_cli(dir, {}).exit_code, 2);
    EXPECT_EQ(run_cli(dir, {"sculpt"}).exit_code, 2);
    EXPECT_EQ(run_cli(dir, {"validate"}).exit_code, 2);
    EXPECT_EQ(run_cli(dir, {"validate", "--input", "x.obj", "--bogus"}).exit_code, 2);
    EXPECT_EQ(run_cli(dir, {"validate", "--input", "x.obj", "--threads", "0"}).exit_code, 2);
}

TEST(Dispatch, MissingFileIsDomainError) {
    const fs::path dir = fresh_dir("missing");
    const CliRun r = run_cli(dir, {"validate", "--input", "nope.obj"});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_EQ(r.err.rfind(std::string("error: ") + errc::io, 0), 0u) << r.err;
}

TEST(Dispatch, HelpPerSubcommand) {
    const fs::path dir = fresh_dir("help");
    for (const char* sub : {"simplify", "fuse", "patchify", "featurize", "csdiv", "theorem1", "gen-synthetic", "train",
                            "score", "guide", "validate"}) {
        const CliRun r = run_cli(dir, {sub, "--help"});
        EXPECT_EQ(r.exit_code, 0) << sub;
        EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
    }
}

TEST(MeshCommands, LongFlagNames) {
    const fs::path dir = fresh_dir("flags");
    write_file(dir / "sphere.obj", write_obj(primitives::icosphere(3)));
    ASSERT_EQ(run_cli(dir, {"simplify", "--input", "sphere.obj", "--output", "s.obj", "--target-faces", "320"}).exit_code, 0);
    EXPECT_LE(parse_obj(read_file(dir / "s.obj")).faces.size(), 320u);
    ASSERT_EQ(run_cli(dir, {"fuse", "--input", "s.obj", "--output", "f.obj", "--normal-threshold", "0.9",
                            "--target-faces", "200"})
                  .exit_code,
              0);
    EXPECT_LE(parse_obj(read_file(dir / "f.obj")).faces.size(), 320u);
    ASSERT_EQ(run_cli(dir, {"patchify", "--input", "s.obj", "--features-out", "g.mpf"}).exit_code, 0);
    const Eigen::MatrixXd grid = read_mpf1(read_file(dir / "g.mpf"));
    EXPECT_EQ(grid.rows(), kFaceCapacity);
    EXPECT_EQ(grid.cols(), kFeatureDim);
}

TEST(Manifest, RecordsFlagsAndDigests) {
    const fs::path dir = fresh_dir("manifest");
    write_file(dir / "sphere.obj", write_obj(primitives::icosphere(2)));
    ASSERT_EQ(run_cli(dir, {"simplify", "--input", "sphere.obj", "--output", "s.obj", "--target-faces", "100"}).exit_code, 0);
    const json m = json::parse(read_file(dir / "s.obj.manifest.json"));
    EXPECT_EQ(m.at("subcommand"), "simplify");
    EXPECT_EQ(m.at("flags").at("target-faces"), "100");
    EXPECT_FALSE(m.at("flags").contains("threads"));
    EXPECT_EQ(m.at("inputs").size(), 1u);
    EXPECT_EQ(m.at("outputs").at(0).at("path"), "s.obj");
    EXPECT_EQ(m.at("outputs").at(0).at("fnv1a64").get<std::string>().size(), 16u);

    ASSERT_EQ(run_cli(dir, {"gen-synthetic", "--n", "10", "--seed", "9", "--out", "d"}).exit_code, 0);
    EXPECT_EQ(json::parse(read_file(dir / "d" / "run_manifest.json")).at("seed"), 9);
}

TEST(Reproducibility, RunsAndThreadCounts) {
    const fs::path a = fresh_dir("repro_a"), b = fresh_dir("repro_b"), c = fresh_dir("repro_c");
    ASSERT_EQ(run_pipeline(a, 1), std::vector<std::string>{});
    ASSERT_EQ(run_pipeline(b, 1), std::vector<std::string>{});
    ASSERT_EQ(run_pipeline(c, 4), std::vector<std::string>{});
    const auto sa = snapshot(a), sb = snapshot(b), sc = snapshot(c);
    EXPECT_GT(sa.size(), 20u);
    for (const auto& [path, bytes] : sa) {
        EXPECT_EQ(bytes, sb.at(path)) << path;
        EXPECT_EQ(bytes, sc.at(path)) << path;
    }
    EXPECT_EQ(sa.size(), sb.size());
    EXPECT_EQ(sa.size(), sc.size());
}
