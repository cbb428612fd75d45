#ifndef UNPREF_TESTS_CLI_SUPPORT_HPP
#define UNPREF_TESTS_CLI_SUPPORT_HPP

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "unpref/mesh_core.hpp"
#include "unpref/primitives.hpp"
#include "unpref/synth_dataset.hpp"

namespace unpref::testing {

namespace fs = std::filesystem;

struct CliRun {
    int exit_code = -1;
    std::string out;
    std::string err;
};

/// Runs the CLI inside `cwd` with a shell-quoted argument list.
inline CliRun run_cli(const fs::path& cwd, const std::vector<std::string>& args) {
    const auto quote = [](const std::string& s) {
        std::string q = "'";
        for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
        return q + "'";
    };
    std::string cmd = "cd " + quote(cwd.string()) + " && " + quote(UNPREF_CLI_PATH);
    for (const std::string& a : args) cmd += " " + quote(a);
    const fs::path out = cwd / ".cli_stdout", err = cwd / ".cli_stderr";
    cmd += " > " + quote(out.string()) + " 2> " + quote(err.string());
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    fs::remove(out);
    fs::remove(err);
    return r;
}

inline fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("unpref_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// Every file under `root`, keyed by relative path.
inline std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
    return files;
}

/// Runs every subcommand once in `dir` with relative paths, so the
/// resulting trees (manifests included) can be compared byte for byte.
/// Returns the subcommands that did not exit 0.
inline std::vector<std::string> run_pipeline(const fs::path& dir, int threads) {
    write_file(dir / "sphere.obj", write_obj(primitives::icosphere(3)));
    write_file(dir / "box.obj", write_obj(primitives::box(2)));
    const std::string t = std::to_string(threads);
    const std::vector<std::vector<std::string>> steps = {
        {"gen-synthetic", "--n", "24", "--seed", "3", "--out", "data"},
        {"train", "--data", "data", "--epochs", "2", "--seed", "5", "--out", "params.json", "--history", "history.json"},
        {"score", "--params", "params.json", "--mesh", "sphere.obj", "--prompt", "a clean sphere", "--out", "score.json"},
        {"guide", "--mesh", "sphere.obj", "--params", "params.json", "--prompt", "a clean sphere", "--steps", "4",
         "--lr", "0.001", "--out", "guided.obj", "--trace", "trace.json"},
        {"theorem1", "--sizes", "50,100", "--trials", "6", "--seed", "42", "--out", "theorem1.json"},
        {"simplify", "--input", "sphere.obj", "--output", "simplified.obj", "--target-faces", "320"},
        {"fuse", "--input", "sphere.obj", "--output", "fused.obj", "--normal-threshold", "0.99", "--target-faces", "1000"},
        {"patchify", "--input", "sphere.obj", "--features-out", "grid.mpf"},
        {"featurize", "--input", "sphere.obj", "--out", "sphere.csv"},
        {"featurize", "--input", "box.obj", "--out", "box.mpf"},
        {"csdiv", "--x", "sphere.csv", "--y", "box.mpf", "--grad", "--out", "cs.json"},
        {"validate", "--input", "sphere.obj", "--out", "validate.json"},
    };
    std::vector<std::string> failed;
    for (std::vector<std::string> args : steps) {
        args.push_back("--threads");
        args.push_back(t);
        const CliRun r = run_cli(dir, args);
        if (r.exit_code != 0) failed.push_back(args.front() + ": " + r.err);
    }
    return failed;
}

} // namespace unpref::testing

#endif // UNPREF_TESTS_CLI_SUPPORT_HPP
