// unpref: command-line front end for the mesh, divergence, reward and
// guidance modules. Exit status: 0 ok, 1 domain error, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "unpref/cs_divergence.hpp"
#include "unpref/equivalence.hpp"
#include "unpref/error.hpp"
#include "unpref/face_features.hpp"
#include "unpref/guidance.hpp"
#include "unpref/mesh_core.hpp"
#include "unpref/mesh_prep.hpp"
#include "unpref/parallel.hpp"
#include "unpref/reward_net.hpp"
#include "unpref/reward_train.hpp"
#include "unpref/synth_dataset.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace unpref;

namespace {

constexpr const char* kVersion = "0.1.0";

/// Files a run read and wrote, for the manifest.
struct RunRecord {
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    std::optional<fs::path> manifest_path;
};

std::string hex_digest(const std::string& bytes) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

json digests(const std::vector<fs::path>& paths) {
    json out = json::array();
    for (const fs::path& p : paths) {
        if (fs::is_directory(p)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::recursive_directory_iterator(p))
                if (e.is_regular_file()) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const fs::path& f : files)
                out.push_back({{"path", f.generic_string()}, {"fnv1a64", hex_digest(read_file(f))}});
        } else {
            out.push_back({{"path", p.generic_string()}, {"fnv1a64", hex_digest(read_file(p))}});
        }
    }
    return out;
}

/// Effective value of every flag of a subcommand, except --threads, which
/// does not affect results.
json flag_set(const CLI::App& sub) {
    json flags = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string& name = opt->get_lnames().front();
        if (name == "help" || name == "threads") continue;
        if (opt->count() > 0) {
            const auto& res = opt->results();
            flags[name] = res.size() == 1 ? json(res.front()) : json(res);
        } else {
            flags[name] = opt->get_default_str();
        }
    }
    return flags;
}

void write_manifest(const CLI::App& sub, const RunRecord& rec) {
    if (!rec.manifest_path) return;
    json m = {{"subcommand", sub.get_name()},
              {"version", kVersion},
              {"flags", flag_set(sub)},
              {"inputs", digests(rec.inputs)},
              {"outputs", digests(rec.outputs)}};
    if (const CLI::Option* seed = sub.get_option_no_throw("--seed"); seed && seed->count() > 0)
        m["seed"] = seed->as<std::uint64_t>();
    write_file(*rec.manifest_path, m.dump(2) + "\n");
}

std::string read_input(RunRecord& rec, const fs::path& p) {
    rec.inputs.push_back(p);
    return read_file(p);
}

void write_output(RunRecord& rec, const fs::path& p, std::string_view bytes) {
    write_file(p, bytes);
    rec.outputs.push_back(p);
    if (!rec.manifest_path) rec.manifest_path = fs::path(p.string() + ".manifest.json");
}

/// JSON to --out when given, otherwise to stdout.
void emit_json(RunRecord& rec, const std::string& out, const json& j) {
    if (out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_output(rec, out, j.dump(2) + "\n");
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
        rows.push_back(row);
    }
    return rows;
}

Eigen::MatrixXd load_matrix(RunRecord& rec, const fs::path& p) {
    const std::string bytes = read_input(rec, p);
    if (bytes.rfind("MPF1", 0) == 0) return read_mpf1(bytes);
    return read_csv(bytes);
}

json validation_json(const ValidationReport& r) {
    return {{"degenerate_face_count", r.degenerate_face_count},
            {"non_manifold_edge_count", r.non_manifold_edge_count},
            {"duplicate_face_count", r.duplicate_face_count},
            {"euler_characteristic", r.euler_characteristic},
            {"bounding_box",
             {{"min", {r.bbox_min.x(), r.bbox_min.y(), r.bbox_min.z()}},
              {"max", {r.bbox_max.x(), r.bbox_max.y(), r.bbox_max.z()}}}}};
}

json history_json(const std::vector<EpochStats>& h) {
    json out = json::array();
    for (std::size_t e = 0; e < h.size(); ++e)
        out.push_back({{"epoch", e}, {"mse", h[e].mse}, {"cs", h[e].cs}, {"total", h[e].total}});
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unpaired preference learning on triangle meshes"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    int threads = default_threads();

    RunRecord rec;
    std::function<void()> action;
    const auto add = [&](const std::string& name, const std::string& help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--threads", threads, "Worker threads (results do not depend on it)")
            ->check(CLI::PositiveNumber);
        return sub;
    };

    // simplify
    std::string in_path, out_path;
    int target = 0;
    CLI::App* simplify = add("simplify", "Quadric-error edge collapse to a face budget");
    simplify->add_option("--input", in_path, "Input OBJ")->required();
    simplify->add_option("--target-faces,--target", target, "Face budget")->required();
    simplify->add_option("--output,--out", out_path, "Output OBJ")->required();
    simplify->callback([&] {
        action = [&] {
            const TriangleMesh m = parse_obj(read_input(rec, in_path));
            write_output(rec, out_path, write_obj(qem_simplify(m, target)));
        };
    });

    // fuse
    FusionConfig fusion;
    CLI::App* fuse = add("fuse", "Merge near-coplanar adjacent faces down to a face budget");
    fuse->add_option("--input", in_path, "Input OBJ")->required();
    fuse->add_option("--output,--out", out_path, "Output OBJ")->required();
    fuse->add_option("--normal-threshold,--threshold", fusion.normal_similarity_threshold, "Minimum normal cosine")
        ->capture_default_str();
    fuse->add_option("--target-faces,--budget", fusion.target_faces, "Face budget")->capture_default_str();
    fuse->add_option("--max-passes", fusion.max_passes, "Pass limit")->capture_default_str();
    fuse->callback([&] {
        action = [&] {
            const TriangleMesh m = parse_obj(read_input(rec, in_path));
            write_output(rec, out_path, write_obj(adaptive_fuse(m, fusion)));
        };
    });

    // patchify
    CLI::App* patch = add("patchify", "Write the 256x64x10 patch grid as MPF1 (16384 rows, zero rows empty)");
    patch->add_option("--input", in_path, "Input OBJ")->required();
    patch->add_option("--features-out,--out", out_path, "Output MPF1")->required();
    patch->callback([&] {
        action = [&] {
            const TriangleMesh m = parse_obj(read_input(rec, in_path));
            write_output(rec, out_path, write_mpf1(prepare_mesh(m).grid.tensor.as_rows()));
        };
    });

    // featurize
    std::string format = "auto";
    CLI::App* feat = add("featurize", "Per-face 10-dimensional features");
    feat->add_option("--input", in_path, "Input OBJ")->required();
    feat->add_option("--out", out_path, "Output file")->required();
    feat->add_option("--format", format, "mpf1, csv, or auto (by extension)")
        ->check(CLI::IsMember({"auto", "mpf1", "csv"}))
        ->capture_default_str();
    feat->callback([&] {
        action = [&] {
            const FeatureMatrix f = featurize(parse_obj(read_input(rec, in_path)));
            const bool csv = format == "csv" || (format == "auto" && fs::path(out_path).extension() == ".csv");
            write_output(rec, out_path, csv ? write_feature_csv(f) : write_mpf1(f));
        };
    });

    // csdiv
    std::string x_path, y_path, bandwidth = "median";
    bool with_grad = false;
    CLI::App* csdiv = add("csdiv", "Empirical Cauchy-Schwarz divergence between two sample files");
    csdiv->add_option("--x", x_path, "MPF1 or CSV samples")->required();
    csdiv->add_option("--y", y_path, "MPF1 or CSV samples")->required();
    csdiv->add_option("--bandwidth", bandwidth, "median or a positive number")->capture_default_str();
    csdiv->add_flag("--grad", with_grad, "Include gradients");
    csdiv->add_option("--out", out_path, "Output JSON (default stdout)");
    csdiv->callback([&] {
        KernelConfig cfg;
        if (bandwidth != "median") {
            double sigma = 0.0;
            try {
                std::size_t used = 0;
                sigma = std::stod(bandwidth, &used);
                if (used != bandwidth.size()) throw std::invalid_argument(bandwidth);
            } catch (const std::exception&) {
                throw CLI::ValidationError("--bandwidth", "expected 'median' or a number, got '" + bandwidth + "'");
            }
            cfg = KernelConfig::fixed(sigma);
        }
        action = [&, cfg] {
            const Eigen::MatrixXd x = load_matrix(rec, x_path), y = load_matrix(rec, y_path);
            const CSReport r = with_grad ? cs_divergence_grad(x, y, cfg) : cs_divergence(x, y, cfg);
            json j = {{"value", r.value},
                      {"bandwidth_used", r.bandwidth_used},
                      {"term_logs", {r.term_logs[0], r.term_logs[1], r.term_logs[2]}}};
            if (r.grad_x) {
                j["grad_x"] = matrix_json(*r.grad_x);
                j["grad_y"] = matrix_json(*r.grad_y);
            }
            emit_json(rec, out_path, j);
        };
    });

    // theorem1
    Theorem1Config t1;
    bool zero_offset = false;
    CLI::App* theorem = add("theorem1", "Paired vs unpaired divergence gap over a size ladder");
    theorem->add_option("--sizes", t1.sizes, "Comma-separated sample sizes")->delimiter(',')->capture_default_str();
    theorem->add_option("--trials", t1.trials, "Trials per size")->capture_default_str();
    theorem->add_option("--seed", t1.seed, "Master seed")->capture_default_str();
    theorem->add_flag("--zero-offset", zero_offset, "Use identical preferred/dispreferred distributions");
    theorem->add_flag("--inject-identical-prompts", t1.inject_identical_prompts,
                      "Reuse the paired prompts on the unpaired route (gaps must vanish)");
    theorem->add_option("--out", out_path, "Report JSON")->required();
    theorem->callback([&] {
        action = [&] {
            if (zero_offset) t1.scenario = Scenario::identical();
            t1.threads = threads;
            emit_json(rec, out_path, to_json(run_theorem1(t1)));
        };
    });

    // gen-synthetic
    int n_items = 200;
    std::uint64_t seed = 0;
    CLI::App* gen = add("gen-synthetic", "Procedural preference dataset");
    gen->add_option("--n", n_items, "Item count")->capture_default_str();
    gen->add_option("--seed", seed, "Seed")->capture_default_str();
    gen->add_option("--out", out_path, "Output directory")->required();
    gen->callback([&] {
        action = [&] {
            const PrefDataset ds = gen_dataset(n_items, seed, threads);
            write_dataset(ds, out_path);
            rec.outputs.push_back(fs::path(out_path) / "items");
            rec.outputs.push_back(fs::path(out_path) / "manifest.json");
            rec.manifest_path = fs::path(out_path) / "run_manifest.json";
        };
    });

    // train
    std::string data_dir, history_path;
    TrainConfig tc;
    CLI::App* trainer = add("train", "Fit the reward model with MSE minus lambda times the divergence");
    trainer->add_option("--data", data_dir, "Dataset directory")->required();
    trainer->add_option("--lambda", tc.lambda, "Divergence weight")->capture_default_str();
    trainer->add_option("--lr", tc.lr, "AdamW learning rate")->capture_default_str();
    trainer->add_option("--epochs", tc.epochs, "Epochs")->capture_default_str();
    trainer->add_option("--seed", tc.seed, "Seed")->capture_default_str();
    trainer->add_option("--out", out_path, "Params JSON")->required();
    trainer->add_option("--history", history_path, "Per-epoch loss history JSON");
    trainer->callback([&] {
        action = [&] {
            const PrefDataset ds = load_dataset(data_dir);
            rec.inputs.push_back(data_dir);
            const TrainResult r = train(make_samples(ds), tc);
            write_output(rec, out_path, params_to_json(r.params).dump() + "\n");
            if (!history_path.empty()) write_output(rec, history_path, history_json(r.history).dump(2) + "\n");
        };
    });

    // score
    std::string params_path, mesh_path, prompt;
    CLI::App* scorer = add("score", "Reward of a mesh under a prompt");
    scorer->add_option("--params", params_path, "Params JSON")->required();
    scorer->add_option("--mesh", mesh_path, "Mesh OBJ")->required();
    scorer->add_option("--prompt", prompt, "Text prompt")->capture_default_str();
    scorer->add_option("--out", out_path, "Output JSON (default stdout)");
    scorer->callback([&] {
        action = [&] {
            const RewardParams p = params_from_json(json::parse(read_input(rec, params_path)));
            const TriangleMesh m = parse_obj(read_input(rec, mesh_path));
            emit_json(rec, out_path, {{"score", score(p, m, prompt)}});
        };
    });

    // guide
    GuidanceSchedule schedule;
    double guide_lr = 1e-3;
    std::string trace_path;
    CLI::App* guide = add("guide", "Reward-guided vertex optimization against a quadratic anchor; meshes over the face budget are fused first");
    guide->add_option("--mesh", mesh_path, "Initial mesh OBJ")->required();
    guide->add_option("--prompt", prompt, "Text prompt")->capture_default_str();
    guide->add_option("--params", params_path, "Params JSON")->required();
    guide->add_option("--steps", schedule.total_steps, "Steps")->capture_default_str();
    guide->add_option("--alpha-start", schedule.alpha_start, "Reward weight at step 0")->capture_default_str();
    guide->add_option("--alpha-end", schedule.alpha_end, "Reward weight at the last step")->capture_default_str();
    guide->add_option("--lr", guide_lr, "Step size")->capture_default_str();
    guide->add_option("--out", out_path, "Final mesh OBJ")->required();
    guide->add_option("--trace", trace_path, "Trajectory JSON");
    guide->callback([&] {
        action = [&] {
            const RewardParams p = params_from_json(json::parse(read_input(rec, params_path)));
            TriangleMesh m = parse_obj(read_input(rec, mesh_path));
            if (m.faces.size() > static_cast<std::size_t>(kFaceCapacity)) m = adaptive_fuse(m);
            const GuideResult r = guide_optimize(m, prompt, p, schedule, anchor_loss(), guide_lr);
            write_output(rec, out_path, write_obj(r.mesh));
            if (!trace_path.empty()) {
                json t = to_json(r.state);
                t["final_reward"] = r.final_reward;
                write_output(rec, trace_path, t.dump(2) + "\n");
            }
        };
    });

    // validate
    double degenerate_area = kDegenerateArea;
    CLI::App* check = add("validate", "Mesh defect report");
    check->add_option("--input", in_path, "Input OBJ")->required();
    check->add_option("--degenerate-area", degenerate_area, "Faces below this area count as degenerate")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    check->add_option("--out", out_path, "Output JSON (default stdout)");
    check->callback([&] {
        action = [&] {
            emit_json(rec, out_path, validation_json(validate(parse_obj(read_input(rec, in_path)), degenerate_area)));
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        action();
        for (CLI::App* sub : app.get_subcommands()) write_manifest(*sub, rec);
    } catch (const Error& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
        return 1;
    } catch (const json::exception& e) {
        std::cerr << "error: " << errc::parse << ": " << e.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << errc::io << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}
