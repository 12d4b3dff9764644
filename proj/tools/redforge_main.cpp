// redforge CLI: dataset/database generation, training, evaluation,
// retrieval, deformation fitting, occlusion ablation, gradient checks.
//
// Exit codes: 0 success, 1 check failure, 2 usage or environment error.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "redforge/deformation.hpp"
#include "redforge/gradcheck.hpp"
#include "redforge/parallel.hpp"
#include "redforge/retrieval.hpp"
#include "redforge/shapes.hpp"
#include "redforge/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace redforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;

void write_json(const json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

void write_text(const std::string& text, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

std::vector<shapes::PartSegmentedShape> generate_targets(int count, std::uint64_t seed, std::size_t points) {
    const shapes::Category cats[] = {shapes::Category::Chair, shapes::Category::Table, shapes::Category::Cabinet};
    std::vector<shapes::PartSegmentedShape> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        out.push_back(shapes::generate_shape(cats[i % 3], derive_seed(seed, "target", static_cast<std::uint64_t>(i)),
                                             points));
    return out;
}

// targets live in an SDB1 directory under the dataset root
std::vector<shapes::PartSegmentedShape> load_targets(const fs::path& data_dir) {
    auto db = shapes::load_database(data_dir / "targets");
    return std::move(db.shapes);
}

training::TrainConfig resolve_config(const std::string& preset, const std::string& config_file) {
    training::TrainConfig config;
    if (preset == "desk")
        config = training::TrainConfig::desk();
    else if (preset != "paper")
        throw CLI::ValidationError("--preset must be 'paper' or 'desk'");
    if (!config_file.empty()) config = training::load_config(config_file);
    return config;
}

training::TrainConfig config_near_checkpoint(const fs::path& checkpoint, const std::string& config_file) {
    if (!config_file.empty()) return training::load_config(config_file);
    const auto beside = checkpoint.parent_path() / "run_config.txt";
    if (!fs::exists(beside))
        throw std::runtime_error("no run_config.txt next to " + checkpoint.string() + "; pass --config");
    return training::load_config(beside);
}

json report_to_json(const training::EvalReport& report) {
    json per_cat = json::object();
    for (const auto& [cat, value] : report.per_category) per_cat[cat] = value;
    return json{{"per_category", per_cat}, {"instance_average", report.instance_average},
                {"n_targets", report.n_targets}};
}

int run_gen_db(const std::string& out_dir, int per_category, std::uint64_t seed, int points) {
    auto db = shapes::build_database(per_category, seed, static_cast<std::size_t>(points));
    shapes::save_database(db, out_dir);
    write_text("command=gen-db\nseed=" + std::to_string(seed) + "\nper_category=" + std::to_string(per_category) +
                   "\npoints=" + std::to_string(points) + "\n",
               fs::path(out_dir) / "run_config.txt");
    std::cout << "wrote " << db.size() << " shapes to " << out_dir << "\n";
    return kExitOk;
}

int run_gen_data(const std::string& out_dir, int count, std::uint64_t seed, int points, double ratio, double noise,
                 const std::string& kind_name) {
    const auto kind = occlusion::kind_from_name(kind_name);
    auto targets = generate_targets(count, seed, static_cast<std::size_t>(points));

    shapes::SourceDatabase as_db;
    for (int i = 0; i < count; ++i) {
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "target_%05d", i);
        as_db.ids.push_back(idbuf);
        as_db.shapes.push_back(targets[static_cast<std::size_t>(i)]);
    }
    const fs::path root(out_dir);
    shapes::save_database(as_db, root / "targets");
    fs::create_directories(root / "partials");

    json samples = json::array();
    for (int i = 0; i < count; ++i) {
        const auto& shape = targets[static_cast<std::size_t>(i)];
        occlusion::OcclusionSpec spec;
        spec.kind = kind;
        spec.target_ratio = ratio;
        spec.noise_sigma = noise;
        Rng rng(derive_seed(seed, "partial", static_cast<std::uint64_t>(i)));
        spec = occlusion::randomize_geometry(spec, shape.cloud, rng);
        spec.seed = rng.stream("occl-seed").state();
        const auto obs = occlusion::simulate(shape.cloud, spec, shape.cloud.size());

        const std::string partial_rel = "partials/" + as_db.ids[static_cast<std::size_t>(i)] + ".pcf";
        const std::string corr_rel = "partials/" + as_db.ids[static_cast<std::size_t>(i)] + ".corr";
        geometry::save_pcf(obs.partial, root / partial_rel);
        {
            std::ofstream cf(root / corr_rel, std::ios::binary);
            for (int c : obs.correspondence) {
                const std::uint32_t v = static_cast<std::uint32_t>(c);
                cf.write(reinterpret_cast<const char*>(&v), 4);
            }
        }
        samples.push_back({{"id", as_db.ids[static_cast<std::size_t>(i)]},
                           {"category", shapes::category_name(shape.category)},
                           {"partial", partial_rel},
                           {"correspondence", corr_rel},
                           {"achieved_ratio", obs.achieved_ratio},
                           {"target_ratio", ratio}});
    }
    write_json(json{{"format", "RDT1"},
                    {"count", count},
                    {"points", points},
                    {"occlusion", {{"kind", kind_name}, {"target_ratio", ratio}, {"noise_sigma", noise}}},
                    {"seed", seed},
                    {"samples", samples}},
               root / "dataset.json");
    write_text("command=gen-data\nseed=" + std::to_string(seed) + "\ncount=" + std::to_string(count) +
                   "\npoints=" + std::to_string(points) + "\nratio=" + std::to_string(ratio) + "\nnoise=" +
                   std::to_string(noise) + "\nkind=" + kind_name + "\n",
               root / "run_config.txt");
    std::cout << "wrote " << count << " targets to " << out_dir << "\n";
    return kExitOk;
}

int run_train(const std::string& db_dir, const std::string& data_dir, const std::string& out_dir,
              training::TrainConfig config) {
    const auto db = shapes::load_database(db_dir);
    auto targets = load_targets(data_dir);
    if (db.size() == 0 || targets.empty()) throw std::runtime_error("empty database or target set");
    if (db.shapes[0].cloud.size() != static_cast<std::size_t>(config.points))
        throw std::runtime_error("database has " + std::to_string(db.shapes[0].cloud.size()) +
                                 " points per shape but config.points=" + std::to_string(config.points));
    auto model = training::Model::init(config, config.seed);
    const auto result = training::train(db, targets, model, config, out_dir);
    std::cout << "trained " << config.epochs << " epochs; first-epoch mean total " << result.epochs.front().mean_total
              << ", last " << result.epochs.back().mean_total << "\n"
              << "checkpoint: " << result.checkpoint.string() << "\n";
    return kExitOk;
}

int run_eval(const std::string& db_dir, const std::string& data_dir, const std::string& checkpoint,
             const std::string& out_file, const std::string& config_file, double ratio, std::uint64_t seed,
             int threads) {
    auto config = config_near_checkpoint(checkpoint, config_file);
    config.n_threads = threads;
    const auto db = shapes::load_database(db_dir);
    const auto targets = load_targets(data_dir);
    auto model = training::Model::init(config, 0);
    training::load_model(model, checkpoint);
    const auto report = training::evaluate(db, targets, model, config, ratio, seed);
    json j = report_to_json(report);
    j["ratio"] = ratio;
    j["seed"] = seed;
    j["checkpoint"] = checkpoint;
    write_json(j, out_file);
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int run_retrieve(const std::string& db_dir, const std::string& target_file, const std::string& checkpoint,
                 const std::string& out_file, const std::string& config_file, int samples, int top_k, double trim,
                 const std::string& mode, std::uint64_t seed, int threads) {
    auto config = config_near_checkpoint(checkpoint, config_file);
    const auto db = shapes::load_database(db_dir);
    auto model = training::Model::init(config, 0);
    training::load_model(model, checkpoint);
    const auto target = geometry::load_cloud(target_file);

    retrieval::RetrievalConfig rc{.n_samples = samples,
                                  .top_k = top_k,
                                  .trim = trim,
                                  .mode = retrieval::mode_from_name(mode),
                                  .seed = seed,
                                  .n_threads = threads};
    const auto outcome = retrieval::retrieve_otm(db, target, model.enc_partial, model.enc_source, model.residual, rc);

    json results = json::array();
    for (std::size_t s = 0; s < db.size(); ++s)
        results.push_back({{"id", db.ids[s]}, {"votes", outcome.votes[s]}, {"best_score", outcome.best_score[s]}});
    json top = json::array();
    for (int idx : outcome.top_k) top.push_back(db.ids[static_cast<std::size_t>(idx)]);
    const json j{{"target", target_file}, {"n_samples", samples}, {"mode", mode},
                 {"trim", trim},          {"seed", seed},         {"results", results},
                 {"top_k", top}};
    if (!out_file.empty()) write_json(j, out_file);
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int run_deform(const std::string& db_dir, const std::string& source_id, const std::string& target_file,
               const std::string& out_file, int steps, double lr, double connectivity_weight) {
    const auto db = shapes::load_database(db_dir);
    const int idx = db.find(source_id);
    if (idx < 0) throw std::runtime_error("source id not in database: " + source_id);
    const auto target = geometry::load_cloud(target_file);
    const auto fit = deformation::fit_deformation_direct(
        db.shapes[static_cast<std::size_t>(idx)], target,
        {.steps = steps, .lr = lr, .connectivity_weight = connectivity_weight});

    json params = json::object();
    for (std::size_t p = 0; p < fit.params.size(); ++p) {
        const auto& cd = fit.params.center_delta[p];
        const auto& s = fit.params.scale[p];
        params[std::to_string(p)] = {{"cd", {cd.x, cd.y, cd.z}}, {"s", {s.x, s.y, s.z}}};
    }
    const json j{{"source", source_id},
                 {"target", target_file},
                 {"steps", fit.steps_run},
                 {"initial_chamfer", fit.initial_chamfer},
                 {"final_chamfer", fit.final_chamfer},
                 {"params", params}};
    if (!out_file.empty()) write_json(j, out_file);
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int run_ablate(const std::string& db_dir, const std::string& data_dir, const std::string& checkpoint,
               const std::string& out_file, const std::string& config_file, const std::string& ratios_csv,
               std::uint64_t seed, int threads) {
    if (!fs::exists(checkpoint)) throw std::runtime_error("missing checkpoint: " + checkpoint);
    auto config = config_near_checkpoint(checkpoint, config_file);
    config.n_threads = threads;
    const auto db = shapes::load_database(db_dir);
    const auto targets = load_targets(data_dir);
    auto model = training::Model::init(config, 0);
    training::load_model(model, checkpoint);

    std::vector<double> ratios;
    std::stringstream ss(ratios_csv);
    std::string item;
    while (std::getline(ss, item, ',')) ratios.push_back(std::stod(item));
    if (ratios.empty()) throw CLI::ValidationError("--ratios must name at least one ratio");

    json rows = json::array();
    for (double ratio : ratios) {
        const auto report = training::evaluate(db, targets, model, config, ratio, seed);
        json row = report_to_json(report);
        row["ratio"] = ratio;
        row["average"] = report.instance_average;
        rows.push_back(row);
        std::cout << "ratio " << ratio << ": instance average " << report.instance_average << "\n";
    }
    write_json(json{{"rows", rows}, {"seed", seed}, {"checkpoint", checkpoint}}, out_file);
    return kExitOk;
}

int run_grad_check(const std::string& module, double tol) {
    const auto registry = gradcheck::standard_registry();
    const auto results = registry.run(module, tol);
    if (results.empty()) throw CLI::ValidationError("unknown module: " + module);
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-8s %-24s worst rel err %.3e  %s\n", r.group.c_str(), r.name.c_str(), r.max_rel_err,
                    r.pass ? "ok" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    return all_pass ? kExitOk : kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"redforge: joint shape retrieval and deformation for partial point clouds"};
    app.require_subcommand(1);

    const int default_threads = default_thread_count();

    // gen-db
    auto* gen_db = app.add_subcommand("gen-db", "generate a part-segmented source shape database");
    std::string gendb_out;
    int gendb_per_category = 10;
    std::uint64_t gendb_seed = 0;
    int gendb_points = 1024;
    gen_db->add_option("--out", gendb_out, "output directory")->required();
    gen_db->add_option("--per-category", gendb_per_category, "shapes per category")->check(CLI::PositiveNumber);
    gen_db->add_option("--seed", gendb_seed, "rng seed");
    gen_db->add_option("--points", gendb_points, "points per shape")->check(CLI::PositiveNumber);

    // gen-data
    auto* gen_data = app.add_subcommand("gen-data", "generate target shapes with partial observations");
    std::string gendata_out, gendata_kind = "ball";
    int gendata_count = 150, gendata_points = 1024;
    std::uint64_t gendata_seed = 0;
    double gendata_ratio = 0.5, gendata_noise = 0.01;
    gen_data->add_option("--out", gendata_out)->required();
    gen_data->add_option("--count", gendata_count)->check(CLI::PositiveNumber);
    gen_data->add_option("--seed", gendata_seed);
    gen_data->add_option("--points", gendata_points)->check(CLI::PositiveNumber);
    gen_data->add_option("--ratio", gendata_ratio, "occlusion ratio in [0,1)");
    gen_data->add_option("--noise", gendata_noise, "gaussian noise sigma");
    gen_data->add_option("--kind", gendata_kind, "ball|plane|mask|composite");

    // train
    auto* train_cmd = app.add_subcommand("train", "train the joint retrieval & deformation model");
    std::string train_db, train_data, train_out, train_preset = "paper", train_config_file;
    std::uint64_t train_seed = 0;
    int train_epochs = -1, train_threads = default_threads;
    train_cmd->add_option("--db", train_db)->required();
    train_cmd->add_option("--data", train_data)->required();
    train_cmd->add_option("--out", train_out)->required();
    train_cmd->add_option("--preset", train_preset, "paper|desk");
    train_cmd->add_option("--config", train_config_file, "run-config file overriding the preset");
    train_cmd->add_option("--seed", train_seed);
    train_cmd->add_option("--epochs", train_epochs, "override epoch count");
    train_cmd->add_option("--threads", train_threads);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on held-out targets");
    std::string eval_db, eval_data, eval_ckpt, eval_out, eval_config_file;
    double eval_ratio = 0.5;
    std::uint64_t eval_seed = 1;
    int eval_threads = default_threads;
    eval_cmd->add_option("--db", eval_db)->required();
    eval_cmd->add_option("--data", eval_data)->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
    eval_cmd->add_option("--out", eval_out)->required();
    eval_cmd->add_option("--config", eval_config_file);
    eval_cmd->add_option("--ratio", eval_ratio);
    eval_cmd->add_option("--seed", eval_seed);
    eval_cmd->add_option("--threads", eval_threads);

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "residual-guided one-to-many retrieval for a target cloud");
    std::string ret_db, ret_target, ret_ckpt, ret_out, ret_config_file, ret_mode = "mean";
    int ret_samples = 1000, ret_topk = 10, ret_threads = default_threads;
    double ret_trim = 0.1;
    std::uint64_t ret_seed = 0;
    retrieve_cmd->add_option("--db", ret_db)->required();
    retrieve_cmd->add_option("--target", ret_target)->required();
    retrieve_cmd->add_option("--checkpoint", ret_ckpt)->required();
    retrieve_cmd->add_option("--out", ret_out);
    retrieve_cmd->add_option("--config", ret_config_file);
    retrieve_cmd->add_option("--samples", ret_samples)->check(CLI::PositiveNumber);
    retrieve_cmd->add_option("--top-k", ret_topk)->check(CLI::PositiveNumber);
    retrieve_cmd->add_option("--trim", ret_trim);
    retrieve_cmd->add_option("--mode", ret_mode, "mean|max");
    retrieve_cmd->add_option("--seed", ret_seed);
    retrieve_cmd->add_option("--threads", ret_threads);

    // deform
    auto* deform_cmd = app.add_subcommand("deform", "fit per-part deformation of a database shape to a target");
    std::string def_db, def_source, def_target, def_out;
    int def_steps = 500;
    double def_lr = 0.05, def_conn = 0.0;
    deform_cmd->add_option("--db", def_db)->required();
    deform_cmd->add_option("--source", def_source, "source shape id")->required();
    deform_cmd->add_option("--target", def_target, "target cloud file")->required();
    deform_cmd->add_option("--out", def_out);
    deform_cmd->add_option("--steps", def_steps)->check(CLI::PositiveNumber);
    deform_cmd->add_option("--lr", def_lr);
    deform_cmd->add_option("--connectivity-weight", def_conn);

    // ablate-occlusion
    auto* ablate_cmd = app.add_subcommand("ablate-occlusion", "evaluate across occlusion ratios");
    std::string abl_db, abl_data, abl_ckpt, abl_out, abl_config_file, abl_ratios = "0,0.25,0.5,0.75";
    std::uint64_t abl_seed = 1;
    int abl_threads = default_threads;
    ablate_cmd->add_option("--db", abl_db)->required();
    ablate_cmd->add_option("--data", abl_data)->required();
    ablate_cmd->add_option("--checkpoint", abl_ckpt)->required();
    ablate_cmd->add_option("--out", abl_out)->required();
    ablate_cmd->add_option("--config", abl_config_file);
    ablate_cmd->add_option("--ratios", abl_ratios, "comma-separated occlusion ratios");
    ablate_cmd->add_option("--seed", abl_seed);
    ablate_cmd->add_option("--threads", abl_threads);

    // grad-check
    auto* grad_cmd = app.add_subcommand("grad-check", "finite-difference checks for every registered gradient");
    std::string grad_module = "all";
    double grad_tol = 1e-4;
    grad_cmd->add_option("--module", grad_module, "all|autodiff|losses|nets");
    grad_cmd->add_option("--tol", grad_tol);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (gen_db->parsed()) return run_gen_db(gendb_out, gendb_per_category, gendb_seed, gendb_points);
        if (gen_data->parsed())
            return run_gen_data(gendata_out, gendata_count, gendata_seed, gendata_points, gendata_ratio, gendata_noise,
                                gendata_kind);
        if (train_cmd->parsed()) {
            auto config = resolve_config(train_preset, train_config_file);
            config.seed = train_seed;
            config.n_threads = train_threads;
            if (train_epochs > 0) config.epochs = train_epochs;
            return run_train(train_db, train_data, train_out, config);
        }
        if (eval_cmd->parsed())
            return run_eval(eval_db, eval_data, eval_ckpt, eval_out, eval_config_file, eval_ratio, eval_seed,
                            eval_threads);
        if (retrieve_cmd->parsed())
            return run_retrieve(ret_db, ret_target, ret_ckpt, ret_out, ret_config_file, ret_samples, ret_topk,
                                ret_trim, ret_mode, ret_seed, ret_threads);
        if (deform_cmd->parsed()) return run_deform(def_db, def_source, def_target, def_out, def_steps, def_lr, def_conn);
        if (ablate_cmd->parsed())
            return run_ablate(abl_db, abl_data, abl_ckpt, abl_out, abl_config_file, abl_ratios, abl_seed, abl_threads);
        if (grad_cmd->parsed()) return run_grad_check(grad_module, grad_tol);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
