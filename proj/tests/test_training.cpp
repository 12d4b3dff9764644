#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "redforge/training.hpp"

using namespace redforge;
using namespace redforge::training;

namespace {

TrainConfig tiny_config() {
    auto c = TrainConfig::desk();
    c.points = 64;
    c.feat_dim = 16;
    c.residual_hidden = {24, 24, 16, 12};
    c.n_sphere_samples = 8;
    c.epochs = 3;
    c.occl.target_ratio = 0.3;
    return c;
}

std::vector<shapes::PartSegmentedShape> tiny_targets(int n, std::uint64_t seed, int points) {
    std::vector<shapes::PartSegmentedShape> out;
    const shapes::Category cats[] = {shapes::Category::Chair, shapes::Category::Table, shapes::Category::Cabinet};
    for (int i = 0; i < n; ++i)
        out.push_back(shapes::generate_shape(cats[i % 3], derive_seed(seed, "target", static_cast<std::uint64_t>(i)),
                                             static_cast<std::size_t>(points)));
    return out;
}

}  // namespace

TEST_CASE("config: text round trip and desk preset invariants") {
    TrainConfig def;
    CHECK(def.points == 1024);
    CHECK(def.feat_dim == 256);
    CHECK(def.weights.lambda0 == 3.0);
    CHECK(def.weights.lambda1 == 0.3);
    CHECK(def.weights.lambda2 == 1.0);
    CHECK(def.lr == 1e-3);
    CHECK(def.epochs == 200);
    CHECK(def.n_sphere_samples == 1000);
    CHECK(def.top_k == 10);
    CHECK(def.trim == 0.1);
    CHECK(def.residual_hidden == std::vector<int>{512, 512, 256, 128});

    auto desk = TrainConfig::desk();
    CHECK(desk.points == 256);
    CHECK(desk.epochs == 50);

    desk.seed = 1234;
    desk.occl.kind = occlusion::Kind::Composite;
    auto text = config_to_text(desk);
    auto back = config_from_text(text);
    CHECK(config_to_text(back) == text);

    CHECK_THROWS_WITH_AS(config_from_text("bogus.key=1\n"), doctest::Contains("unknown key"), std::runtime_error);
}

TEST_CASE("make_pair: subset property, determinism, source category") {
    auto config = tiny_config();
    auto db = shapes::build_database(2, 71, 64);
    auto target = shapes::generate_shape(shapes::Category::Table, 72, 64);

    auto spec = config.occl;
    spec.target_ratio = 0.0;
    spec.noise_sigma = 0.0;
    auto pair = make_pair(target, db, spec, 5);
    for (std::size_t i = 0; i < pair.partial.partial.size(); ++i)
        CHECK(pair.partial.partial[i] == pair.full[static_cast<std::size_t>(pair.partial.correspondence[i])]);

    auto pair2 = make_pair(target, db, spec, 5);
    CHECK(pair2.source_index == pair.source_index);
    CHECK(pair2.partial.correspondence == pair.partial.correspondence);

    CHECK(db.shapes[static_cast<std::size_t>(pair.source_index)].category == shapes::Category::Table);
}

TEST_CASE("make_pair: source draws are roughly uniform over same-category shapes") {
    auto db = shapes::build_database(10, 73, 64);  // 10 tables
    auto target = shapes::generate_shape(shapes::Category::Table, 74, 64);
    occlusion::OcclusionSpec spec;
    spec.target_ratio = 0.0;
    std::vector<int> counts(static_cast<std::size_t>(db.size()), 0);
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        auto pair = make_pair(target, db, spec, derive_seed(75, "draw", static_cast<std::uint64_t>(i)));
        ++counts[static_cast<std::size_t>(pair.source_index)];
    }
    int tables = 0;
    for (std::size_t i = 0; i < db.size(); ++i) {
        if (db.shapes[i].category != shapes::Category::Table) {
            CHECK(counts[i] == 0);
            continue;
        }
        ++tables;
        // binomial(1000, 1/10): mean 100, generous +/-40 band
        CHECK(counts[i] > 60);
        CHECK(counts[i] < 140);
    }
    CHECK(tables == 10);
}

TEST_CASE("forward_joint: degenerate equality makes both consistency terms vanish") {
    auto config = tiny_config();
    config.occl.target_ratio = 0.0;
    config.occl.noise_sigma = 0.0;
    auto db = shapes::build_database(1, 76, 64);
    auto target = shapes::generate_shape(shapes::Category::Chair, 77, 64);
    auto model = Model::init(config, 78);

    // share encoder weights across the partial and full branches
    model.enc_full = model.enc_partial;

    auto pair = make_pair(target, db, config.occl, 79);
    auto joint = forward_joint(pair, db, model, config, /*train_mode=*/true);
    CHECK(joint.values.co1 == 0.0);
    CHECK(joint.values.co2 == 0.0);
}

TEST_CASE("forward_joint: zero network parameters leave the source undeformed") {
    auto config = tiny_config();
    auto db = shapes::build_database(1, 80, 64);
    auto target = shapes::generate_shape(shapes::Category::Cabinet, 81, 64);
    auto model = Model::init(config, 82);
    auto pm = model.params();
    for (const auto& e : pm.entries()) {
        if (!e.trainable) continue;
        std::fill(e.tensor->values.begin(), e.tensor->values.end(), 0.0);
    }

    auto pair = make_pair(target, db, config.occl, 83);
    auto joint = forward_joint(pair, db, model, config, /*train_mode=*/false);
    const auto& source = db.shapes[static_cast<std::size_t>(pair.source_index)];
    const double expect_cd = geometry::chamfer_distance(source.cloud, pair.partial.partial);
    CHECK(joint.values.cd == doctest::Approx(expect_cd).epsilon(1e-12));
}

TEST_CASE("forward_joint: lambda2 = 0 decouples the consistency gradients") {
    auto config = tiny_config();
    auto db = shapes::build_database(1, 84, 64);
    auto target = shapes::generate_shape(shapes::Category::Chair, 85, 64);
    auto model = Model::init(config, 86);
    auto pair = make_pair(target, db, config.occl, 87);
    auto pm = model.params();

    auto run_grads = [&](double lambda2, bool include_co_terms) {
        auto cfg = config;
        cfg.weights.lambda2 = lambda2;
        pm.zero_grad();
        auto joint = forward_joint(pair, db, model, cfg, /*train_mode=*/false);
        if (include_co_terms)
            autodiff::backward(joint.terms.total);
        else {
            // weighted sum without the co terms at all
            auto basic = autodiff::add(autodiff::add(joint.terms.cd, joint.terms.sym), joint.terms.recon);
            auto partial_total = autodiff::add(autodiff::scalar_mul(basic, cfg.weights.lambda0),
                                               autodiff::scalar_mul(joint.terms.re, cfg.weights.lambda1));
            autodiff::backward(partial_total);
        }
        std::vector<double> grads;
        for (const auto& e : pm.entries()) {
            if (!e.trainable) continue;
            e.tensor->ensure_grad();
            grads.insert(grads.end(), e.tensor->grad.begin(), e.tensor->grad.end());
        }
        return grads;
    };

    auto with_zero_weight = run_grads(0.0, true);
    auto without_terms = run_grads(0.0, false);
    REQUIRE(with_zero_weight.size() == without_terms.size());
    for (std::size_t i = 0; i < with_zero_weight.size(); ++i)
        CHECK(with_zero_weight[i] == without_terms[i]);
}

TEST_CASE("train: loss decreases, reruns are identical, lr=0 freezes everything") {
    namespace fs = std::filesystem;
    auto config = tiny_config();
    config.seed = 90;
    config.epochs = 4;
    config.checkpoint_every = 0;
    auto db = shapes::build_database(1, 91, 64);
    auto targets = tiny_targets(6, 92, 64);

    const auto dir_a = fs::temp_directory_path() / "redforge_train_a";
    const auto dir_b = fs::temp_directory_path() / "redforge_train_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    auto model_a = Model::init(config, config.seed);
    auto result_a = train(db, targets, model_a, config, dir_a);
    REQUIRE(result_a.epochs.size() == 4);
    CHECK(result_a.epochs.back().mean_total < result_a.epochs.front().mean_total);

    auto model_b = Model::init(config, config.seed);
    auto result_b = train(db, targets, model_b, config, dir_b);
    for (std::size_t e = 0; e < result_a.epochs.size(); ++e)
        CHECK(result_a.epochs[e].mean_total == result_b.epochs[e].mean_total);

    // identical CSV logs byte for byte
    auto slurp = [](const fs::path& p) {
        std::ifstream f(p);
        return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(result_a.loss_log) == slurp(result_b.loss_log));

    // lr = 0 leaves parameters untouched and the loss constant
    auto config0 = config;
    config0.lr = 0.0;
    config0.epochs = 2;
    auto model_c = Model::init(config, config.seed);
    auto before = model_c.params();
    std::vector<double> snapshot;
    for (const auto& e : before.entries()) snapshot.insert(snapshot.end(), e.tensor->values.begin(), e.tensor->values.end());
    const auto dir_c = fs::temp_directory_path() / "redforge_train_c";
    fs::remove_all(dir_c);
    auto result_c = train(db, targets, model_c, config0, dir_c);
    CHECK(result_c.epochs[0].mean_total == result_c.epochs[1].mean_total);
    std::vector<double> after;
    for (const auto& e : model_c.params().entries())
        after.insert(after.end(), e.tensor->values.begin(), e.tensor->values.end());
    // trainable params unchanged (running BN stats do move in train mode)
    std::size_t off = 0;
    for (const auto& e : before.entries()) {
        for (std::size_t i = 0; i < e.tensor->values.size(); ++i, ++off)
            if (e.trainable) CHECK(snapshot[off] == after[off]);
    }
}

TEST_CASE("train writes run config, loss log and final checkpoint") {
    namespace fs = std::filesystem;
    auto config = tiny_config();
    config.epochs = 2;
    config.checkpoint_every = 1;
    auto db = shapes::build_database(1, 93, 64);
    auto targets = tiny_targets(3, 94, 64);
    const auto dir = fs::temp_directory_path() / "redforge_train_artifacts";
    fs::remove_all(dir);
    auto model = Model::init(config, 95);
    auto result = train(db, targets, model, config, dir);
    CHECK(fs::exists(dir / "run_config.txt"));
    CHECK(fs::exists(result.loss_log));
    CHECK(fs::exists(result.checkpoint));
    CHECK(fs::exists(dir / "ckpt_epoch1.ckpt"));

    // checkpoint round trip restores the exact parameter values
    auto model2 = Model::init(config, 1);
    load_model(model2, result.checkpoint);
    auto pa = model.params();
    auto pb = model2.params();
    for (std::size_t i = 0; i < pa.entries().size(); ++i)
        CHECK(pa.entries()[i].tensor->values == pb.entries()[i].tensor->values);
}

TEST_CASE("evaluate: planted identity targets give near-zero chamfer with a deterministic report") {
    auto config = tiny_config();
    auto db = shapes::build_database(2, 96, 64);
    auto model = Model::init(config, 97);

    // planted targets ARE database shapes; with ratio 0 the partial equals the
    // full shape, and every candidate includes the perfect match only if the
    // deformer leaves it alone -- so zero the deformer output layer
    std::fill(model.deformer.reg3.weight->values.begin(), model.deformer.reg3.weight->values.end(), 0.0);
    std::fill(model.deformer.reg3.bias->values.begin(), model.deformer.reg3.bias->values.end(), 0.0);

    std::vector<shapes::PartSegmentedShape> targets = {db.shapes[0], db.shapes[3]};
    config.top_k = static_cast<int>(db.size());  // all candidates, so the true source is present
    auto report = evaluate(db, targets, model, config, /*occlusion_ratio=*/0.0, /*eval_seed=*/11);
    CHECK(report.instance_average < 0.05);

    auto report2 = evaluate(db, targets, model, config, 0.0, 11);
    CHECK(report2.instance_average == report.instance_average);
    for (const auto& [cat, value] : report.per_category) CHECK(report2.per_category.at(cat) == value);

    // thread count does not change the result
    auto config4 = config;
    config4.n_threads = 4;
    auto report4 = evaluate(db, targets, model, config4, 0.0, 11);
    CHECK(report4.instance_average == report.instance_average);
}
