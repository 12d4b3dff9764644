#include "redforge/gradcheck.hpp"

#include <cmath>

#include "redforge/deformation.hpp"
#include "redforge/losses.hpp"
#include "redforge/nets.hpp"
#include "redforge/shapes.hpp"
#include "redforge/training.hpp"

namespace redforge::gradcheck {

using namespace autodiff;

namespace {

constexpr int kToyPoints = 16;
constexpr int kToyParts = 3;
constexpr int kToyFeat = 8;

TensorPtr random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    auto t = zeros(shape, true);
    for (auto& v : t->values) v = rng.uniform(lo, hi);
    return t;
}

geometry::PointCloud random_cloud(int n, Rng& rng) {
    geometry::PointCloud c;
    for (int i = 0; i < n; ++i) c.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    return c;
}

// worst error over 10 random points of a scalarized primitive
template <class Builder>
double primitive_check(std::uint64_t seed, Shape shape, const Builder& build, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_tensor(shape, rng, lo, hi);
        auto r = finite_diff_check([&]() { return build(x); }, {x}, 1e-5);
        worst = std::max(worst, r.max_rel_err);
    }
    return worst;
}

training::TrainConfig toy_config() {
    auto c = training::TrainConfig::desk();
    c.points = kToyPoints;
    c.feat_dim = kToyFeat;
    c.residual_hidden = {16, 16, 12, 8};
    c.reg_hidden1 = 12;
    c.reg_hidden2 = 8;
    c.attn_heads = 4;
    return c;
}

shapes::PartSegmentedShape toy_shape(std::uint64_t seed) {
    return shapes::generate_shape(shapes::Category::Chair, seed, kToyPoints);
}

}  // namespace

Registry standard_registry() {
    Registry reg;

    // --- primitives -------------------------------------------------------
    reg.add("autodiff", "add", [] {
        Rng rng(11);
        double worst = 0.0;
        for (int i = 0; i < 10; ++i) {
            auto a = random_tensor({3, 4}, rng);
            auto b = random_tensor({3, 4}, rng);
            auto r = finite_diff_check([&]() { return sum(mul(add(a, b), add(a, b))); }, {a, b}, 1e-5);
            worst = std::max(worst, r.max_rel_err);
        }
        return worst;
    });
    reg.add("autodiff", "sub_mul", [] {
        Rng rng(12);
        double worst = 0.0;
        for (int i = 0; i < 10; ++i) {
            auto a = random_tensor({4, 3}, rng);
            auto b = random_tensor({4, 3}, rng);
            auto r = finite_diff_check([&]() { return sum(mul(sub(a, b), a)); }, {a, b}, 1e-5);
            worst = std::max(worst, r.max_rel_err);
        }
        return worst;
    });
    reg.add("autodiff", "scalar_mul",
            [] { return primitive_check(13, {5}, [](const TensorPtr& x) { return sum(scalar_mul(x, 2.5)); }); });
    reg.add("autodiff", "matmul", [] {
        Rng rng(14);
        double worst = 0.0;
        for (int i = 0; i < 10; ++i) {
            auto a = random_tensor({3, 5}, rng);
            auto b = random_tensor({5, 4}, rng);
            auto r = finite_diff_check([&]() { return sum(square(matmul(a, b))); }, {a, b}, 1e-5);
            worst = std::max(worst, r.max_rel_err);
        }
        return worst;
    });
    reg.add("autodiff", "relu", [] {
        // offset from 0 so finite differences never straddle the kink
        return primitive_check(15, {4, 4}, [](const TensorPtr& x) { return sum(square(relu(x))); }, 0.05, 1.0);
    });
    reg.add("autodiff", "leaky_relu", [] {
        return primitive_check(16, {4, 4}, [](const TensorPtr& x) { return sum(square(leaky_relu(x, 0.01))); }, 0.05,
                               1.0);
    });
    reg.add("autodiff", "softmax",
            [] { return primitive_check(17, {3, 6}, [](const TensorPtr& x) { return sum(square(softmax(x, 1))); }); });
    reg.add("autodiff", "concat", [] {
        Rng rng(18);
        double worst = 0.0;
        for (int i = 0; i < 10; ++i) {
            auto a = random_tensor({3, 2}, rng);
            auto b = random_tensor({3, 4}, rng);
            auto r = finite_diff_check([&]() { return sum(square(concat({a, b}, 1))); }, {a, b}, 1e-5);
            worst = std::max(worst, r.max_rel_err);
        }
        return worst;
    });
    reg.add("autodiff", "max_pool", [] {
        return primitive_check(19, {6, 4}, [](const TensorPtr& x) { return sum(square(max_pool(x, 0))); });
    });
    reg.add("autodiff", "mean_pool", [] {
        return primitive_check(20, {6, 4}, [](const TensorPtr& x) { return sum(square(mean_pool(x, 0))); });
    });
    reg.add("autodiff", "l2_normalize", [] {
        return primitive_check(21, {7}, [](const TensorPtr& x) { return sum(square(l2_normalize(x))); }, 0.2, 1.0);
    });
    reg.add("autodiff", "batch_norm_train", [] {
        Rng rng(22);
        double worst = 0.0;
        for (int i = 0; i < 10; ++i) {
            auto x = random_tensor({6, 3}, rng);
            auto gamma = random_tensor({3}, rng, 0.5, 1.5);
            auto beta = random_tensor({3}, rng);
            auto rm = zeros({3});
            auto rv = full({3}, 1.0);
            auto r = finite_diff_check(
                [&]() { return sum(square(batch_norm(x, gamma, beta, rm, rv, true))); }, {x, gamma, beta}, 1e-5);
            worst = std::max(worst, r.max_rel_err);
        }
        return worst;
    });
    reg.add("autodiff", "batch_norm_eval", [] {
        Rng rng(23);
        double worst = 0.0;
        for (int i = 0; i < 10; ++i) {
            auto x = random_tensor({6, 3}, rng);
            auto gamma = random_tensor({3}, rng, 0.5, 1.5);
            auto beta = random_tensor({3}, rng);
            auto rm = random_tensor({3}, rng);
            rm->requires_grad = false;
            auto rv = random_tensor({3}, rng, 0.5, 1.5);
            rv->requires_grad = false;
            auto r = finite_diff_check(
                [&]() { return sum(square(batch_norm(x, gamma, beta, rm, rv, false))); }, {x, gamma, beta}, 1e-5);
            worst = std::max(worst, r.max_rel_err);
        }
        return worst;
    });
    reg.add("autodiff", "sum_mean", [] {
        return primitive_check(24, {4, 5}, [](const TensorPtr& x) { return add(sum(square(x)), mean(square(x))); });
    });
    reg.add("autodiff", "square_sqrt_exp", [] {
        return primitive_check(25, {8}, [](const TensorPtr& x) { return sum(exp_t(sqrt_t(square(x)))); }, 0.1, 1.0);
    });
    reg.add("autodiff", "clamp", [] {
        // keep values away from the clamp bounds
        return primitive_check(26, {8}, [](const TensorPtr& x) { return sum(exp_t(clamp(x, -2.0, 2.0))); }, -1.5, 1.5);
    });
    reg.add("autodiff", "gather_segment_tile", [] {
        Rng rng(27);
        double worst = 0.0;
        const std::vector<int> idx = {2, 0, 1, 2};
        const std::vector<std::uint16_t> labels = {0, 1, 1, 0, 2, 2};
        for (int i = 0; i < 10; ++i) {
            auto a = random_tensor({6, 3}, rng);
            auto v = random_tensor({3}, rng);
            auto r = finite_diff_check(
                [&]() {
                    auto seg = segment_mean(a, labels, 3);
                    auto g = gather_rows(seg, idx);
                    return sum(square(add(g, slice_cols(tile_rows(v, 4), 0, 3))));
                },
                {a, v}, 1e-5);
            worst = std::max(worst, r.max_rel_err);
        }
        return worst;
    });

    // --- composite losses ---------------------------------------------------
    reg.add("losses", "loss_chamfer", [] {
        Rng rng(31);
        auto deformed = random_tensor({kToyPoints, 3}, rng);
        const auto target = random_cloud(kToyPoints, rng);
        losses::FrozenMatch frozen{geometry::nearest_neighbors(nets::cloud_from_tensor(deformed), target),
                                   geometry::nearest_neighbors(target, nets::cloud_from_tensor(deformed))};
        auto r = finite_diff_check([&]() { return losses::loss_chamfer(deformed, target, &frozen); }, {deformed}, 1e-5);
        return r.max_rel_err;
    });
    reg.add("losses", "loss_symmetry", [] {
        Rng rng(32);
        auto deformed = random_tensor({kToyPoints, 3}, rng);
        const auto dp = nets::cloud_from_tensor(deformed);
        const auto refl = geometry::reflect_bilateral(dp);
        losses::FrozenMatch frozen{geometry::nearest_neighbors(dp, refl), geometry::nearest_neighbors(refl, dp)};
        auto r = finite_diff_check([&]() { return losses::loss_symmetry(deformed, &frozen); }, {deformed}, 1e-5);
        return r.max_rel_err;
    });
    reg.add("losses", "loss_recon", [] {
        Rng rng(33);
        auto recon = random_tensor({kToyPoints, 3}, rng);
        const auto input = random_cloud(kToyPoints, rng);
        losses::FrozenMatch frozen{geometry::nearest_neighbors(nets::cloud_from_tensor(recon), input),
                                   geometry::nearest_neighbors(input, nets::cloud_from_tensor(recon))};
        auto r = finite_diff_check([&]() { return losses::loss_recon(recon, input, &frozen); }, {recon}, 1e-5);
        return r.max_rel_err;
    });
    reg.add("losses", "loss_re", [] {
        Rng rng(34);
        const auto target = random_cloud(kToyPoints, rng);
        auto residual = random_tensor({kToyPoints, 3}, rng);
        auto deformed = random_tensor({kToyPoints, 3}, rng);
        const auto frozen = geometry::nearest_neighbors(target, nets::cloud_from_tensor(deformed));
        auto r = finite_diff_check([&]() { return losses::loss_re(target, residual, deformed, &frozen); },
                                   {residual, deformed}, 1e-5);
        return r.max_rel_err;
    });
    reg.add("losses", "loss_consistency", [] {
        Rng rng(35);
        auto dp = random_tensor({kToyPoints, 3}, rng);
        auto df = random_tensor({kToyPoints, 3}, rng);
        auto rp = random_tensor({kToyPoints, 3}, rng);
        auto rf = random_tensor({kToyPoints, 3}, rng);
        auto r = finite_diff_check(
            [&]() {
                auto co = losses::loss_consistency(dp, df, rp, rf);
                return add(co.co1, co.co2);
            },
            {dp, df, rp, rf}, 1e-5);
        return r.max_rel_err;
    });
    reg.add("losses", "apply_deformation", [] {
        Rng rng(36);
        const auto shape = toy_shape(101);
        auto cd = random_tensor({shape.part_count(), 3}, rng, -0.2, 0.2);
        auto raw = random_tensor({shape.part_count(), 3}, rng, -0.5, 0.5);
        const auto target = random_cloud(kToyPoints, rng);
        auto build = [&]() {
            auto scale = nets::scales_from_raw(raw);
            auto deformed = deformation::apply_deformation_tensor(shape, cd, scale);
            return sum(square(deformed));
        };
        auto r = finite_diff_check(build, {cd, raw}, 1e-5);
        return r.max_rel_err;
    });
    reg.add("losses", "loss_total_joint", [] {
        const auto config = toy_config();
        const auto db = shapes::build_database(1, 5, kToyPoints);
        auto model = training::Model::init(config, 7);
        const auto target = toy_shape(102);
        auto pair = training::make_pair(target, db, config.occl, 9);
        training::JointCache cache;
        training::forward_joint(pair, db, model, config, /*train_mode=*/true, &cache);  // fill NN cache
        auto pm = model.params();
        // a small representative parameter slice from every head
        std::vector<TensorPtr> inputs = {pm.find("enc_partial.l1.weight"), pm.find("enc_full.l1.bias"),
                                         pm.find("enc_source.l3.bias"),    pm.find("residual.l5.bias"),
                                         pm.find("deformer.reg3.bias"),    pm.find("recon_partial.l1.bias"),
                                         pm.find("deformer.block1.self.wq.bias")};
        auto r = finite_diff_check(
            [&]() { return training::forward_joint(pair, db, model, config, true, &cache).terms.total; }, inputs, 1e-6);
        return r.max_rel_err;
    });

    // --- network heads ------------------------------------------------------
    // these use h = 1e-6: on toy sizes some pre-activations sit within 1e-4
    // of a leaky-relu kink, and central differences must stay on one side
    reg.add("nets", "encoder", [] {
        Rng rng(41);
        auto enc = nets::Encoder::init(kToyFeat, rng);
        auto points = random_tensor({kToyPoints, 3}, rng);
        optim::ParamMap pm;
        enc.collect(pm, "enc");
        std::vector<TensorPtr> inputs = {points, pm.find("enc.l1.weight"), pm.find("enc.l2.bias"),
                                         pm.find("enc.bn3.gamma")};
        auto r = finite_diff_check(
            [&]() {
                auto f = enc.forward(points, /*train=*/true);
                return add(sum(square(f.global)), mean(square(f.pointwise)));
            },
            inputs, 1e-6);
        return r.max_rel_err;
    });
    reg.add("nets", "residual_head", [] {
        Rng rng(42);
        auto head = nets::ResidualHead::init(kToyFeat, {16, 16, 12, 8}, rng);
        auto pointwise = random_tensor({kToyPoints, kToyFeat}, rng);
        auto gp = random_tensor({kToyFeat}, rng);
        auto gd = random_tensor({kToyFeat}, rng);
        auto ind_raw = random_tensor({kToyFeat}, rng, 0.1, 1.0);
        optim::ParamMap pm;
        head.collect(pm, "res");
        std::vector<TensorPtr> inputs = {pointwise, gp, gd, pm.find("res.l1.weight"), pm.find("res.l5.bias")};
        auto r = finite_diff_check(
            [&]() {
                auto ind = l2_normalize(ind_raw);
                return sum(square(head.forward(pointwise, gp, gd, ind, /*train=*/true)));
            },
            inputs, 1e-6);
        return r.max_rel_err;
    });
    reg.add("nets", "deformer", [] {
        Rng rng(43);
        auto def = nets::Deformer::init(kToyFeat, 2, 4, 12, 8, rng);
        auto parts = random_tensor({kToyParts, kToyFeat}, rng);
        auto gp = random_tensor({kToyFeat}, rng);
        auto gd = random_tensor({kToyFeat}, rng);
        optim::ParamMap pm;
        def.collect(pm, "agnn");
        std::vector<TensorPtr> inputs = {parts, gp, gd, pm.find("agnn.block1.self.wq.weight"),
                                         pm.find("agnn.block2.cross.wo.bias"), pm.find("agnn.reg1.weight")};
        auto r = finite_diff_check(
            [&]() {
                auto out = def.forward(parts, gp, gd);
                return add(sum(square(out.center_delta)), sum(square(nets::scales_from_raw(out.scale_raw))));
            },
            inputs, 1e-6);
        return r.max_rel_err;
    });
    reg.add("nets", "recon_head", [] {
        Rng rng(44);
        auto head = nets::ReconHead::init(kToyFeat, kToyPoints, rng);
        auto g = random_tensor({kToyFeat}, rng);
        optim::ParamMap pm;
        head.collect(pm, "recon");
        std::vector<TensorPtr> inputs = {g, pm.find("recon.l1.weight"), pm.find("recon.l3.bias")};
        auto r = finite_diff_check([&]() { return mean(square(head.forward(g))); }, inputs, 1e-6);
        return r.max_rel_err;
    });

    return reg;
}

}  // namespace redforge::gradcheck
