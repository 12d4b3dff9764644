#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "redforge/gradcheck.hpp"
#include "redforge/nets.hpp"

using namespace redforge;
using namespace redforge::nets;
using namespace redforge::autodiff;

namespace {

geometry::PointCloud random_cloud(int n, Rng& rng) {
    geometry::PointCloud c;
    for (int i = 0; i < n; ++i) c.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    return c;
}

geometry::PointCloud permuted(const geometry::PointCloud& c, Rng& rng) {
    std::vector<std::size_t> order(c.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    geometry::PointCloud out;
    for (auto i : order) out.points.push_back(c[i]);
    return out;
}

}  // namespace

TEST_CASE("encoder: global feature is bitwise permutation invariant") {
    Rng rng(31);
    auto enc = Encoder::init(16, rng);
    auto cloud = random_cloud(40, rng);
    for (bool train : {true, false}) {
        auto base = enc.forward(cloud, train);
        for (int trial = 0; trial < 5; ++trial) {
            auto perm = permuted(cloud, rng);
            auto other = enc.forward(perm, train);
            CHECK(base.global->values == other.global->values);
        }
    }
}

TEST_CASE("encoder: duplicating every point keeps the global (eval mode)") {
    Rng rng(32);
    auto enc = Encoder::init(16, rng);
    auto cloud = random_cloud(30, rng);
    geometry::PointCloud doubled = cloud;
    doubled.points.insert(doubled.points.end(), cloud.points.begin(), cloud.points.end());
    // eval-mode BN is pointwise, so the max over a duplicated multiset is identical
    auto a = enc.forward(cloud, false);
    auto b = enc.forward(doubled, false);
    CHECK(a.global->values == b.global->values);
}

TEST_CASE("encoder: distinct clouds give distinct globals") {
    Rng rng(33);
    auto enc = Encoder::init(16, rng);
    auto a = enc.forward(random_cloud(25, rng), false);
    auto b = enc.forward(random_cloud(25, rng), false);
    double dist = 0.0;
    for (std::size_t i = 0; i < a.global->values.size(); ++i)
        dist += std::abs(a.global->values[i] - b.global->values[i]);
    CHECK(dist > 0.0);
}

TEST_CASE("encoder rejects empty input") {
    Rng rng(34);
    auto enc = Encoder::init(8, rng);
    CHECK_THROWS(enc.forward(geometry::PointCloud{}, false));
}

TEST_CASE("residual head: shape, zero map, indicator validation") {
    Rng rng(35);
    const int L = 8, M = 10;
    auto head = ResidualHead::init(L, {16, 16, 12, 8}, rng);
    auto pw = zeros({M, L});
    for (auto& v : pw->values) v = rng.uniform(-1, 1);
    auto gp = zeros({L});
    auto gd = zeros({L});
    std::vector<double> iv(L, 0.0);
    iv[0] = 1.0;
    auto ind = make_tensor({L}, iv);

    auto r = head.forward(pw, gp, gd, ind, false);
    CHECK(r->shape == Shape{M, 3});

    // all-zero parameters -> identically zero field
    optim::ParamMap pm;
    head.collect(pm, "h");
    for (const auto& e : pm.entries())
        if (e.trainable) std::fill(e.tensor->values.begin(), e.tensor->values.end(), 0.0);
    auto rz = head.forward(pw, gp, gd, ind, false);
    for (double v : rz->values) CHECK(v == 0.0);

    // off-sphere indicator rejected
    auto bad = make_tensor({L}, std::vector<double>(L, 0.5));
    CHECK_THROWS_WITH_AS(head.forward(pw, gp, gd, bad, false), "indicator off sphere", std::runtime_error);
}

TEST_CASE("residual head: the indicator actually matters") {
    Rng rng(36);
    const int L = 8, M = 12;
    auto head = ResidualHead::init(L, {16, 16, 12, 8}, rng);
    auto pw = zeros({M, L});
    for (auto& v : pw->values) v = rng.uniform(-1, 1);
    auto gp = zeros({L});
    for (auto& v : gp->values) v = rng.uniform(-1, 1);
    auto gd = zeros({L});
    for (auto& v : gd->values) v = rng.uniform(-1, 1);

    std::vector<double> i1(L, 0.0), i2(L, 0.0);
    i1[0] = 1.0;
    i2[1] = 1.0;
    auto r1 = head.forward(pw, gp, gd, make_tensor({L}, i1), false);
    auto r2 = head.forward(pw, gp, gd, make_tensor({L}, i2), false);
    double diff = 0.0;
    for (std::size_t i = 0; i < r1->values.size(); ++i) diff += std::abs(r1->values[i] - r2->values[i]);
    CHECK(diff > 0.0);
}

TEST_CASE("deformer: single part, permutation equivariance, zero regressor") {
    Rng rng(37);
    const int L = 8;
    auto def = Deformer::init(L, 2, 4, 12, 8, rng);
    auto gp = zeros({L});
    auto gd = zeros({L});
    for (auto& v : gp->values) v = rng.uniform(-1, 1);
    for (auto& v : gd->values) v = rng.uniform(-1, 1);

    // single node: softmax over one key is 1, pipeline still runs
    auto single = zeros({1, L});
    for (auto& v : single->values) v = rng.uniform(-1, 1);
    auto out1 = def.forward(single, gp, gd);
    CHECK(out1.center_delta->shape == Shape{1, 3});
    CHECK(out1.scale_raw->shape == Shape{1, 3});

    // permuting parts permutes outputs (within floating reassociation)
    const int np = 5;
    auto parts = zeros({np, L});
    for (auto& v : parts->values) v = rng.uniform(-1, 1);
    auto base = def.forward(parts, gp, gd);
    std::vector<int> perm = {3, 1, 4, 0, 2};
    auto parts_perm = gather_rows(parts, perm);
    auto permuted_out = def.forward(parts_perm, gp, gd);
    for (int i = 0; i < np; ++i)
        for (int j = 0; j < 3; ++j) {
            const double a = base.center_delta->values[static_cast<std::size_t>(perm[i]) * 3 + j];
            const double b = permuted_out.center_delta->values[static_cast<std::size_t>(i) * 3 + j];
            CHECK(std::abs(a - b) < 1e-12);
        }

    // zero final regressor layer -> zero outputs
    std::fill(def.reg3.weight->values.begin(), def.reg3.weight->values.end(), 0.0);
    std::fill(def.reg3.bias->values.begin(), def.reg3.bias->values.end(), 0.0);
    auto zeroed = def.forward(parts, gp, gd);
    for (double v : zeroed.center_delta->values) CHECK(v == 0.0);
    for (double v : zeroed.scale_raw->values) CHECK(v == 0.0);
}

TEST_CASE("scales_from_raw: identity, exp, clamp bounds") {
    auto z = scales_from_raw(zeros({1, 3}));
    for (double v : z->values) CHECK(v == 1.0);

    auto ln2 = scales_from_raw(full({1, 3}, std::log(2.0)));
    for (double v : ln2->values) CHECK(v == doctest::Approx(2.0).epsilon(1e-12));

    auto big = scales_from_raw(make_tensor({1, 2}, {10.0, -10.0}));
    CHECK(big->values[0] == doctest::Approx(std::exp(2.0)).epsilon(1e-12));
    CHECK(big->values[1] == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
}

TEST_CASE("recon head: shape and zero map") {
    Rng rng(38);
    auto head = ReconHead::init(8, 24, rng);
    auto g = zeros({8});
    for (auto& v : g->values) v = rng.uniform(-1, 1);
    auto out = head.forward(g);
    CHECK(out->shape == Shape{24, 3});

    optim::ParamMap pm;
    head.collect(pm, "r");
    for (const auto& e : pm.entries()) std::fill(e.tensor->values.begin(), e.tensor->values.end(), 0.0);
    auto z = head.forward(g);
    for (double v : z->values) CHECK(v == 0.0);
}

TEST_CASE("every net head passes the gradient suite at 1e-4") {
    auto reg = gradcheck::standard_registry();
    for (const auto& r : reg.run("nets", 1e-4)) {
        INFO(r.name, " max rel err ", r.max_rel_err);
        CHECK(r.pass);
    }
}
