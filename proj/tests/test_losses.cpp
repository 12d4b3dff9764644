#include <doctest.h>

#include <cmath>

#include "redforge/gradcheck.hpp"
#include "redforge/losses.hpp"
#include "redforge/nets.hpp"
#include "redforge/shapes.hpp"

using namespace redforge;
using namespace redforge::losses;
using namespace redforge::autodiff;
using geometry::PointCloud;

namespace {

PointCloud random_cloud(int n, Rng& rng) {
    PointCloud c;
    for (int i = 0; i < n; ++i) c.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    return c;
}

}  // namespace

TEST_CASE("loss_re: perfect residual, zero displacement, single point") {
    Rng rng(41);
    // R_i = Q_nn(i) - P_i gives exactly zero
    for (int trial = 0; trial < 5; ++trial) {
        auto p = random_cloud(20, rng);
        auto q = random_cloud(24, rng);
        auto qt = nets::tensor_from_cloud(q);
        const auto nn = geometry::nearest_neighbors(p, q);
        std::vector<double> rvals;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const auto d = q[static_cast<std::size_t>(nn.index[i])] - p[i];
            rvals.insert(rvals.end(), {d.x, d.y, d.z});
        }
        auto residual = make_tensor({20, 3}, rvals);
        CHECK(loss_re(p, residual, qt)->scalar() == 0.0);
    }

    // P = Q as sets, R = 0
    auto p = random_cloud(16, rng);
    PointCloud q_shuffled;
    for (std::size_t i = 0; i < p.size(); ++i) q_shuffled.points.push_back(p[(i + 7) % p.size()]);
    CHECK(loss_re(p, zeros({16, 3}), nets::tensor_from_cloud(q_shuffled))->scalar() == 0.0);

    // single-point hand value
    PointCloud single{{{0, 0, 0}}};
    auto q1 = make_tensor({1, 3}, {1, 0, 0});
    CHECK(loss_re(single, zeros({1, 3}), q1)->scalar() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("loss_chamfer: zero at the matched minimum, matches the oracle") {
    Rng rng(42);
    auto target = random_cloud(20, rng);
    auto same = nets::tensor_from_cloud(target);
    same->requires_grad = true;
    auto l = loss_chamfer(same, target);
    CHECK(l->scalar() == 0.0);
    backward(l);
    for (double g : same->grad) CHECK(g == 0.0);

    auto other = random_cloud(25, rng);
    auto ot = nets::tensor_from_cloud(other);
    CHECK(loss_chamfer(ot, target)->scalar() ==
          doctest::Approx(geometry::chamfer_distance_bruteforce(other, target)).epsilon(1e-12));
}

TEST_CASE("loss_symmetry: symmetric fixed point and single-point hand value") {
    PointCloud sym{{{0.5, 0.1, 0.2}, {-0.5, 0.1, 0.2}}};
    CHECK(loss_symmetry(nets::tensor_from_cloud(sym))->scalar() == 0.0);

    // single point (1,0,0): mirror is (-1,0,0), squared distance 4 both ways
    auto single = make_tensor({1, 3}, {1, 0, 0});
    CHECK(loss_symmetry(single)->scalar() == doctest::Approx(8.0).epsilon(1e-15));
}

TEST_CASE("loss_recon: identity, oracle, permutation invariance") {
    Rng rng(43);
    auto input = random_cloud(18, rng);
    CHECK(loss_recon(nets::tensor_from_cloud(input), input)->scalar() == 0.0);

    auto recon = random_cloud(18, rng);
    CHECK(loss_recon(nets::tensor_from_cloud(recon), input)->scalar() ==
          doctest::Approx(geometry::chamfer_distance_bruteforce(recon, input)).epsilon(1e-12));

    PointCloud recon_perm;
    for (std::size_t i = 0; i < recon.size(); ++i) recon_perm.points.push_back(recon[(i + 5) % recon.size()]);
    CHECK(loss_recon(nets::tensor_from_cloud(recon_perm), input)->scalar() ==
          doctest::Approx(loss_recon(nets::tensor_from_cloud(recon), input)->scalar()).epsilon(1e-12));
}

TEST_CASE("loss_consistency: identical branches and uniform shift") {
    Rng rng(44);
    auto d = nets::tensor_from_cloud(random_cloud(16, rng));
    auto r = nets::tensor_from_cloud(random_cloud(16, rng));
    auto co_same = loss_consistency(d, d, r, r);
    CHECK(co_same.co1->scalar() == 0.0);
    CHECK(co_same.co2->scalar() == 0.0);

    const double eps = 0.01;
    auto shifted = add(d, tile_rows(make_tensor({3}, {eps, 0, 0}), 16));
    auto co = loss_consistency(d, shifted, r, r);
    CHECK(co.co1->scalar() == doctest::Approx(eps * eps).epsilon(1e-12));

    auto r_short = zeros({8, 3});
    CHECK_THROWS(loss_consistency(d, shifted, r, r_short));
}

TEST_CASE("loss_total: weighting and NaN detection") {
    LossWeights w;  // defaults 3.0, 0.3, 1.0
    auto zero = scalar_tensor(0.0);
    auto one = scalar_tensor(1.0);

    auto all_zero = loss_total(zero, zero, zero, zero, zero, zero, w);
    CHECK(all_zero.total->scalar() == 0.0);

    auto cd_only = loss_total(one, zero, zero, zero, zero, zero, w);
    CHECK(cd_only.total->scalar() == doctest::Approx(3.0).epsilon(1e-15));

    auto re_only = loss_total(zero, zero, zero, one, zero, zero, w);
    CHECK(re_only.total->scalar() == doctest::Approx(0.3).epsilon(1e-15));

    auto breakdown_vals = breakdown(loss_total(one, one, one, one, one, one, w));
    CHECK(breakdown_vals.total ==
          doctest::Approx(w.lambda0 * 3 + w.lambda1 + w.lambda2 * 2).epsilon(1e-15));

    auto nan = scalar_tensor(std::nan(""));
    CHECK_THROWS_WITH_AS(loss_total(zero, nan, zero, zero, zero, zero, w), doctest::Contains("sym"),
                         std::runtime_error);
}

TEST_CASE("losses are non-negative on random inputs") {
    Rng rng(45);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = nets::tensor_from_cloud(random_cloud(12, rng));
        auto b = random_cloud(15, rng);
        CHECK(loss_chamfer(a, b)->scalar() >= 0.0);
        CHECK(loss_symmetry(a)->scalar() >= 0.0);
        auto r = nets::tensor_from_cloud(random_cloud(12, rng));
        CHECK(loss_re(b, zeros({15, 3}), a)->scalar() >= 0.0);
    }
}

TEST_CASE("every composite loss passes the gradient suite at 1e-4") {
    auto reg = gradcheck::standard_registry();
    for (const auto& r : reg.run("losses", 1e-4)) {
        INFO(r.name, " max rel err ", r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("chamfer gradient passes a tight 1e-6 check with frozen matches") {
    Rng rng(46);
    auto deformed = zeros({16, 3}, true);
    for (auto& v : deformed->values) v = rng.uniform(-1, 1);
    const auto target = random_cloud(16, rng);
    FrozenMatch frozen{geometry::nearest_neighbors(nets::cloud_from_tensor(deformed), target),
                       geometry::nearest_neighbors(target, nets::cloud_from_tensor(deformed))};
    auto report = gradcheck::finite_diff_check([&]() { return loss_chamfer(deformed, target, &frozen); }, {deformed},
                                               1e-5, 1e-6);
    INFO("max rel err ", report.max_rel_err);
    CHECK(report.pass);
}
