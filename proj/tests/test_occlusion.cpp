#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "redforge/occlusion.hpp"
#include "redforge/shapes.hpp"

using namespace redforge;
using namespace redforge::occlusion;
using geometry::PointCloud;
using geometry::Vec3;

namespace {

PointCloud unit_cube_corners() {
    PointCloud c;
    for (int i = 0; i < 8; ++i)
        c.points.push_back({(i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0});
    return c;
}

PointCloud random_cloud(int n, Rng& rng) {
    PointCloud c;
    for (int i = 0; i < n; ++i) c.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    return c;
}

}  // namespace

TEST_CASE("occlude_ball: radius zero, total occlusion, corner enumeration") {
    auto cube = unit_cube_corners();
    CHECK(occlude_ball(cube, {0, 0, 0}, 0.0).size() == 8);
    CHECK(occlude_ball(cube, {0, 0, 0}, 10.0).empty());

    auto surv = occlude_ball(cube, {1, 1, 1}, 1.1);
    CHECK(surv.size() == 7);
    // exactly the (1,1,1) corner (index 7) is removed
    CHECK(std::find(surv.begin(), surv.end(), 7) == surv.end());
}

TEST_CASE("occlude_plane: large offset, corner enumeration, complement") {
    auto cube = unit_cube_corners();
    CHECK(occlude_plane(cube, {0, 0, 1}, 1e9).size() == 8);

    auto surv = occlude_plane(cube, {0, 0, 1}, 0.0);
    CHECK(surv.size() == 4);
    for (int i : surv) CHECK(cube[static_cast<std::size_t>(i)].z < 0);

    // boundary-free cloud: flipping the normal and negating the offset keeps
    // exactly the complement
    Rng rng(3);
    auto cloud = random_cloud(200, rng);
    const Vec3 n{0.6, 0.8, 0.0};
    auto a = occlude_plane(cloud, n, 0.12);
    auto b = occlude_plane(cloud, {-n.x, -n.y, -n.z}, -0.12);
    CHECK(a.size() + b.size() == cloud.size());
    std::vector<int> all = a;
    all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
}

TEST_CASE("occlude_mask: identity, exact count, determinism") {
    Rng rng(4);
    auto cloud = random_cloud(1024, rng);
    CHECK(occlude_mask(cloud, 0.0, 5).size() == 1024);
    CHECK(occlude_mask(cloud, 0.5, 5).size() == 512);
    CHECK(occlude_mask(cloud, 0.5, 5) == occlude_mask(cloud, 0.5, 5));
    CHECK(occlude_mask(cloud, 0.5, 5) != occlude_mask(cloud, 0.5, 6));
}

TEST_CASE("ball occlusion is monotone in radius") {
    Rng rng(5);
    auto cloud = random_cloud(300, rng);
    std::size_t prev = cloud.size();
    for (double r = 0.0; r <= 2.0; r += 0.1) {
        const auto surv = occlude_ball(cloud, {0.2, 0.0, -0.1}, r).size();
        CHECK(surv <= prev);
        prev = surv;
    }
}

TEST_CASE("simulate: ratio zero is a pure resampling with exact correspondence") {
    auto shape = shapes::generate_shape(shapes::Category::Chair, 42, 256);
    OcclusionSpec spec;
    spec.kind = Kind::Ball;
    spec.target_ratio = 0.0;
    spec.noise_sigma = 0.0;
    spec.seed = 9;
    auto obs = simulate(shape.cloud, spec, 256);
    CHECK(obs.achieved_ratio == 0.0);
    REQUIRE(obs.partial.size() == 256);
    for (std::size_t i = 0; i < obs.partial.size(); ++i) {
        const int src = obs.correspondence[i];
        REQUIRE(src >= 0);
        REQUIRE(src < static_cast<int>(shape.cloud.size()));
        CHECK(obs.partial[i] == shape.cloud[static_cast<std::size_t>(src)]);
    }
}

TEST_CASE("simulate: ratio control within the +/-0.02 band") {
    for (double ratio : {0.25, 0.5, 0.75}) {
        for (auto kind : {Kind::Ball, Kind::Plane, Kind::Mask, Kind::Composite}) {
            auto shape = shapes::generate_shape(shapes::Category::Table, 7 + static_cast<int>(ratio * 100), 512);
            OcclusionSpec spec;
            spec.kind = kind;
            spec.target_ratio = ratio;
            spec.seed = 11;
            spec.ball_center = shape.cloud[0];
            auto obs = simulate(shape.cloud, spec, 512);
            INFO("kind=", kind_name(kind), " ratio=", ratio, " achieved=", obs.achieved_ratio);
            CHECK(std::abs(obs.achieved_ratio - ratio) <= 0.02);
        }
    }
}

TEST_CASE("simulate: noise perturbs points after correspondence capture") {
    auto shape = shapes::generate_shape(shapes::Category::Cabinet, 3, 256);
    OcclusionSpec spec;
    spec.kind = Kind::Mask;
    spec.target_ratio = 0.25;
    spec.noise_sigma = 0.01;
    spec.seed = 21;
    auto obs = simulate(shape.cloud, spec, 256);
    double max_dev = 0.0, mean_dev = 0.0;
    for (std::size_t i = 0; i < obs.partial.size(); ++i) {
        const auto& orig = shape.cloud[static_cast<std::size_t>(obs.correspondence[i])];
        const double d = (obs.partial[i] - orig).norm();
        max_dev = std::max(max_dev, d);
        mean_dev += d;
    }
    mean_dev /= static_cast<double>(obs.partial.size());
    CHECK(mean_dev > 0.005);  // noise actually applied
    CHECK(max_dev < 0.1);     // but small
}

TEST_CASE("simulate: duplicate-point degenerate cloud is an unreachable ratio") {
    PointCloud dup;
    for (int i = 0; i < 64; ++i) dup.points.push_back({0.5, 0.5, 0.5});
    OcclusionSpec spec;
    spec.kind = Kind::Ball;
    spec.ball_center = {0, 0, 0};
    spec.target_ratio = 0.5;
    spec.seed = 1;
    CHECK_THROWS_WITH_AS(simulate(dup, spec, 64), "unreachable ratio", std::runtime_error);
}

TEST_CASE("simulate: determinism per seed") {
    auto shape = shapes::generate_shape(shapes::Category::Chair, 17, 256);
    OcclusionSpec spec;
    spec.kind = Kind::Composite;
    spec.ball_center = shape.cloud[10];
    spec.target_ratio = 0.5;
    spec.noise_sigma = 0.01;
    spec.seed = 33;
    auto a = simulate(shape.cloud, spec, 256);
    auto b = simulate(shape.cloud, spec, 256);
    CHECK(a.correspondence == b.correspondence);
    for (std::size_t i = 0; i < a.partial.size(); ++i) CHECK(a.partial[i] == b.partial[i]);
}
