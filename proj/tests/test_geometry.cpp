#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "redforge/geometry.hpp"
#include "redforge/rng.hpp"

using namespace redforge;
using namespace redforge::geometry;

namespace {

PointCloud random_cloud(int n, Rng& rng) {
    PointCloud c;
    for (int i = 0; i < n; ++i) c.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    return c;
}

PointCloud cube_corners(double half) {
    PointCloud c;
    for (int i = 0; i < 8; ++i)
        c.points.push_back({(i & 1) ? half : -half, (i & 2) ? half : -half, (i & 4) ? half : -half});
    return c;
}

}  // namespace

TEST_CASE("nearest_neighbors: exact match and tie break") {
    PointCloud q{{{0, 0, 0}}};
    PointCloud t{{{1, 0, 0}, {0, 0, 0}}};
    auto nn = nearest_neighbors(q, t);
    CHECK(nn.index[0] == 1);
    CHECK(nn.dist_sq[0] == 0.0);

    PointCloud t2{{{1, 0, 0}, {-1, 0, 0}}};
    auto nn2 = nearest_neighbors(q, t2);
    CHECK(nn2.index[0] == 0);  // symmetric tie resolves to the lower index
    CHECK(nn2.dist_sq[0] == 1.0);
}

TEST_CASE("nearest_neighbors: empty target errors") {
    PointCloud q{{{0, 0, 0}}};
    PointCloud empty;
    CHECK_THROWS_WITH_AS(nearest_neighbors(q, empty), "empty neighbor target", std::runtime_error);
}

TEST_CASE("nearest_neighbors matches brute force on random pairs") {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        const int nq = 1 + static_cast<int>(rng.below(128));
        const int nt = 1 + static_cast<int>(rng.below(128));
        auto q = random_cloud(nq, rng);
        auto t = random_cloud(nt, rng);
        auto fast = nearest_neighbors(q, t);
        auto slow = nearest_neighbors_bruteforce(q, t);
        REQUIRE(fast.size() == slow.size());
        for (std::size_t i = 0; i < fast.size(); ++i) {
            CHECK(fast.index[i] == slow.index[i]);
            CHECK(fast.dist_sq[i] == slow.dist_sq[i]);
        }
    }
}

TEST_CASE("nearest_neighbors matches brute force on duplicate-heavy clouds") {
    Rng rng(8);
    PointCloud t;
    for (int i = 0; i < 60; ++i) {
        Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        t.points.push_back(p);
        t.points.push_back(p);  // exact duplicates force distance ties
    }
    auto q = random_cloud(50, rng);
    auto fast = nearest_neighbors(q, t);
    auto slow = nearest_neighbors_bruteforce(q, t);
    for (std::size_t i = 0; i < fast.size(); ++i) {
        CHECK(fast.index[i] == slow.index[i]);
        CHECK(fast.dist_sq[i] == slow.dist_sq[i]);
    }
}

TEST_CASE("chamfer_distance: hand case and properties") {
    PointCloud a{{{0, 0, 0}, {1, 0, 0}}};
    PointCloud b{{{0, 0, 0}, {0, 1, 0}}};
    CHECK(chamfer_distance(a, b) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(9);
    auto c = random_cloud(32, rng);
    auto d = random_cloud(32, rng);
    CHECK(chamfer_distance(c, c) == 0.0);
    CHECK(chamfer_distance(c, d) == chamfer_distance(d, c));
    CHECK(chamfer_distance(c, d) >= 0.0);
    const double oracle = chamfer_distance_bruteforce(c, d);
    CHECK(chamfer_distance(c, d) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("chamfer is preserved under joint reflection") {
    Rng rng(10);
    auto a = random_cloud(40, rng);
    auto b = random_cloud(37, rng);
    CHECK(chamfer_distance(reflect_bilateral(a), reflect_bilateral(b)) ==
          doctest::Approx(chamfer_distance(a, b)).epsilon(1e-12));
}

TEST_CASE("resample_uniform: subset, replacement, determinism") {
    Rng rng(11);
    auto big = random_cloud(2048, rng);
    auto sub = resample_uniform(big, 1024, 7);
    REQUIRE(sub.size() == 1024);
    // without replacement: all points are distinct members of the input
    for (const auto& p : sub.points) {
        bool found = false;
        for (const auto& q : big.points)
            if (p == q) {
                found = true;
                break;
            }
        CHECK(found);
    }

    auto small = random_cloud(100, rng);
    auto up = resample_uniform(small, 1024, 7);
    REQUIRE(up.size() == 1024);
    for (const auto& p : up.points) {
        bool found = false;
        for (const auto& q : small.points)
            if (p == q) {
                found = true;
                break;
            }
        CHECK(found);
    }

    auto again = resample_uniform(big, 1024, 7);
    for (std::size_t i = 0; i < sub.size(); ++i) CHECK(sub[i] == again[i]);

    CHECK_THROWS(resample_uniform(big, 0, 1));
}

TEST_CASE("resample without replacement yields distinct indices") {
    Rng rng(12);
    auto idx = resample_indices(500, 200, rng);
    std::vector<int> sorted = idx;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("normalize_unit: cube, idempotence, round trip") {
    auto cube = cube_corners(2.0);
    auto res = normalize_unit(cube);
    CHECK(res.scale == doctest::Approx(2.0));
    CHECK(res.center.norm() < 1e-12);
    for (const auto& p : res.cloud.points) CHECK(std::max({std::abs(p.x), std::abs(p.y), std::abs(p.z)}) == doctest::Approx(1.0));

    auto res2 = normalize_unit(res.cloud);
    CHECK(res2.scale == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(res2.center.norm() < 1e-9);

    Rng rng(13);
    auto c = random_cloud(50, rng);
    auto n = normalize_unit(c);
    auto back = denormalize(n.cloud, n.center, n.scale);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK((back[i] - c[i]).norm() < 1e-9);

    PointCloud degenerate{{{1, 1, 1}, {1, 1, 1}}};
    CHECK_THROWS_WITH_AS(normalize_unit(degenerate), "zero extent", std::runtime_error);
}

TEST_CASE("reflect_bilateral: definition, fixed point, involution") {
    PointCloud c{{{1, 2, 3}}};
    auto r = reflect_bilateral(c);
    CHECK(r[0] == Vec3{-1, 2, 3});

    PointCloud sym{{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}}};
    CHECK(chamfer_distance(sym, reflect_bilateral(sym)) == 0.0);

    Rng rng(14);
    auto rand = random_cloud(20, rng);
    auto twice = reflect_bilateral(reflect_bilateral(rand));
    for (std::size_t i = 0; i < rand.size(); ++i) CHECK(rand[i] == twice[i]);
}

TEST_CASE("PCF1 round trip and parse errors") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "redforge_geom_test";
    fs::create_directories(dir);

    Rng rng(15);
    PointCloud c;
    // f32-representable coordinates so the round trip is exact
    for (int i = 0; i < 100; ++i)
        c.points.push_back({snap_to_f32(rng.uniform(-1, 1)), snap_to_f32(rng.uniform(-1, 1)),
                            snap_to_f32(rng.uniform(-1, 1))});

    const auto path = dir / "cloud.pcf";
    save_pcf(c, path);
    auto back = load_pcf(path);
    REQUIRE(back.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(back[i] == c[i]);

    // text variant
    const auto tpath = dir / "cloud.xyz";
    save_xyz(c, tpath);
    auto tback = load_xyz(tpath);
    REQUIRE(tback.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i) CHECK((tback[i] - c[i]).norm() < 1e-12);

    // truncation produces a structured error
    {
        std::ofstream f(dir / "trunc.pcf", std::ios::binary);
        f.write("PCF1", 4);
        std::uint32_t n = 10;
        f.write(reinterpret_cast<const char*>(&n), 4);
        float vals[6] = {0, 0, 0, 1, 1, 1};
        f.write(reinterpret_cast<const char*>(vals), sizeof(vals));
    }
    CHECK_THROWS_WITH_AS(load_pcf(dir / "trunc.pcf"), doctest::Contains("truncated point data"), std::runtime_error);

    {
        std::ofstream f(dir / "badmagic.pcf", std::ios::binary);
        f.write("NOPE", 4);
    }
    CHECK_THROWS_WITH_AS(load_pcf(dir / "badmagic.pcf"), doctest::Contains("bad magic"), std::runtime_error);
}
