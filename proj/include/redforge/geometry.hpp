#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "redforge/rng.hpp"

namespace redforge::geometry {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm_sq() const { return dot(*this); }
    double norm() const;
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline double dist_sq(const Vec3& a, const Vec3& b) { return (a - b).norm_sq(); }

// Round a double to the nearest f32 value. The volatile hop keeps the
// narrowing through a real conversion; gcc's vectorizer otherwise folds
// double->float->double away at -O3.
inline double snap_to_f32(double v) {
    volatile float f = static_cast<float>(v);
    return static_cast<double>(f);
}

// Ordered set of 3D points in normalized model coordinates.
struct PointCloud {
    std::vector<Vec3> points;

    PointCloud() = default;
    explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    const Vec3& operator[](std::size_t i) const { return points[i]; }
    Vec3& operator[](std::size_t i) { return points[i]; }

    // all coordinates finite
    bool all_finite() const;
};

// Per-query nearest neighbor: target index and exact squared distance.
struct NeighborAssignment {
    std::vector<int> index;
    std::vector<double> dist_sq;

    std::size_t size() const { return index.size(); }
};

// Static median-split k-d tree over a point set. Queries break distance ties
// toward the lowest point index so results are identical to the brute-force
// scan on any input.
class KdTree {
public:
    explicit KdTree(const PointCloud& cloud);

    // (index, squared distance) of the nearest point
    std::pair<int, double> nearest(const Vec3& q) const;

private:
    struct Node {
        int axis = -1;      // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf index range into order_
    };

    int build(int begin, int end, int depth);
    void query(int node, const Vec3& q, int& best_idx, double& best_d2) const;

    const PointCloud& cloud_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

// Exact nearest neighbors of every query point in target (tie -> lowest
// target index). Throws "empty neighbor target" when target is empty.
NeighborAssignment nearest_neighbors(const PointCloud& query, const PointCloud& target);

// O(N^2) reference used as the oracle in tests; same contract as above.
NeighborAssignment nearest_neighbors_bruteforce(const PointCloud& query, const PointCloud& target);

// Symmetric squared Chamfer distance: mean over a of squared NN distance
// into b plus the same in the other direction.
double chamfer_distance(const PointCloud& a, const PointCloud& b);
double chamfer_distance_bruteforce(const PointCloud& a, const PointCloud& b);

// m uniformly sampled indices from [0, n): without replacement when m <= n,
// with replacement otherwise. Deterministic per rng state.
std::vector<int> resample_indices(std::size_t n, std::size_t m, Rng& rng);

PointCloud resample_uniform(const PointCloud& cloud, std::size_t m, std::uint64_t seed);

struct NormalizeResult {
    PointCloud cloud;
    Vec3 center;
    double scale = 1.0;
};

// Centers the cloud at its centroid and scales the largest coordinate
// magnitude to 1. (center, scale) invert the map.
NormalizeResult normalize_unit(const PointCloud& cloud);
PointCloud denormalize(const PointCloud& cloud, const Vec3& center, double scale);

// (x, y, z) -> (-x, y, z); the model-coordinate symmetry plane is x = 0.
PointCloud reflect_bilateral(const PointCloud& cloud);

// PCF1 binary format: magic "PCF1", u32 LE point count, then M*3 f32 LE.
void save_pcf(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud load_pcf(const std::filesystem::path& path);

// plain-text variant: one "x y z" line per point
void save_xyz(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud load_xyz(const std::filesystem::path& path);

// dispatch on extension: .pcf binary, anything else text
PointCloud load_cloud(const std::filesystem::path& path);
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace redforge::geometry
