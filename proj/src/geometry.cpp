#include "redforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace redforge::geometry {

double Vec3::norm() const { return std::sqrt(norm_sq()); }

bool PointCloud::all_finite() const {
    for (const auto& p : points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// k-d tree

namespace {
constexpr int kLeafSize = 8;

inline bool better(double d2, int idx, double best_d2, int best_idx) {
    return d2 < best_d2 || (d2 == best_d2 && idx < best_idx);
}
}  // namespace

KdTree::KdTree(const PointCloud& cloud) : cloud_(cloud) {
    order_.resize(cloud.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!cloud.empty()) {
        nodes_.reserve(2 * cloud.size() / kLeafSize + 4);
        root_ = build(0, static_cast<int>(cloud.size()), 0);
    }
}

int KdTree::build(int begin, int end, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= kLeafSize) {
        // keep leaf entries index-sorted so equal-distance scans hit the
        // lowest index first
        std::sort(order_.begin() + begin, order_.begin() + end);
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    const int axis = depth % 3;
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return cloud_[a][axis] < cloud_[b][axis]; });
    const double split = cloud_[order_[mid]][axis];
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

void KdTree::query(int node, const Vec3& q, int& best_idx, double& best_d2) const {
    const Node& n = nodes_[node];
    if (n.axis < 0) {
        for (int i = n.begin; i < n.end; ++i) {
            const int idx = order_[i];
            const double d2 = dist_sq(q, cloud_[idx]);
            if (better(d2, idx, best_d2, best_idx)) {
                best_d2 = d2;
                best_idx = idx;
            }
        }
        return;
    }
    const double delta = q[n.axis] - n.split;
    const int near = delta < 0.0 ? n.left : n.right;
    const int far = delta < 0.0 ? n.right : n.left;
    query(near, q, best_idx, best_d2);
    // visit the far side on exact ties too: it may hold an equal-distance
    // point with a lower index
    if (delta * delta <= best_d2) query(far, q, best_idx, best_d2);
}

std::pair<int, double> KdTree::nearest(const Vec3& q) const {
    int best_idx = std::numeric_limits<int>::max();
    double best_d2 = std::numeric_limits<double>::infinity();
    query(root_, q, best_idx, best_d2);
    return {best_idx, best_d2};
}

// ---------------------------------------------------------------------------

NeighborAssignment nearest_neighbors(const PointCloud& query, const PointCloud& target) {
    if (target.empty()) throw std::runtime_error("empty neighbor target");
    if (query.empty()) throw std::runtime_error("empty neighbor query");
    KdTree tree(target);
    NeighborAssignment out;
    out.index.resize(query.size());
    out.dist_sq.resize(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) {
        auto [idx, d2] = tree.nearest(query[i]);
        out.index[i] = idx;
        out.dist_sq[i] = d2;
    }
    return out;
}

NeighborAssignment nearest_neighbors_bruteforce(const PointCloud& query, const PointCloud& target) {
    if (target.empty()) throw std::runtime_error("empty neighbor target");
    if (query.empty()) throw std::runtime_error("empty neighbor query");
    NeighborAssignment out;
    out.index.resize(query.size());
    out.dist_sq.resize(query.size());
    for (std::size_t i = 0; i < query.size(); ++i) {
        int best = 0;
        double best_d2 = dist_sq(query[i], target[0]);
        for (std::size_t j = 1; j < target.size(); ++j) {
            const double d2 = dist_sq(query[i], target[j]);
            if (d2 < best_d2) {
                best_d2 = d2;
                best = static_cast<int>(j);
            }
        }
        out.index[i] = best;
        out.dist_sq[i] = best_d2;
    }
    return out;
}

namespace {
double mean_nn_dist_sq(const PointCloud& from, const KdTree& tree) {
    double acc = 0.0;
    for (const auto& p : from.points) acc += tree.nearest(p).second;
    return acc / static_cast<double>(from.size());
}
}  // namespace

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw std::runtime_error("chamfer_distance: empty cloud");
    KdTree ta(a), tb(b);
    return mean_nn_dist_sq(a, tb) + mean_nn_dist_sq(b, ta);
}

double chamfer_distance_bruteforce(const PointCloud& a, const PointCloud& b) {
    const auto ab = nearest_neighbors_bruteforce(a, b);
    const auto ba = nearest_neighbors_bruteforce(b, a);
    const double ma = std::accumulate(ab.dist_sq.begin(), ab.dist_sq.end(), 0.0) / static_cast<double>(a.size());
    const double mb = std::accumulate(ba.dist_sq.begin(), ba.dist_sq.end(), 0.0) / static_cast<double>(b.size());
    return ma + mb;
}

std::vector<int> resample_indices(std::size_t n, std::size_t m, Rng& rng) {
    if (n == 0) throw std::runtime_error("resample: empty input");
    if (m == 0) throw std::runtime_error("resample: zero output size");
    std::vector<int> out(m);
    if (m <= n) {
        // partial Fisher-Yates: first m entries of a random permutation
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
            std::swap(idx[i], idx[j]);
            out[i] = idx[i];
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) out[i] = static_cast<int>(rng.below(n));
    }
    return out;
}

PointCloud resample_uniform(const PointCloud& cloud, std::size_t m, std::uint64_t seed) {
    Rng rng(seed);
    const auto idx = resample_indices(cloud.size(), m, rng);
    PointCloud out;
    out.points.reserve(m);
    for (int i : idx) out.points.push_back(cloud[i]);
    return out;
}

NormalizeResult normalize_unit(const PointCloud& cloud) {
    if (cloud.empty()) throw std::runtime_error("normalize_unit: empty cloud");
    Vec3 c{0, 0, 0};
    for (const auto& p : cloud.points) c += p;
    c = c / static_cast<double>(cloud.size());
    double scale = 0.0;
    for (const auto& p : cloud.points) {
        const Vec3 d = p - c;
        scale = std::max({scale, std::abs(d.x), std::abs(d.y), std::abs(d.z)});
    }
    if (scale < 1e-12) throw std::runtime_error("zero extent");
    NormalizeResult res;
    res.center = c;
    res.scale = scale;
    res.cloud.points.reserve(cloud.size());
    for (const auto& p : cloud.points) res.cloud.points.push_back((p - c) / scale);
    return res;
}

PointCloud denormalize(const PointCloud& cloud, const Vec3& center, double scale) {
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) out.points.push_back(p * scale + center);
    return out;
}

PointCloud reflect_bilateral(const PointCloud& cloud) {
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) out.points.push_back({-p.x, p.y, p.z});
    return out;
}

// ---------------------------------------------------------------------------
// I/O

void save_pcf(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path.string());
    f.write("PCF1", 4);
    const std::uint32_t n = static_cast<std::uint32_t>(cloud.size());
    f.write(reinterpret_cast<const char*>(&n), 4);
    std::vector<float> buf(cloud.size() * 3);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        buf[3 * i + 0] = static_cast<float>(cloud[i].x);
        buf[3 * i + 1] = static_cast<float>(cloud[i].y);
        buf[3 * i + 2] = static_cast<float>(cloud[i].z);
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw std::runtime_error("short write: " + path.string());
}

PointCloud load_pcf(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "PCF1", 4) != 0)
        throw std::runtime_error("PCF1 parse error at byte 0: bad magic in " + path.string());
    std::uint32_t n = 0;
    if (!f.read(reinterpret_cast<char*>(&n), 4))
        throw std::runtime_error("PCF1 parse error at byte 4: truncated point count in " + path.string());
    std::vector<float> buf(static_cast<std::size_t>(n) * 3);
    if (!f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float))))
        throw std::runtime_error("PCF1 parse error at byte " + std::to_string(8 + f.gcount()) +
                                 ": truncated point data in " + path.string());
    PointCloud out;
    out.points.resize(n);
    for (std::uint32_t i = 0; i < n; ++i)
        out.points[i] = {buf[3 * i + 0], buf[3 * i + 1], buf[3 * i + 2]};
    return out;
}

void save_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path.string());
    f.precision(17);
    for (const auto& p : cloud.points) f << p.x << ' ' << p.y << ' ' << p.z << '\n';
}

PointCloud load_xyz(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path.string());
    PointCloud out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        Vec3 p;
        if (!(ss >> p.x >> p.y >> p.z))
            throw std::runtime_error("xyz parse error at line " + std::to_string(lineno) + " in " + path.string());
        out.points.push_back(p);
    }
    return out;
}

PointCloud load_cloud(const std::filesystem::path& path) {
    return path.extension() == ".pcf" ? load_pcf(path) : load_xyz(path);
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
    if (path.extension() == ".pcf")
        save_pcf(cloud, path);
    else
        save_xyz(cloud, path);
}

}  // namespace redforge::geometry
