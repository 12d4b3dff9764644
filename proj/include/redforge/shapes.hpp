#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "redforge/autodiff.hpp"
#include "redforge/geometry.hpp"

namespace redforge::shapes {

using geometry::PointCloud;
using geometry::Vec3;

enum class Category { Chair, Table, Cabinet };

std::string category_name(Category c);
Category category_from_name(const std::string& name);
constexpr int kCategoryCount = 3;

// Axis-aligned part box: center plus extents along x (width), y (height),
// z (length).
struct PartBox {
    Vec3 c0;
    double w0 = 1.0, h0 = 1.0, l0 = 1.0;
    int part_id = 0;

    bool contains(const Vec3& p, double slack = 1e-6) const {
        return std::abs(p.x - c0.x) <= 0.5 * w0 + slack && std::abs(p.y - c0.y) <= 0.5 * h0 + slack &&
               std::abs(p.z - c0.z) <= 0.5 * l0 + slack;
    }
};

struct PartSegmentedShape {
    PointCloud cloud;
    std::vector<std::uint16_t> part_labels;  // per point
    std::vector<PartBox> parts;
    std::vector<std::pair<int, int>> connectivity;  // undirected, i < j
    Category category = Category::Chair;

    int part_count() const { return static_cast<int>(parts.size()); }
    void validate() const;  // all declared invariants
};

// Procedural box-assembly shape, bilaterally symmetric about x = 0, sampled
// on part surfaces at density proportional to area and snapped to f32 so
// PCF1 round trips are bit-exact. m must be even (points come in mirror
// pairs). Chair: seat+back+4 legs; table: top+4 legs; cabinet: body+base+top.
PartSegmentedShape generate_shape(Category category, std::uint64_t seed, std::size_t m = 1024);

// Per-part mean of pointwise feature rows; throws "empty part".
autodiff::TensorPtr part_mean_pool(const autodiff::TensorPtr& pointwise, const std::vector<std::uint16_t>& labels,
                                   int n_parts);

struct SourceDatabase {
    std::vector<std::string> ids;  // sorted; shapes[i] belongs to ids[i]
    std::vector<PartSegmentedShape> shapes;

    std::size_t size() const { return shapes.size(); }
    int find(const std::string& id) const;  // -1 when missing
};

SourceDatabase build_database(int n_per_category, std::uint64_t seed, std::size_t m = 1024);

// SDB1 on-disk layout: manifest.json plus per-shape PCF1 cloud and u16 LE
// label file under clouds/.
void save_database(const SourceDatabase& db, const std::filesystem::path& dir);
SourceDatabase load_database(const std::filesystem::path& dir);

}  // namespace redforge::shapes
