#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "redforge/geometry.hpp"

namespace redforge::occlusion {

using geometry::PointCloud;
using geometry::Vec3;

enum class Kind { Ball, Plane, Mask, Composite };

std::string kind_name(Kind k);
Kind kind_from_name(const std::string& name);

// Description of one simulated partial observation. The geometric parameter
// (ball radius / plane offset) is treated as free and solved by bisection so
// the removal fraction lands on target_ratio; mask removal is exact.
struct OcclusionSpec {
    Kind kind = Kind::Ball;
    Vec3 ball_center{0, 0, 0};
    double ball_radius = 0.0;
    Vec3 plane_normal{0, 0, 1};
    double plane_offset = 0.0;
    double mask_fraction = 0.0;
    double target_ratio = 0.0;  // fraction of points to remove, in [0, 1)
    std::uint64_t seed = 0;
    double noise_sigma = 0.0;  // per-axis Gaussian std-dev, model units

    void validate() const;
};

struct PartialObservation {
    PointCloud partial;               // resampled to the requested size
    std::vector<int> correspondence;  // partial point i originated at full point correspondence[i]
    double achieved_ratio = 0.0;
};

// Survivor index sets for the three occluders, exact definitions:
// ball removes dist(p, center) < radius, plane removes dot(p, normal) > offset,
// mask removes exactly floor(fraction * M) seeded-uniform points.
std::vector<int> occlude_ball(const PointCloud& cloud, const Vec3& center, double radius);
std::vector<int> occlude_plane(const PointCloud& cloud, const Vec3& normal, double offset);
std::vector<int> occlude_mask(const PointCloud& cloud, double fraction, std::uint64_t seed);

// Runs the occluder with its size parameter bisected until the achieved
// removal ratio is within +/-0.02 of target_ratio, resamples survivors to
// m_out keeping the full-shape correspondence, then adds Gaussian noise.
// Throws "unreachable ratio" when bisection cannot land in the band.
PartialObservation simulate(const PointCloud& cloud, const OcclusionSpec& spec, std::size_t m_out);

// Fills in sample-specific geometry (ball center on the shape, random plane
// orientation) from the rng; the base spec supplies everything else.
OcclusionSpec randomize_geometry(const OcclusionSpec& base, const PointCloud& cloud, Rng& rng);

}  // namespace redforge::occlusion
