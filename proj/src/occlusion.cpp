#include "redforge/occlusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace redforge::occlusion {

std::string kind_name(Kind k) {
    switch (k) {
        case Kind::Ball: return "ball";
        case Kind::Plane: return "plane";
        case Kind::Mask: return "mask";
        case Kind::Composite: return "composite";
    }
    return "?";
}

Kind kind_from_name(const std::string& name) {
    if (name == "ball") return Kind::Ball;
    if (name == "plane") return Kind::Plane;
    if (name == "mask") return Kind::Mask;
    if (name == "composite") return Kind::Composite;
    throw std::runtime_error("unknown occlusion kind: " + name);
}

void OcclusionSpec::validate() const {
    if (target_ratio < 0.0 || target_ratio >= 1.0)
        throw std::runtime_error("occlusion target_ratio must be in [0, 1)");
    if (mask_fraction < 0.0 || mask_fraction >= 1.0)
        throw std::runtime_error("occlusion mask_fraction must be in [0, 1)");
    if (kind == Kind::Plane || kind == Kind::Composite) {
        const double n = plane_normal.norm();
        if (std::abs(n - 1.0) > 1e-9) throw std::runtime_error("occlusion plane normal must have unit length");
    }
    if (noise_sigma < 0.0) throw std::runtime_error("occlusion noise_sigma must be non-negative");
}

std::vector<int> occlude_ball(const PointCloud& cloud, const Vec3& center, double radius) {
    if (radius < 0.0) throw std::runtime_error("occlude_ball: negative radius");
    std::vector<int> out;
    const double r2 = radius * radius;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (geometry::dist_sq(cloud[i], center) >= r2) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> occlude_plane(const PointCloud& cloud, const Vec3& normal, double offset) {
    std::vector<int> out;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        if (cloud[i].dot(normal) <= offset) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> occlude_mask(const PointCloud& cloud, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction >= 1.0) throw std::runtime_error("occlude_mask: fraction out of range");
    const std::size_t n = cloud.size();
    const std::size_t remove = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    Rng rng(seed);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < remove; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<int> out(idx.begin() + static_cast<std::ptrdiff_t>(remove), idx.end());
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

// Bisect a monotone size parameter until the removal count over `candidates`
// reaches `target_removed` (within the ratio band relative to n_total).
// count_removed(param) must be non-decreasing in param.
template <class CountFn>
double bisect_parameter(double lo, double hi, std::size_t target_removed, const CountFn& count_removed) {
    double best_param = lo;
    std::size_t best_err = count_removed(lo) > target_removed ? count_removed(lo) - target_removed
                                                              : target_removed - count_removed(lo);
    for (int it = 0; it < 64; ++it) {
        const double mid = 0.5 * (lo + hi);
        const std::size_t removed = count_removed(mid);
        const std::size_t err = removed > target_removed ? removed - target_removed : target_removed - removed;
        if (err < best_err) {
            best_err = err;
            best_param = mid;
        }
        if (removed < target_removed)
            lo = mid;
        else if (removed > target_removed)
            hi = mid;
        else
            return mid;
    }
    return best_param;
}

std::vector<int> subset(const std::vector<int>& base, const std::vector<int>& relative) {
    std::vector<int> out;
    out.reserve(relative.size());
    for (int r : relative) out.push_back(base[static_cast<std::size_t>(r)]);
    return out;
}

PointCloud gather(const PointCloud& cloud, const std::vector<int>& idx) {
    PointCloud out;
    out.points.reserve(idx.size());
    for (int i : idx) out.points.push_back(cloud[static_cast<std::size_t>(i)]);
    return out;
}

// removes points from `survivors` (indices into cloud) until the cumulative
// removal over the original cloud reaches `target_cum_removed`
std::vector<int> apply_ball_stage(const PointCloud& cloud, std::vector<int> survivors, const Vec3& center,
                                  std::size_t target_cum_removed, std::size_t n_total) {
    const std::size_t already = n_total - survivors.size();
    if (target_cum_removed <= already) return survivors;
    const std::size_t want = target_cum_removed - already;
    PointCloud sub = gather(cloud, survivors);
    double hi = 0.0;
    for (const auto& p : sub.points) hi = std::max(hi, std::sqrt(geometry::dist_sq(p, center)));
    hi = hi * 1.0000001 + 1e-9;
    const auto count = [&](double r) { return sub.size() - occlude_ball(sub, center, r).size(); };
    const double r = bisect_parameter(0.0, hi, want, count);
    return subset(survivors, occlude_ball(sub, center, r));
}

std::vector<int> apply_plane_stage(const PointCloud& cloud, std::vector<int> survivors, const Vec3& normal,
                                   std::size_t target_cum_removed, std::size_t n_total) {
    const std::size_t already = n_total - survivors.size();
    if (target_cum_removed <= already) return survivors;
    const std::size_t want = target_cum_removed - already;
    PointCloud sub = gather(cloud, survivors);
    double lo = sub[0].dot(normal), hi = lo;
    for (const auto& p : sub.points) {
        const double d = p.dot(normal);
        lo = std::min(lo, d);
        hi = std::max(hi, d);
    }
    // offset below every point removes all; above every point removes none.
    // bisect on -offset so removal grows with the parameter.
    const auto count = [&](double neg_offset) { return sub.size() - occlude_plane(sub, normal, -neg_offset).size(); };
    const double neg_offset = bisect_parameter(-(hi + 1.0), -(lo - 1.0), want, count);
    return subset(survivors, occlude_plane(sub, normal, -neg_offset));
}

std::vector<int> apply_mask_stage(const PointCloud& cloud, std::vector<int> survivors,
                                  std::size_t target_cum_removed, std::size_t n_total, Rng& rng) {
    const std::size_t already = n_total - survivors.size();
    if (target_cum_removed <= already) return survivors;
    const std::size_t want = target_cum_removed - already;
    if (want >= survivors.size()) throw std::runtime_error("unreachable ratio");
    // seeded partial shuffle, drop the first `want`
    std::vector<int> idx(survivors.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < want; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<int> keep(idx.begin() + static_cast<std::ptrdiff_t>(want), idx.end());
    std::sort(keep.begin(), keep.end());
    return subset(survivors, keep);
}

}  // namespace

PartialObservation simulate(const PointCloud& cloud, const OcclusionSpec& spec, std::size_t m_out) {
    spec.validate();
    if (cloud.empty()) throw std::runtime_error("simulate: empty cloud");
    const std::size_t n = cloud.size();
    Rng rng(spec.seed);

    std::vector<int> survivors(n);
    std::iota(survivors.begin(), survivors.end(), 0);

    const auto target_count = [n](double ratio) {
        return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    };

    if (spec.target_ratio > 0.0) {
        Rng mask_rng = rng.stream("mask");
        switch (spec.kind) {
            case Kind::Ball:
                survivors = apply_ball_stage(cloud, std::move(survivors), spec.ball_center,
                                             target_count(spec.target_ratio), n);
                break;
            case Kind::Plane:
                survivors = apply_plane_stage(cloud, std::move(survivors), spec.plane_normal,
                                              target_count(spec.target_ratio), n);
                break;
            case Kind::Mask:
                survivors = apply_mask_stage(cloud, std::move(survivors), target_count(spec.target_ratio), n, mask_rng);
                break;
            case Kind::Composite:
                // fixed order ball -> plane -> mask, each consuming a third of
                // the target; the mask stage lands the total exactly
                survivors = apply_ball_stage(cloud, std::move(survivors), spec.ball_center,
                                             target_count(spec.target_ratio / 3.0), n);
                survivors = apply_plane_stage(cloud, std::move(survivors), spec.plane_normal,
                                              target_count(2.0 * spec.target_ratio / 3.0), n);
                survivors = apply_mask_stage(cloud, std::move(survivors), target_count(spec.target_ratio), n, mask_rng);
                break;
        }
    }

    if (survivors.empty()) throw std::runtime_error("simulate: no surviving points");
    const double achieved = static_cast<double>(n - survivors.size()) / static_cast<double>(n);
    if (std::abs(achieved - spec.target_ratio) > 0.02) throw std::runtime_error("unreachable ratio");

    PartialObservation out;
    out.achieved_ratio = achieved;
    Rng resample_rng = rng.stream("resample");
    const auto pick = geometry::resample_indices(survivors.size(), m_out, resample_rng);
    out.correspondence.reserve(m_out);
    out.partial.points.reserve(m_out);
    for (int r : pick) {
        const int full_idx = survivors[static_cast<std::size_t>(r)];
        out.correspondence.push_back(full_idx);
        out.partial.points.push_back(cloud[static_cast<std::size_t>(full_idx)]);
    }
    if (spec.noise_sigma > 0.0) {
        Rng noise_rng = rng.stream("noise");
        for (auto& p : out.partial.points) {
            p.x += spec.noise_sigma * noise_rng.gaussian();
            p.y += spec.noise_sigma * noise_rng.gaussian();
            p.z += spec.noise_sigma * noise_rng.gaussian();
        }
    }
    return out;
}

OcclusionSpec randomize_geometry(const OcclusionSpec& base, const PointCloud& cloud, Rng& rng) {
    OcclusionSpec spec = base;
    // ball bites into the shape: center at a random surface point
    spec.ball_center = cloud[static_cast<std::size_t>(rng.below(cloud.size()))];
    Vec3 n{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    double len = n.norm();
    while (len < 1e-9) {
        n = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
        len = n.norm();
    }
    spec.plane_normal = n / len;
    return spec;
}

}  // namespace redforge::occlusion
