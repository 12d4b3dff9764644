#include "redforge/deformation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "redforge/losses.hpp"
#include "redforge/nets.hpp"
#include "redforge/optim.hpp"
#include "redforge/parallel.hpp"

namespace redforge::deformation {

using namespace autodiff;

PartDeformParams PartDeformParams::identity(int n_parts) {
    PartDeformParams p;
    p.center_delta.assign(static_cast<std::size_t>(n_parts), Vec3{0, 0, 0});
    p.scale.assign(static_cast<std::size_t>(n_parts), Vec3{1, 1, 1});
    return p;
}

void PartDeformParams::validate() const {
    if (center_delta.size() != scale.size()) throw std::runtime_error("deform params: size mismatch");
    for (const auto& s : scale) {
        if (!(s.x > 0 && s.y > 0 && s.z > 0) || !std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.z))
            throw std::runtime_error("deform params: scales must be positive and finite");
    }
    for (const auto& c : center_delta)
        if (!std::isfinite(c.x) || !std::isfinite(c.y) || !std::isfinite(c.z))
            throw std::runtime_error("deform params: non-finite center displacement");
}

PointCloud apply_deformation(const PartSegmentedShape& shape, const PartDeformParams& params) {
    if (params.size() != static_cast<std::size_t>(shape.part_count()))
        throw std::runtime_error("apply_deformation: params cover " + std::to_string(params.size()) + " of " +
                                 std::to_string(shape.part_count()) + " parts");
    params.validate();
    PointCloud out;
    out.points.reserve(shape.cloud.size());
    for (std::size_t i = 0; i < shape.cloud.size(); ++i) {
        const auto label = shape.part_labels[i];
        const auto& box = shape.parts[label];
        const Vec3& p = shape.cloud[i];
        const Vec3& cd = params.center_delta[label];
        const Vec3& s = params.scale[label];
        const Vec3 rel = p - box.c0;
        out.points.push_back({p.x + cd.x + (s.x - 1.0) * rel.x, p.y + cd.y + (s.y - 1.0) * rel.y,
                              p.z + cd.z + (s.z - 1.0) * rel.z});
    }
    return out;
}

TensorPtr apply_deformation_tensor(const PartSegmentedShape& shape, const TensorPtr& center_delta,
                                   const TensorPtr& scale) {
    const int n_parts = shape.part_count();
    if (center_delta->shape != Shape{n_parts, 3} || scale->shape != Shape{n_parts, 3})
        throw std::runtime_error("apply_deformation: params must be (N_p, 3)");
    std::vector<int> labels(shape.cloud.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = shape.part_labels[i];

    std::vector<double> c0(static_cast<std::size_t>(n_parts) * 3);
    for (int p = 0; p < n_parts; ++p) {
        c0[3 * static_cast<std::size_t>(p) + 0] = shape.parts[static_cast<std::size_t>(p)].c0.x;
        c0[3 * static_cast<std::size_t>(p) + 1] = shape.parts[static_cast<std::size_t>(p)].c0.y;
        c0[3 * static_cast<std::size_t>(p) + 2] = shape.parts[static_cast<std::size_t>(p)].c0.z;
    }
    auto c0_t = make_tensor({n_parts, 3}, std::move(c0));
    auto points = nets::tensor_from_cloud(shape.cloud);

    auto cd_rows = gather_rows(center_delta, labels);
    auto scale_minus_one = sub(scale, full({n_parts, 3}, 1.0));
    auto s_rows = gather_rows(scale_minus_one, labels);
    auto rel = sub(points, gather_rows(c0_t, labels));
    return add(add(points, cd_rows), mul(s_rows, rel));
}

namespace {

// squared change of the closest-pair gap for each connectivity edge
TensorPtr connectivity_penalty(const PartSegmentedShape& shape, const TensorPtr& deformed) {
    std::vector<int> pair_a, pair_b;
    std::vector<double> gap0;
    for (const auto& [pa, pb] : shape.connectivity) {
        int best_i = -1, best_j = -1;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < shape.cloud.size(); ++i) {
            if (shape.part_labels[i] != pa) continue;
            for (std::size_t j = 0; j < shape.cloud.size(); ++j) {
                if (shape.part_labels[j] != pb) continue;
                const double d2 = geometry::dist_sq(shape.cloud[i], shape.cloud[j]);
                if (d2 < best) {
                    best = d2;
                    best_i = static_cast<int>(i);
                    best_j = static_cast<int>(j);
                }
            }
        }
        pair_a.push_back(best_i);
        pair_b.push_back(best_j);
        gap0.push_back(std::sqrt(best));
    }
    if (pair_a.empty()) return scalar_tensor(0.0);
    TensorPtr acc = scalar_tensor(0.0);
    for (std::size_t e = 0; e < pair_a.size(); ++e) {
        auto pe = gather_rows(deformed, {pair_a[e]});
        auto qe = gather_rows(deformed, {pair_b[e]});
        auto gap = sqrt_t(sum(square(sub(pe, qe))));
        auto delta = sub(gap, scalar_tensor(gap0[e]));
        acc = add(acc, square(delta));
    }
    return scalar_mul(acc, 1.0 / static_cast<double>(pair_a.size()));
}

}  // namespace

FitResult fit_deformation_direct(const PartSegmentedShape& source, const PointCloud& target,
                                 const FitOptions& opt) {
    if (opt.steps < 1) throw std::runtime_error("fit_deformation_direct: steps must be >= 1");
    const int n_parts = source.part_count();
    auto cd = zeros({n_parts, 3}, true);
    auto raw = zeros({n_parts, 3}, true);
    optim::AdamW optimizer({cd, raw}, {.lr = opt.lr});

    FitResult result;
    result.params = PartDeformParams::identity(n_parts);
    result.initial_chamfer = geometry::chamfer_distance(source.cloud, target);
    result.final_chamfer = result.initial_chamfer;

    for (int step = 0; step < opt.steps; ++step) {
        optimizer.zero_grad();
        auto scale = nets::scales_from_raw(raw);
        auto deformed = apply_deformation_tensor(source, cd, scale);
        auto loss = losses::loss_chamfer(deformed, target);
        const double chamfer_now = loss->scalar();
        if (opt.symmetry_weight > 0.0)
            loss = add(loss, scalar_mul(losses::loss_symmetry(deformed), opt.symmetry_weight));
        if (opt.connectivity_weight > 0.0)
            loss = add(loss, scalar_mul(connectivity_penalty(source, deformed), opt.connectivity_weight));
        if (chamfer_now < result.final_chamfer) {
            result.final_chamfer = chamfer_now;
            for (int p = 0; p < n_parts; ++p) {
                result.params.center_delta[static_cast<std::size_t>(p)] = {
                    cd->values[3 * static_cast<std::size_t>(p)], cd->values[3 * static_cast<std::size_t>(p) + 1],
                    cd->values[3 * static_cast<std::size_t>(p) + 2]};
                result.params.scale[static_cast<std::size_t>(p)] = {
                    scale->values[3 * static_cast<std::size_t>(p)], scale->values[3 * static_cast<std::size_t>(p) + 1],
                    scale->values[3 * static_cast<std::size_t>(p) + 2]};
            }
        }
        backward(loss);
        optimizer.step();
        ++result.steps_run;
    }
    return result;
}

OracleResult oracle_retrieval(const SourceDatabase& db, const PointCloud& target, const Deformer& deformer,
                              int n_threads) {
    if (db.size() == 0) throw std::runtime_error("oracle_retrieval: empty database");
    OracleResult out;
    out.chamfers.resize(db.size());
    parallel_for(db.size(), n_threads,
                 [&](std::size_t i) { out.chamfers[i] = deformer(db.shapes[i], target); });
    out.best_index = 0;
    for (std::size_t i = 1; i < db.size(); ++i)
        if (out.chamfers[i] < out.chamfers[static_cast<std::size_t>(out.best_index)])
            out.best_index = static_cast<int>(i);
    out.best_id = db.ids[static_cast<std::size_t>(out.best_index)];
    out.min_chamfer = out.chamfers[static_cast<std::size_t>(out.best_index)];
    return out;
}

}  // namespace redforge::deformation
