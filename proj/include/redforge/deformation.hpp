#pragma once

#include <functional>
#include <string>
#include <vector>

#include "redforge/autodiff.hpp"
#include "redforge/shapes.hpp"

namespace redforge::deformation {

using autodiff::TensorPtr;
using geometry::PointCloud;
using geometry::Vec3;
using shapes::PartSegmentedShape;
using shapes::SourceDatabase;

// Per-part deformation: center displacement plus positive axis scales applied
// about the part's initial box center.
struct PartDeformParams {
    std::vector<Vec3> center_delta;
    std::vector<Vec3> scale;  // (s_w, s_h, s_l), strictly positive

    std::size_t size() const { return center_delta.size(); }
    static PartDeformParams identity(int n_parts);
    void validate() const;
};

// p' = p + C_d[label] + (s[label] - 1) * (p - C0[label]); with identity
// params this reduces to p + 0 bit for bit.
PointCloud apply_deformation(const PartSegmentedShape& shape, const PartDeformParams& params);

// Differentiable version: builds the same map from parameter tensors
// (N_p x 3 each). `scale` holds the positive scales, not the raw values.
TensorPtr apply_deformation_tensor(const PartSegmentedShape& shape, const TensorPtr& center_delta,
                                   const TensorPtr& scale);

struct FitResult {
    PartDeformParams params;
    double initial_chamfer = 0.0;
    double final_chamfer = 0.0;  // best seen; never exceeds initial
    int steps_run = 0;
};

struct FitOptions {
    int steps = 500;
    double lr = 0.05;
    double symmetry_weight = 0.1;
    double connectivity_weight = 0.0;  // soft penalty on gap growth across connected parts
};

// Direct AdamW descent on (C_d, raw scales) from identity, minimizing
// chamfer + symmetry (+ optional connectivity penalty). Used as the
// deformation oracle and baseline.
FitResult fit_deformation_direct(const PartSegmentedShape& source, const PointCloud& target,
                                 const FitOptions& opt = {});

// Deforms a source toward a target and reports the resulting chamfer.
using Deformer = std::function<double(const PartSegmentedShape& source, const PointCloud& target)>;

struct OracleResult {
    std::string best_id;
    int best_index = -1;
    double min_chamfer = 0.0;
    std::vector<double> chamfers;  // per db entry, id order
};

// Deforms every database shape toward the target and returns the argmin
// (ties break to the first id in order). n_threads > 1 parallelizes over
// sources with a deterministic reduction.
OracleResult oracle_retrieval(const SourceDatabase& db, const PointCloud& target, const Deformer& deformer,
                              int n_threads = 1);

}  // namespace redforge::deformation
