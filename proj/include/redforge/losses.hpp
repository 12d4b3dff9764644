#pragma once

#include <optional>
#include <vector>

#include "redforge/autodiff.hpp"
#include "redforge/geometry.hpp"

namespace redforge::losses {

using autodiff::TensorPtr;
using geometry::NeighborAssignment;
using geometry::PointCloud;

struct LossWeights {
    double lambda0 = 3.0;  // basic losses: chamfer + symmetry + reconstruction
    double lambda1 = 0.3;  // residual loss
    double lambda2 = 1.0;  // cross-branch consistency
};

struct LossBreakdown {
    double cd = 0, sym = 0, recon = 0, re = 0, co1 = 0, co2 = 0, total = 0;
};

// Nearest-neighbor assignments used inside a Chamfer-style loss. They are
// recomputed from tensor values on each forward pass (and treated as
// constants in backward); grad checks pin them down once via these structs
// so finite differencing does not flip matches.
struct FrozenMatch {
    NeighborAssignment a_to_b, b_to_a;
};

// Symmetric squared Chamfer distance between two point-set tensors,
// differentiable w.r.t. both. Matches geometry::chamfer_distance at the
// forward values.
TensorPtr chamfer_tensor(const TensorPtr& a, const TensorPtr& b, const FrozenMatch* frozen = nullptr);

TensorPtr loss_chamfer(const TensorPtr& deformed, const PointCloud& target, const FrozenMatch* frozen = nullptr);

// chamfer(deformed, x-mirror(deformed))
TensorPtr loss_symmetry(const TensorPtr& deformed, const FrozenMatch* frozen = nullptr);

// set-to-set reconstruction distance (decoder output order is arbitrary)
TensorPtr loss_recon(const TensorPtr& reconstructed, const PointCloud& input, const FrozenMatch* frozen = nullptr);

// mean_i ||P_i + R_i - Q_{nn(i)}||^2 with Q_{nn(i)} the nearest point of the
// deformed source; the match comes from the forward values of Q.
TensorPtr loss_re(const PointCloud& target, const TensorPtr& residual, const TensorPtr& deformed,
                  const NeighborAssignment* frozen = nullptr);

struct ConsistencyPair {
    TensorPtr co1, co2;
};

// co1 ties the index-aligned deformed clouds of the two branches; co2 ties
// the partial residual field to the full-branch residuals gathered at the
// corresponding full-shape points.
ConsistencyPair loss_consistency(const TensorPtr& deformed_partial, const TensorPtr& deformed_full,
                                 const TensorPtr& residual_partial, const TensorPtr& residual_full_gathered);

struct LossTerms {
    TensorPtr cd, sym, recon, re, co1, co2;
    TensorPtr total;
};

// total = l0*(cd+sym+recon) + l1*re + l2*(co1+co2); throws on NaN naming the
// offending component.
LossTerms loss_total(TensorPtr cd, TensorPtr sym, TensorPtr recon, TensorPtr re, TensorPtr co1, TensorPtr co2,
                     const LossWeights& w);

LossBreakdown breakdown(const LossTerms& terms);

}  // namespace redforge::losses
