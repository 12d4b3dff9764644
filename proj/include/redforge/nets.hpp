#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "redforge/autodiff.hpp"
#include "redforge/geometry.hpp"
#include "redforge/optim.hpp"
#include "redforge/rng.hpp"

namespace redforge::nets {

using autodiff::TensorPtr;
using geometry::PointCloud;
using optim::ParamMap;

constexpr double kLeakySlope = 0.01;

struct Linear {
    TensorPtr weight;  // (in, out)
    TensorPtr bias;    // (out)

    static Linear init(int in, int out, Rng& rng);
    TensorPtr forward(const TensorPtr& x) const;  // x: (M, in)
    void collect(ParamMap& pm, const std::string& prefix) const;
};

struct BatchNorm {
    TensorPtr gamma, beta;
    TensorPtr running_mean, running_var;  // value buffers, not differentiated

    static BatchNorm init(int dim);
    TensorPtr forward(const TensorPtr& x, bool train) const;
    void collect(ParamMap& pm, const std::string& prefix) const;
};

// pointwise feature matrix plus max-pooled global vector
struct FeaturePair {
    TensorPtr pointwise;  // (M, L)
    TensorPtr global;     // (L)
};

// Shared per-point MLP 3 -> 64 -> 128 -> L with BN + leaky ReLU per layer;
// the global feature is the column-wise max of the pointwise rows, which
// makes it exactly permutation invariant.
struct Encoder {
    Linear l1, l2, l3;
    BatchNorm bn1, bn2, bn3;
    int feat_dim = 0;

    static Encoder init(int feat_dim, Rng& rng);
    FeaturePair forward(const PointCloud& cloud, bool train) const;
    FeaturePair forward(const TensorPtr& points, bool train) const;  // (M, 3) input
    void collect(ParamMap& pm, const std::string& prefix) const;
};

// Residual field head: per target point, MLP over the concatenation of the
// point feature, target global, source global and the full-shape indicator.
// Hidden layers carry BN + leaky ReLU, the output layer is linear to 3.
struct ResidualHead {
    std::vector<Linear> layers;
    std::vector<BatchNorm> bns;  // one per hidden layer
    int feat_dim = 0;

    static ResidualHead init(int feat_dim, const std::vector<int>& hidden, Rng& rng);
    // indicator must have unit norm (throws "indicator off sphere")
    TensorPtr forward(const TensorPtr& pointwise, const TensorPtr& target_global, const TensorPtr& source_global,
                      const TensorPtr& indicator, bool train) const;
    void collect(ParamMap& pm, const std::string& prefix) const;
};

struct MultiHeadAttention {
    Linear wq, wk, wv, wo;
    int heads = 4;

    static MultiHeadAttention init(int dim, int heads, Rng& rng);
    TensorPtr forward(const TensorPtr& q_in, const TensorPtr& kv_in) const;
    void collect(ParamMap& pm, const std::string& prefix) const;
};

struct DeformOut {
    TensorPtr center_delta;  // (N_p, 3)
    TensorPtr scale_raw;     // (N_p, 3)
};

// Attention graph over part nodes: per block, self-attention across parts,
// then cross-attention against the stacked target/source globals, each
// sublayer with a residual add and a residual 2-layer MLP. A 3-layer MLP
// regresses 6 numbers per part.
struct Deformer {
    struct Block {
        MultiHeadAttention self_attn, cross_attn;
        Linear mlp_self_1, mlp_self_2, mlp_cross_1, mlp_cross_2;
    };
    std::vector<Block> blocks;
    Linear reg1, reg2, reg3;

    static Deformer init(int feat_dim, int blocks, int heads, int reg_hidden1, int reg_hidden2, Rng& rng);
    DeformOut forward(const TensorPtr& part_feats, const TensorPtr& target_global,
                      const TensorPtr& source_global) const;
    void collect(ParamMap& pm, const std::string& prefix) const;
};

// positive axis scales: exp of the raw prediction clamped to [-2, 2]
TensorPtr scales_from_raw(const TensorPtr& raw);

// Decodes a global feature into an M x 3 cloud (L -> 256 -> 512 -> 3M).
struct ReconHead {
    Linear l1, l2, l3;
    int out_points = 0;

    static ReconHead init(int feat_dim, int out_points, Rng& rng);
    TensorPtr forward(const TensorPtr& global) const;
    void collect(ParamMap& pm, const std::string& prefix) const;
};

TensorPtr tensor_from_cloud(const PointCloud& cloud, bool requires_grad = false);
PointCloud cloud_from_tensor(const TensorPtr& t);

}  // namespace redforge::nets
