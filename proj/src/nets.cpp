#include "redforge/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace redforge::nets {

using namespace autodiff;

namespace {
TensorPtr xavier(int in, int out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(static_cast<std::size_t>(in) * out);
    for (auto& v : w) v = rng.uniform(-a, a);
    return make_tensor({in, out}, std::move(w), true);
}
}  // namespace

Linear Linear::init(int in, int out, Rng& rng) {
    Linear l;
    l.weight = xavier(in, out, rng);
    l.bias = zeros({out}, true);
    return l;
}

TensorPtr Linear::forward(const TensorPtr& x) const { return add_rowwise(matmul(x, weight), bias); }

void Linear::collect(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".weight", weight);
    pm.add(prefix + ".bias", bias);
}

BatchNorm BatchNorm::init(int dim) {
    BatchNorm bn;
    bn.gamma = full({dim}, 1.0, true);
    bn.beta = zeros({dim}, true);
    bn.running_mean = zeros({dim});
    bn.running_var = full({dim}, 1.0);
    return bn;
}

TensorPtr BatchNorm::forward(const TensorPtr& x, bool train) const {
    return batch_norm(x, gamma, beta, running_mean, running_var, train);
}

void BatchNorm::collect(ParamMap& pm, const std::string& prefix) const {
    pm.add(prefix + ".gamma", gamma);
    pm.add(prefix + ".beta", beta);
    pm.add(prefix + ".running_mean", running_mean, /*trainable=*/false);
    pm.add(prefix + ".running_var", running_var, /*trainable=*/false);
}

// ---------------------------------------------------------------------------

Encoder Encoder::init(int feat_dim, Rng& rng) {
    Encoder e;
    e.feat_dim = feat_dim;
    e.l1 = Linear::init(3, 64, rng);
    e.l2 = Linear::init(64, 128, rng);
    e.l3 = Linear::init(128, feat_dim, rng);
    e.bn1 = BatchNorm::init(64);
    e.bn2 = BatchNorm::init(128);
    e.bn3 = BatchNorm::init(feat_dim);
    return e;
}

FeaturePair Encoder::forward(const TensorPtr& points, bool train) const {
    if (points->shape.size() != 2 || points->cols() != 3)
        throw std::runtime_error("encoder input must be (M, 3), got " + shape_str(points->shape));
    if (points->rows() == 0) throw std::runtime_error("encoder: empty cloud");
    auto h = leaky_relu(bn1.forward(l1.forward(points), train), kLeakySlope);
    h = leaky_relu(bn2.forward(l2.forward(h), train), kLeakySlope);
    h = leaky_relu(bn3.forward(l3.forward(h), train), kLeakySlope);
    return {h, max_pool(h, 0)};
}

FeaturePair Encoder::forward(const PointCloud& cloud, bool train) const {
    return forward(tensor_from_cloud(cloud), train);
}

void Encoder::collect(ParamMap& pm, const std::string& prefix) const {
    l1.collect(pm, prefix + ".l1");
    l2.collect(pm, prefix + ".l2");
    l3.collect(pm, prefix + ".l3");
    bn1.collect(pm, prefix + ".bn1");
    bn2.collect(pm, prefix + ".bn2");
    bn3.collect(pm, prefix + ".bn3");
}

// ---------------------------------------------------------------------------

ResidualHead ResidualHead::init(int feat_dim, const std::vector<int>& hidden, Rng& rng) {
    if (hidden.size() != 4) throw std::runtime_error("residual head expects 4 hidden widths");
    ResidualHead h;
    h.feat_dim = feat_dim;
    int in = 4 * feat_dim;
    for (int width : hidden) {
        h.layers.push_back(Linear::init(in, width, rng));
        h.bns.push_back(BatchNorm::init(width));
        in = width;
    }
    h.layers.push_back(Linear::init(in, 3, rng));
    return h;
}

TensorPtr ResidualHead::forward(const TensorPtr& pointwise, const TensorPtr& target_global,
                                const TensorPtr& source_global, const TensorPtr& indicator, bool train) const {
    double n2 = 0.0;
    for (double v : indicator->values) n2 += v * v;
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) throw std::runtime_error("indicator off sphere");
    const int m = pointwise->rows();
    auto input = concat({pointwise, tile_rows(target_global, m), tile_rows(source_global, m),
                         tile_rows(indicator, m)},
                        1);
    auto h = input;
    for (std::size_t i = 0; i < bns.size(); ++i)
        h = leaky_relu(bns[i].forward(layers[i].forward(h), train), kLeakySlope);
    return layers.back().forward(h);
}

void ResidualHead::collect(ParamMap& pm, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(pm, prefix + ".l" + std::to_string(i + 1));
    for (std::size_t i = 0; i < bns.size(); ++i) bns[i].collect(pm, prefix + ".bn" + std::to_string(i + 1));
}

// ---------------------------------------------------------------------------

MultiHeadAttention MultiHeadAttention::init(int dim, int heads, Rng& rng) {
    if (dim % heads != 0) throw std::runtime_error("attention dim must be divisible by head count");
    MultiHeadAttention a;
    a.heads = heads;
    a.wq = Linear::init(dim, dim, rng);
    a.wk = Linear::init(dim, dim, rng);
    a.wv = Linear::init(dim, dim, rng);
    a.wo = Linear::init(dim, dim, rng);
    return a;
}

TensorPtr MultiHeadAttention::forward(const TensorPtr& q_in, const TensorPtr& kv_in) const {
    const int dim = q_in->cols();
    const int dh = dim / heads;
    auto q = wq.forward(q_in);
    auto k = wk.forward(kv_in);
    auto v = wv.forward(kv_in);
    std::vector<TensorPtr> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * dh, dh);
        auto kh = slice_cols(k, h * dh, dh);
        auto vh = slice_cols(v, h * dh, dh);
        auto scores = scalar_mul(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        head_outs.push_back(matmul(softmax(scores, 1), vh));
    }
    return wo.forward(concat(head_outs, 1));
}

void MultiHeadAttention::collect(ParamMap& pm, const std::string& prefix) const {
    wq.collect(pm, prefix + ".wq");
    wk.collect(pm, prefix + ".wk");
    wv.collect(pm, prefix + ".wv");
    wo.collect(pm, prefix + ".wo");
}

// ---------------------------------------------------------------------------

Deformer Deformer::init(int feat_dim, int n_blocks, int heads, int reg_hidden1, int reg_hidden2, Rng& rng) {
    Deformer d;
    for (int b = 0; b < n_blocks; ++b) {
        Block blk;
        blk.self_attn = MultiHeadAttention::init(feat_dim, heads, rng);
        blk.cross_attn = MultiHeadAttention::init(feat_dim, heads, rng);
        blk.mlp_self_1 = Linear::init(feat_dim, feat_dim, rng);
        blk.mlp_self_2 = Linear::init(feat_dim, feat_dim, rng);
        blk.mlp_cross_1 = Linear::init(feat_dim, feat_dim, rng);
        blk.mlp_cross_2 = Linear::init(feat_dim, feat_dim, rng);
        d.blocks.push_back(std::move(blk));
    }
    d.reg1 = Linear::init(feat_dim, reg_hidden1, rng);
    d.reg2 = Linear::init(reg_hidden1, reg_hidden2, rng);
    d.reg3 = Linear::init(reg_hidden2, 6, rng);
    return d;
}

DeformOut Deformer::forward(const TensorPtr& part_feats, const TensorPtr& target_global,
                            const TensorPtr& source_global) const {
    auto x = part_feats;
    auto globals = stack_rows({target_global, source_global});  // (2, L)
    for (const auto& blk : blocks) {
        x = add(x, blk.self_attn.forward(x, x));
        x = add(x, blk.mlp_self_2.forward(leaky_relu(blk.mlp_self_1.forward(x), kLeakySlope)));
        x = add(x, blk.cross_attn.forward(x, globals));
        x = add(x, blk.mlp_cross_2.forward(leaky_relu(blk.mlp_cross_1.forward(x), kLeakySlope)));
    }
    auto h = leaky_relu(reg1.forward(x), kLeakySlope);
    h = leaky_relu(reg2.forward(h), kLeakySlope);
    auto out = reg3.forward(h);  // (N_p, 6)
    return {slice_cols(out, 0, 3), slice_cols(out, 3, 3)};
}

void Deformer::collect(ParamMap& pm, const std::string& prefix) const {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string bp = prefix + ".block" + std::to_string(b + 1);
        blocks[b].self_attn.collect(pm, bp + ".self");
        blocks[b].cross_attn.collect(pm, bp + ".cross");
        blocks[b].mlp_self_1.collect(pm, bp + ".mlp_self_1");
        blocks[b].mlp_self_2.collect(pm, bp + ".mlp_self_2");
        blocks[b].mlp_cross_1.collect(pm, bp + ".mlp_cross_1");
        blocks[b].mlp_cross_2.collect(pm, bp + ".mlp_cross_2");
    }
    reg1.collect(pm, prefix + ".reg1");
    reg2.collect(pm, prefix + ".reg2");
    reg3.collect(pm, prefix + ".reg3");
}

TensorPtr scales_from_raw(const TensorPtr& raw) { return exp_t(clamp(raw, -2.0, 2.0)); }

// ---------------------------------------------------------------------------

ReconHead ReconHead::init(int feat_dim, int out_points, Rng& rng) {
    ReconHead r;
    r.out_points = out_points;
    r.l1 = Linear::init(feat_dim, 256, rng);
    r.l2 = Linear::init(256, 512, rng);
    r.l3 = Linear::init(512, 3 * out_points, rng);
    return r;
}

TensorPtr ReconHead::forward(const TensorPtr& global) const {
    auto g = reshape(global, {1, static_cast<int>(global->numel())});
    auto h = leaky_relu(l1.forward(g), kLeakySlope);
    h = leaky_relu(l2.forward(h), kLeakySlope);
    return reshape(l3.forward(h), {out_points, 3});
}

void ReconHead::collect(ParamMap& pm, const std::string& prefix) const {
    l1.collect(pm, prefix + ".l1");
    l2.collect(pm, prefix + ".l2");
    l3.collect(pm, prefix + ".l3");
}

// ---------------------------------------------------------------------------

TensorPtr tensor_from_cloud(const PointCloud& cloud, bool requires_grad) {
    std::vector<double> vals;
    vals.reserve(cloud.size() * 3);
    for (const auto& p : cloud.points) {
        vals.push_back(p.x);
        vals.push_back(p.y);
        vals.push_back(p.z);
    }
    return make_tensor({static_cast<int>(cloud.size()), 3}, std::move(vals), requires_grad);
}

PointCloud cloud_from_tensor(const TensorPtr& t) {
    if (t->shape.size() != 2 || t->cols() != 3)
        throw std::runtime_error("cloud_from_tensor: expected (M, 3), got " + shape_str(t->shape));
    PointCloud out;
    out.points.reserve(static_cast<std::size_t>(t->rows()));
    for (int i = 0; i < t->rows(); ++i)
        out.points.push_back({t->values[3 * static_cast<std::size_t>(i)], t->values[3 * static_cast<std::size_t>(i) + 1],
                              t->values[3 * static_cast<std::size_t>(i) + 2]});
    return out;
}

}  // namespace redforge::nets
