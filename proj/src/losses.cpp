#include "redforge/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "redforge/nets.hpp"

namespace redforge::losses {

using namespace autodiff;

namespace {

TensorPtr mean_sq_rows(const TensorPtr& diff) {
    // mean over rows of the squared row norm = sum of squares / M
    return scalar_mul(sum(square(diff)), 1.0 / static_cast<double>(diff->rows()));
}

TensorPtr reflect_x(const TensorPtr& t) {
    std::vector<double> mask(t->values.size(), 1.0);
    for (std::size_t i = 0; i < mask.size(); i += 3) mask[i] = -1.0;
    return mul(t, make_tensor(t->shape, std::move(mask)));
}

}  // namespace

TensorPtr chamfer_tensor(const TensorPtr& a, const TensorPtr& b, const FrozenMatch* frozen) {
    if (a->rows() == 0 || b->rows() == 0) throw std::runtime_error("chamfer: empty cloud");
    FrozenMatch local;
    if (!frozen) {
        const auto pa = nets::cloud_from_tensor(a);
        const auto pb = nets::cloud_from_tensor(b);
        local.a_to_b = geometry::nearest_neighbors(pa, pb);
        local.b_to_a = geometry::nearest_neighbors(pb, pa);
        frozen = &local;
    }
    auto term_ab = mean_sq_rows(sub(a, gather_rows(b, frozen->a_to_b.index)));
    auto term_ba = mean_sq_rows(sub(gather_rows(a, frozen->b_to_a.index), b));
    return add(term_ab, term_ba);
}

TensorPtr loss_chamfer(const TensorPtr& deformed, const PointCloud& target, const FrozenMatch* frozen) {
    return chamfer_tensor(deformed, nets::tensor_from_cloud(target), frozen);
}

TensorPtr loss_symmetry(const TensorPtr& deformed, const FrozenMatch* frozen) {
    return chamfer_tensor(deformed, reflect_x(deformed), frozen);
}

TensorPtr loss_recon(const TensorPtr& reconstructed, const PointCloud& input, const FrozenMatch* frozen) {
    return chamfer_tensor(reconstructed, nets::tensor_from_cloud(input), frozen);
}

TensorPtr loss_re(const PointCloud& target, const TensorPtr& residual, const TensorPtr& deformed,
                  const NeighborAssignment* frozen) {
    if (target.size() != static_cast<std::size_t>(residual->rows()))
        throw std::runtime_error("loss_re: target and residual sizes differ");
    NeighborAssignment local;
    if (!frozen) {
        local = geometry::nearest_neighbors(target, nets::cloud_from_tensor(deformed));
        frozen = &local;
    }
    auto q = gather_rows(deformed, frozen->index);
    auto diff = sub(add(nets::tensor_from_cloud(target), residual), q);
    return mean_sq_rows(diff);
}

ConsistencyPair loss_consistency(const TensorPtr& deformed_partial, const TensorPtr& deformed_full,
                                 const TensorPtr& residual_partial, const TensorPtr& residual_full_gathered) {
    if (deformed_partial->shape != deformed_full->shape)
        shape_error("loss_consistency", deformed_partial->shape, deformed_full->shape);
    if (residual_partial->shape != residual_full_gathered->shape)
        shape_error("loss_consistency", residual_partial->shape, residual_full_gathered->shape);
    return {mean_sq_rows(sub(deformed_partial, deformed_full)),
            mean_sq_rows(sub(residual_partial, residual_full_gathered))};
}

LossTerms loss_total(TensorPtr cd, TensorPtr sym, TensorPtr recon, TensorPtr re, TensorPtr co1, TensorPtr co2,
                     const LossWeights& w) {
    const std::pair<const char*, TensorPtr> parts[] = {
        {"cd", cd}, {"sym", sym}, {"recon", recon}, {"re", re}, {"co1", co1}, {"co2", co2}};
    for (const auto& [name, t] : parts) {
        if (!std::isfinite(t->scalar()))
            throw std::runtime_error(std::string("loss_total: non-finite component ") + name);
    }
    LossTerms terms{cd, sym, recon, re, co1, co2, nullptr};
    auto basic = add(add(cd, sym), recon);
    terms.total = add(add(scalar_mul(basic, w.lambda0), scalar_mul(re, w.lambda1)),
                      scalar_mul(add(co1, co2), w.lambda2));
    return terms;
}

LossBreakdown breakdown(const LossTerms& terms) {
    LossBreakdown b;
    b.cd = terms.cd->scalar();
    b.sym = terms.sym->scalar();
    b.recon = terms.recon->scalar();
    b.re = terms.re->scalar();
    b.co1 = terms.co1->scalar();
    b.co2 = terms.co2->scalar();
    b.total = terms.total->scalar();
    return b;
}

}  // namespace redforge::losses
