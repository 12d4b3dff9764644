#include "redforge/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "redforge/parallel.hpp"

namespace redforge::retrieval {

using namespace autodiff;

std::string mode_name(ScoreMode m) { return m == ScoreMode::Mean ? "mean" : "max"; }

ScoreMode mode_from_name(const std::string& name) {
    if (name == "mean") return ScoreMode::Mean;
    if (name == "max") return ScoreMode::Max;
    throw std::runtime_error("unknown score mode: " + name);
}

void Indicator::validate() const {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (std::abs(std::sqrt(n2) - 1.0) >= 1e-6) throw std::runtime_error("indicator off sphere");
}

TensorPtr Indicator::tensor() const { return make_tensor({static_cast<int>(v.size())}, v); }

std::vector<Indicator> sample_sphere(int n, int dim, std::uint64_t seed) {
    if (n < 1 || dim < 2) throw std::runtime_error("sample_sphere: need n >= 1 and dim >= 2");
    Rng rng(seed);
    std::vector<Indicator> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Indicator ind;
        ind.v.resize(static_cast<std::size_t>(dim));
        double norm = 0.0;
        do {
            norm = 0.0;
            for (auto& x : ind.v) {
                x = rng.gaussian();
                norm += x * x;
            }
            norm = std::sqrt(norm);
        } while (norm < 1e-12);
        for (auto& x : ind.v) x /= norm;
        out.push_back(std::move(ind));
    }
    return out;
}

Indicator indicator_from_full(const std::vector<double>& global_feature) {
    double norm = 0.0;
    for (double x : global_feature) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw std::runtime_error("indicator_from_full: zero feature vector");
    Indicator ind;
    ind.v.resize(global_feature.size());
    for (std::size_t i = 0; i < ind.v.size(); ++i) ind.v[i] = global_feature[i] / norm;
    return ind;
}

double trimmed_score(const std::vector<double>& norms, double trim_fraction, ScoreMode mode) {
    if (trim_fraction < 0.0 || trim_fraction >= 1.0) throw std::runtime_error("trimmed_score: trim out of range");
    const std::size_t m = norms.size();
    if (m == 0) throw std::runtime_error("trimmed_score: empty residual field");
    // eps guard so exact decimal products (0.1 * 10) do not round up
    const auto drop = static_cast<std::size_t>(std::ceil(trim_fraction * static_cast<double>(m) - 1e-9));
    if (drop >= m) throw std::runtime_error("trimmed_score: all points trimmed");
    std::vector<double> sorted = norms;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    if (mode == ScoreMode::Max) return sorted[drop];
    double acc = 0.0;
    for (std::size_t i = drop; i < m; ++i) acc += sorted[i];
    return acc / static_cast<double>(m - drop);
}

double trimmed_score(const TensorPtr& residual_field, double trim_fraction, ScoreMode mode) {
    if (residual_field->shape.size() != 2 || residual_field->cols() != 3)
        throw std::runtime_error("trimmed_score: residual field must be (M, 3)");
    const int m = residual_field->rows();
    std::vector<double> norms(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double* p = &residual_field->values[3 * static_cast<std::size_t>(i)];
        norms[static_cast<std::size_t>(i)] = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    }
    return trimmed_score(norms, trim_fraction, mode);
}

SourceFeatures encode_sources(const SourceDatabase& db, const nets::Encoder& source_encoder, int n_threads) {
    SourceFeatures feats;
    feats.global.resize(db.size());
    feats.part_feats.resize(db.size());
    parallel_for(db.size(), n_threads, [&](std::size_t i) {
        const auto& shape = db.shapes[i];
        auto fp = source_encoder.forward(shape.cloud, /*train=*/false);
        feats.global[i] = fp.global;
        feats.part_feats[i] = shapes::part_mean_pool(fp.pointwise, shape.part_labels, shape.part_count());
    });
    return feats;
}

RetrievalOutcome retrieve_otm(const SourceDatabase& db, const PointCloud& target_partial,
                              const nets::Encoder& partial_encoder, const nets::Encoder& source_encoder,
                              const nets::ResidualHead& residual_head, const RetrievalConfig& config,
                              const SourceFeatures* cached) {
    if (db.size() == 0) throw std::runtime_error("retrieve_otm: empty database");
    const auto target = partial_encoder.forward(target_partial, /*train=*/false);

    SourceFeatures local;
    if (!cached) {
        local = encode_sources(db, source_encoder, config.n_threads);
        cached = &local;
    }

    const auto indicators = sample_sphere(config.n_samples, partial_encoder.feat_dim, config.seed);

    RetrievalOutcome out;
    out.scores.assign(static_cast<std::size_t>(config.n_samples), std::vector<double>(db.size(), 0.0));
    out.votes.assign(db.size(), 0);
    out.best_score.assign(db.size(), std::numeric_limits<double>::infinity());

    // score columns are independent per source; votes reduce serially below
    parallel_for(db.size(), config.n_threads, [&](std::size_t s) {
        for (int k = 0; k < config.n_samples; ++k) {
            auto residual = residual_head.forward(target.pointwise, target.global, cached->global[s],
                                                  indicators[static_cast<std::size_t>(k)].tensor(), /*train=*/false);
            out.scores[static_cast<std::size_t>(k)][s] = trimmed_score(residual, config.trim, config.mode);
        }
    });

    for (int k = 0; k < config.n_samples; ++k) {
        const auto& row = out.scores[static_cast<std::size_t>(k)];
        std::size_t best = 0;
        for (std::size_t s = 1; s < row.size(); ++s)
            if (row[s] < row[best]) best = s;  // tie keeps the lowest id
        ++out.votes[best];
        for (std::size_t s = 0; s < row.size(); ++s) out.best_score[s] = std::min(out.best_score[s], row[s]);
    }

    out.ranked.resize(db.size());
    std::iota(out.ranked.begin(), out.ranked.end(), 0);
    std::stable_sort(out.ranked.begin(), out.ranked.end(), [&](int a, int b) {
        if (out.votes[static_cast<std::size_t>(a)] != out.votes[static_cast<std::size_t>(b)])
            return out.votes[static_cast<std::size_t>(a)] > out.votes[static_cast<std::size_t>(b)];
        return a < b;
    });
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(config.top_k), db.size());
    out.top_k.assign(out.ranked.begin(), out.ranked.begin() + static_cast<std::ptrdiff_t>(k));
    return out;
}

}  // namespace redforge::retrieval
