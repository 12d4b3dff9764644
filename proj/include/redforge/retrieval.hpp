#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "redforge/autodiff.hpp"
#include "redforge/nets.hpp"
#include "redforge/shapes.hpp"

namespace redforge::retrieval {

using autodiff::TensorPtr;
using geometry::PointCloud;
using shapes::SourceDatabase;

enum class ScoreMode { Mean, Max };

std::string mode_name(ScoreMode m);
ScoreMode mode_from_name(const std::string& name);

// unit-norm feature vector standing for one hypothesized full shape
struct Indicator {
    std::vector<double> v;

    void validate() const;  // |norm - 1| < 1e-6
    TensorPtr tensor() const;
};

// n uniform samples on the unit sphere in R^dim (normalized Gaussians)
std::vector<Indicator> sample_sphere(int n, int dim, std::uint64_t seed);

// normalized full-shape feature; throws on a zero vector
Indicator indicator_from_full(const std::vector<double>& global_feature);

// Sorts residual norms descending, drops ceil(trim_fraction * M) of the
// largest, and returns the mean (or max) of the survivors.
double trimmed_score(const TensorPtr& residual_field, double trim_fraction, ScoreMode mode);
double trimmed_score(const std::vector<double>& norms, double trim_fraction, ScoreMode mode);

struct RetrievalConfig {
    int n_samples = 1000;
    int top_k = 10;
    double trim = 0.1;
    ScoreMode mode = ScoreMode::Mean;
    std::uint64_t seed = 0;
    int n_threads = 1;
};

struct RetrievalOutcome {
    std::vector<std::vector<double>> scores;  // [sample][source]
    std::vector<int> votes;                   // per source, sums to n_samples
    std::vector<double> best_score;           // per source, min over samples
    std::vector<int> ranked;                  // source indices by votes desc, tie id asc
    std::vector<int> top_k;                   // first top_k of ranked
};

// Source-side features cached once per database.
struct SourceFeatures {
    std::vector<TensorPtr> global;      // G^d per source
    std::vector<TensorPtr> part_feats;  // P^f per source (N_p x L)
};

SourceFeatures encode_sources(const SourceDatabase& db, const nets::Encoder& source_encoder, int n_threads = 1);

// One-to-many retrieval: every sphere sample yields one per-source residual
// scoring and one argmin vote; candidates are ranked by votes.
RetrievalOutcome retrieve_otm(const SourceDatabase& db, const PointCloud& target_partial,
                              const nets::Encoder& partial_encoder, const nets::Encoder& source_encoder,
                              const nets::ResidualHead& residual_head, const RetrievalConfig& config,
                              const SourceFeatures* cached = nullptr);

}  // namespace redforge::retrieval
