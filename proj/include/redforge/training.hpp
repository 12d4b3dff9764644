#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "redforge/deformation.hpp"
#include "redforge/losses.hpp"
#include "redforge/nets.hpp"
#include "redforge/occlusion.hpp"
#include "redforge/optim.hpp"
#include "redforge/retrieval.hpp"
#include "redforge/shapes.hpp"

namespace redforge::training {

using geometry::PointCloud;
using losses::LossBreakdown;
using losses::LossWeights;
using shapes::Category;
using shapes::PartSegmentedShape;
using shapes::SourceDatabase;

struct TrainConfig {
    // data
    int points = 1024;        // M
    int feat_dim = 256;       // L = L_d
    std::vector<Category> categories = {Category::Chair, Category::Table, Category::Cabinet};

    // optimization
    LossWeights weights;
    double lr = 1e-3;
    int epochs = 200;
    int grad_accum = 4;  // batch-of-1 with gradient accumulation window
    std::uint64_t seed = 0;
    int checkpoint_every = 10;

    // occlusion defaults for training pairs
    occlusion::OcclusionSpec occl = {.kind = occlusion::Kind::Ball, .target_ratio = 0.5, .noise_sigma = 0.01};

    // retrieval / inference
    int n_sphere_samples = 1000;
    int top_k = 10;
    double trim = 0.1;
    retrieval::ScoreMode score_mode = retrieval::ScoreMode::Mean;

    // architecture
    std::vector<int> residual_hidden = {512, 512, 256, 128};
    int attn_heads = 4;
    int agnn_blocks = 2;
    int reg_hidden1 = 128;
    int reg_hidden2 = 64;
    bool symmetry_loss = true;

    int n_threads = 1;

    // Laptop-scale preset: small feature dims and heads so a full train +
    // eval round fits in minutes on one core.
    static TrainConfig desk();

    void validate() const;
};

// key=value serialization with section-prefixed keys (data.points=...,
// net.feat_dim=..., loss.lambda0=..., occlusion.kind=..., retrieval.samples=...)
std::string config_to_text(const TrainConfig& config);
TrainConfig config_from_text(const std::string& text);
void save_config(const TrainConfig& config, const std::filesystem::path& path);
TrainConfig load_config(const std::filesystem::path& path);

// All network parameters. Partial/full/source encoders are separate; the
// residual head, deformer and reconstruction heads are shared across the
// partial and full branches.
struct Model {
    nets::Encoder enc_partial, enc_full, enc_source;
    nets::ResidualHead residual;
    nets::Deformer deformer;
    nets::ReconHead recon_partial, recon_source;
    int feat_dim = 0;
    int points = 0;

    static Model init(const TrainConfig& config, std::uint64_t seed);
    optim::ParamMap params() const;
};

void save_model(const Model& model, const std::filesystem::path& path);
void load_model(Model& model, const std::filesystem::path& path);

struct TrainingPair {
    PointCloud full;                            // T^f
    occlusion::PartialObservation partial;      // T^p with correspondence
    int source_index = -1;                      // O^c, same-category draw from db
    Category category = Category::Chair;
};

TrainingPair make_pair(const PartSegmentedShape& target, const SourceDatabase& db,
                       const occlusion::OcclusionSpec& base_spec, std::uint64_t seed);

// caches NN matches so finite-difference checks see a fixed objective
struct JointCache {
    bool filled = false;
    losses::FrozenMatch cd, sym, recon_p, recon_s;
    geometry::NeighborAssignment re_p, re_f;
};

struct JointResult {
    losses::LossTerms terms;
    LossBreakdown values;
};

JointResult forward_joint(const TrainingPair& pair, const SourceDatabase& db, const Model& model,
                          const TrainConfig& config, bool train_mode, JointCache* cache = nullptr);

struct EpochLog {
    int epoch = 0;
    double mean_total = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    std::filesystem::path checkpoint;
    std::filesystem::path loss_log;
};

// Joint two-branch training over generated target shapes. Writes the CSV
// loss log and CKPT1 checkpoints under out_dir; aborts on divergence.
TrainResult train(const SourceDatabase& db, const std::vector<PartSegmentedShape>& targets, Model& model,
                  const TrainConfig& config, const std::filesystem::path& out_dir);

struct EvalReport {
    std::map<std::string, double> per_category;  // chamfer x 10^2
    double instance_average = 0.0;               // chamfer x 10^2
    int n_targets = 0;
};

// Full inference path per target: simulate the partial view, retrieve top-k
// candidates by sphere-sampled residual voting, deform each candidate with
// the trained net, report min chamfer against the held-out full shape.
EvalReport evaluate(const SourceDatabase& db, const std::vector<PartSegmentedShape>& targets, const Model& model,
                    const TrainConfig& config, double occlusion_ratio, std::uint64_t eval_seed);

// Net-backed single-shot deformer for oracle comparisons.
deformation::Deformer net_deformer(const Model& model);

}  // namespace redforge::training
