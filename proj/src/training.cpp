#include "redforge/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "redforge/parallel.hpp"

namespace redforge::training {

using namespace autodiff;

TrainConfig TrainConfig::desk() {
    TrainConfig c;
    c.points = 256;
    c.feat_dim = 32;
    c.epochs = 50;
    c.residual_hidden = {96, 96, 48, 32};
    c.n_sphere_samples = 24;
    c.top_k = 10;
    c.reg_hidden1 = 64;
    c.reg_hidden2 = 32;
    return c;
}

void TrainConfig::validate() const {
    if (points < 2 || points % 2 != 0) throw std::runtime_error("config: points must be even and >= 2");
    if (feat_dim < 4 || feat_dim % attn_heads != 0)
        throw std::runtime_error("config: feat_dim must be a multiple of attn_heads");
    if (epochs < 1) throw std::runtime_error("config: epochs must be >= 1");
    if (grad_accum < 1) throw std::runtime_error("config: grad_accum must be >= 1");
    if (residual_hidden.size() != 4) throw std::runtime_error("config: residual_hidden needs 4 widths");
    if (weights.lambda0 < 0 || weights.lambda1 < 0 || weights.lambda2 < 0)
        throw std::runtime_error("config: loss weights must be non-negative");
    occl.validate();
}

// ---------------------------------------------------------------------------
// config text form

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

std::string format_double(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

}  // namespace

std::string config_to_text(const TrainConfig& c) {
    std::ostringstream out;
    out << "run.seed=" << c.seed << "\n";
    out << "run.threads=" << c.n_threads << "\n";
    out << "data.points=" << c.points << "\n";
    std::string cats;
    for (std::size_t i = 0; i < c.categories.size(); ++i)
        cats += (i ? "," : "") + shapes::category_name(c.categories[i]);
    out << "data.categories=" << cats << "\n";
    out << "net.feat_dim=" << c.feat_dim << "\n";
    out << "net.residual_hidden=" << join_ints(c.residual_hidden) << "\n";
    out << "net.attn_heads=" << c.attn_heads << "\n";
    out << "net.agnn_blocks=" << c.agnn_blocks << "\n";
    out << "net.reg_hidden1=" << c.reg_hidden1 << "\n";
    out << "net.reg_hidden2=" << c.reg_hidden2 << "\n";
    out << "loss.lambda0=" << format_double(c.weights.lambda0) << "\n";
    out << "loss.lambda1=" << format_double(c.weights.lambda1) << "\n";
    out << "loss.lambda2=" << format_double(c.weights.lambda2) << "\n";
    out << "loss.symmetry=" << (c.symmetry_loss ? 1 : 0) << "\n";
    out << "train.lr=" << format_double(c.lr) << "\n";
    out << "train.epochs=" << c.epochs << "\n";
    out << "train.grad_accum=" << c.grad_accum << "\n";
    out << "train.checkpoint_every=" << c.checkpoint_every << "\n";
    out << "occlusion.kind=" << occlusion::kind_name(c.occl.kind) << "\n";
    out << "occlusion.target_ratio=" << format_double(c.occl.target_ratio) << "\n";
    out << "occlusion.noise_sigma=" << format_double(c.occl.noise_sigma) << "\n";
    out << "retrieval.samples=" << c.n_sphere_samples << "\n";
    out << "retrieval.top_k=" << c.top_k << "\n";
    out << "retrieval.trim=" << format_double(c.trim) << "\n";
    out << "retrieval.mode=" << retrieval::mode_name(c.score_mode) << "\n";
    return out.str();
}

TrainConfig config_from_text(const std::string& text) {
    TrainConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r' || line.back() == '\t')) line.pop_back();
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config parse error at line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "run.seed") c.seed = std::stoull(value);
        else if (key == "run.threads") c.n_threads = std::stoi(value);
        else if (key == "data.points") c.points = std::stoi(value);
        else if (key == "data.categories") {
            c.categories.clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) c.categories.push_back(shapes::category_from_name(item));
        } else if (key == "net.feat_dim") c.feat_dim = std::stoi(value);
        else if (key == "net.residual_hidden") c.residual_hidden = split_ints(value);
        else if (key == "net.attn_heads") c.attn_heads = std::stoi(value);
        else if (key == "net.agnn_blocks") c.agnn_blocks = std::stoi(value);
        else if (key == "net.reg_hidden1") c.reg_hidden1 = std::stoi(value);
        else if (key == "net.reg_hidden2") c.reg_hidden2 = std::stoi(value);
        else if (key == "loss.lambda0") c.weights.lambda0 = std::stod(value);
        else if (key == "loss.lambda1") c.weights.lambda1 = std::stod(value);
        else if (key == "loss.lambda2") c.weights.lambda2 = std::stod(value);
        else if (key == "loss.symmetry") c.symmetry_loss = value != "0";
        else if (key == "train.lr") c.lr = std::stod(value);
        else if (key == "train.epochs") c.epochs = std::stoi(value);
        else if (key == "train.grad_accum") c.grad_accum = std::stoi(value);
        else if (key == "train.checkpoint_every") c.checkpoint_every = std::stoi(value);
        else if (key == "occlusion.kind") c.occl.kind = occlusion::kind_from_name(value);
        else if (key == "occlusion.target_ratio") c.occl.target_ratio = std::stod(value);
        else if (key == "occlusion.noise_sigma") c.occl.noise_sigma = std::stod(value);
        else if (key == "retrieval.samples") c.n_sphere_samples = std::stoi(value);
        else if (key == "retrieval.top_k") c.top_k = std::stoi(value);
        else if (key == "retrieval.trim") c.trim = std::stod(value);
        else if (key == "retrieval.mode") c.score_mode = retrieval::mode_from_name(value);
        else throw std::runtime_error("config parse error at line " + std::to_string(lineno) + ": unknown key " + key);
    }
    c.validate();
    return c;
}

void save_config(const TrainConfig& config, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write config: " + path.string());
    f << config_to_text(config);
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return config_from_text(ss.str());
}

// ---------------------------------------------------------------------------
// model

Model Model::init(const TrainConfig& config, std::uint64_t seed) {
    Rng rng = Rng(seed).stream("init");
    Model m;
    m.feat_dim = config.feat_dim;
    m.points = config.points;
    m.enc_partial = nets::Encoder::init(config.feat_dim, rng);
    m.enc_full = nets::Encoder::init(config.feat_dim, rng);
    m.enc_source = nets::Encoder::init(config.feat_dim, rng);
    m.residual = nets::ResidualHead::init(config.feat_dim, config.residual_hidden, rng);
    m.deformer = nets::Deformer::init(config.feat_dim, config.agnn_blocks, config.attn_heads, config.reg_hidden1,
                                      config.reg_hidden2, rng);
    m.recon_partial = nets::ReconHead::init(config.feat_dim, config.points, rng);
    m.recon_source = nets::ReconHead::init(config.feat_dim, config.points, rng);
    return m;
}

optim::ParamMap Model::params() const {
    optim::ParamMap pm;
    enc_partial.collect(pm, "enc_partial");
    enc_full.collect(pm, "enc_full");
    enc_source.collect(pm, "enc_source");
    residual.collect(pm, "residual");
    deformer.collect(pm, "deformer");
    recon_partial.collect(pm, "recon_partial");
    recon_source.collect(pm, "recon_source");
    return pm;
}

void save_model(const Model& model, const std::filesystem::path& path) {
    optim::save_checkpoint(model.params(), path);
}

void load_model(Model& model, const std::filesystem::path& path) {
    auto pm = model.params();
    optim::load_checkpoint(pm, path);
}

// ---------------------------------------------------------------------------
// pairs and joint forward

TrainingPair make_pair(const PartSegmentedShape& target, const SourceDatabase& db,
                       const occlusion::OcclusionSpec& base_spec, std::uint64_t seed) {
    if (db.size() == 0) throw std::runtime_error("make_pair: empty database");
    Rng rng(seed);
    TrainingPair pair;
    pair.full = target.cloud;
    pair.category = target.category;

    Rng geo_rng = rng.stream("occl");
    auto spec = occlusion::randomize_geometry(base_spec, pair.full, geo_rng);
    spec.seed = rng.stream("occl-seed").state();
    pair.partial = occlusion::simulate(pair.full, spec, pair.full.size());

    std::vector<int> same_category;
    for (std::size_t i = 0; i < db.size(); ++i)
        if (db.shapes[i].category == target.category) same_category.push_back(static_cast<int>(i));
    if (same_category.empty()) throw std::runtime_error("make_pair: no same-category sources in database");
    Rng src_rng = rng.stream("source");
    pair.source_index = same_category[static_cast<std::size_t>(src_rng.below(same_category.size()))];
    return pair;
}

namespace {

struct BranchOut {
    TensorPtr residual_field;  // R, (M, 3)
    TensorPtr deformed;        // deformed source cloud, (M, 3)
};

BranchOut run_branch(const Model& model, const nets::FeaturePair& target_feats, const TensorPtr& source_global,
                     const TensorPtr& part_feats, const PartSegmentedShape& source, const TensorPtr& indicator,
                     bool train_mode) {
    BranchOut out;
    out.residual_field =
        model.residual.forward(target_feats.pointwise, target_feats.global, source_global, indicator, train_mode);
    auto deform = model.deformer.forward(part_feats, target_feats.global, source_global);
    auto scale = nets::scales_from_raw(deform.scale_raw);
    out.deformed = deformation::apply_deformation_tensor(source, deform.center_delta, scale);
    return out;
}

}  // namespace

JointResult forward_joint(const TrainingPair& pair, const SourceDatabase& db, const Model& model,
                          const TrainConfig& config, bool train_mode, JointCache* cache) {
    const auto& source = db.shapes[static_cast<std::size_t>(pair.source_index)];

    const auto feats_p = model.enc_partial.forward(pair.partial.partial, train_mode);
    const auto feats_f = model.enc_full.forward(pair.full, train_mode);
    const auto feats_s = model.enc_source.forward(source.cloud, train_mode);
    const auto part_feats = shapes::part_mean_pool(feats_s.pointwise, source.part_labels, source.part_count());

    // both branches share the indicator: the normalized full-shape feature.
    // A zero global (all-zero parameters) has no direction; fall back to a
    // fixed axis so the residual head's unit-norm contract still holds.
    TensorPtr indicator;
    double gf_norm_sq = 0.0;
    for (double v : feats_f.global->values) gf_norm_sq += v * v;
    if (std::sqrt(gf_norm_sq) < 1e-9) {
        std::vector<double> axis(static_cast<std::size_t>(model.feat_dim), 0.0);
        axis[0] = 1.0;
        indicator = make_tensor({model.feat_dim}, std::move(axis));
    } else {
        indicator = l2_normalize(feats_f.global);
    }

    const auto branch_p = run_branch(model, feats_p, feats_s.global, part_feats, source, indicator, train_mode);
    const auto branch_f = run_branch(model, feats_f, feats_s.global, part_feats, source, indicator, train_mode);

    const bool use_cache = cache && cache->filled;
    auto cd = losses::loss_chamfer(branch_p.deformed, pair.partial.partial, use_cache ? &cache->cd : nullptr);
    auto sym = config.symmetry_loss ? losses::loss_symmetry(branch_p.deformed, use_cache ? &cache->sym : nullptr)
                                    : scalar_tensor(0.0);
    auto recon_p_out = model.recon_partial.forward(feats_p.global);
    auto recon_s_out = model.recon_source.forward(feats_s.global);
    auto recon = add(losses::loss_recon(recon_p_out, pair.partial.partial, use_cache ? &cache->recon_p : nullptr),
                     losses::loss_recon(recon_s_out, source.cloud, use_cache ? &cache->recon_s : nullptr));
    auto re = add(losses::loss_re(pair.partial.partial, branch_p.residual_field, branch_p.deformed,
                                  use_cache ? &cache->re_p : nullptr),
                  losses::loss_re(pair.full, branch_f.residual_field, branch_f.deformed,
                                  use_cache ? &cache->re_f : nullptr));
    auto residual_full_gathered = gather_rows(branch_f.residual_field, pair.partial.correspondence);
    auto co = losses::loss_consistency(branch_p.deformed, branch_f.deformed, branch_p.residual_field,
                                       residual_full_gathered);

    if (cache && !cache->filled) {
        const auto dp = nets::cloud_from_tensor(branch_p.deformed);
        cache->cd = {geometry::nearest_neighbors(dp, pair.partial.partial),
                     geometry::nearest_neighbors(pair.partial.partial, dp)};
        const auto refl = geometry::reflect_bilateral(dp);
        cache->sym = {geometry::nearest_neighbors(dp, refl), geometry::nearest_neighbors(refl, dp)};
        const auto rp = nets::cloud_from_tensor(recon_p_out);
        cache->recon_p = {geometry::nearest_neighbors(rp, pair.partial.partial),
                          geometry::nearest_neighbors(pair.partial.partial, rp)};
        const auto rs = nets::cloud_from_tensor(recon_s_out);
        cache->recon_s = {geometry::nearest_neighbors(rs, source.cloud),
                          geometry::nearest_neighbors(source.cloud, rs)};
        cache->re_p = geometry::nearest_neighbors(pair.partial.partial, dp);
        cache->re_f = geometry::nearest_neighbors(pair.full, nets::cloud_from_tensor(branch_f.deformed));
        cache->filled = true;
    }

    JointResult result;
    result.terms = losses::loss_total(cd, sym, recon, re, co.co1, co.co2, config.weights);
    result.values = losses::breakdown(result.terms);
    return result;
}

// ---------------------------------------------------------------------------
// training loop

TrainResult train(const SourceDatabase& db, const std::vector<PartSegmentedShape>& targets, Model& model,
                  const TrainConfig& config, const std::filesystem::path& out_dir) {
    if (targets.empty()) throw std::runtime_error("train: no targets");
    config.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    save_config(config, out_dir / "run_config.txt");

    auto pm = model.params();
    optim::AdamW optimizer(pm.trainable(), {.lr = config.lr});

    TrainResult result;
    result.loss_log = out_dir / "loss_log.csv";
    std::ofstream log(result.loss_log);
    log << "epoch,sample,cd,sym,recon,re,co1,co2,total\n";
    log.precision(10);

    const Rng run_rng(config.seed);
    double initial_mean = 0.0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<std::size_t> order(targets.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng = run_rng.stream("epoch-shuffle", static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.below(i))]);

        std::vector<double> sample_totals(targets.size(), 0.0);
        int in_window = 0;
        pm.zero_grad();
        for (std::size_t step = 0; step < order.size(); ++step) {
            const std::size_t t = order[step];
            // pair seeds depend only on the target, so a frozen model sees a
            // frozen objective (lr=0 keeps the loss constant across epochs)
            const auto pair = make_pair(targets[t], db, config.occl, derive_seed(config.seed, "pair", t));
            auto joint = forward_joint(pair, db, model, config, /*train_mode=*/true);
            backward(joint.terms.total);
            ++in_window;
            sample_totals[t] = joint.values.total;
            log << epoch << ',' << t << ',' << joint.values.cd << ',' << joint.values.sym << ',' << joint.values.recon
                << ',' << joint.values.re << ',' << joint.values.co1 << ',' << joint.values.co2 << ','
                << joint.values.total << '\n';
            if (in_window == config.grad_accum || step + 1 == order.size()) {
                // average the accumulated gradients over the window
                for (const auto& p : pm.trainable()) {
                    p->ensure_grad();
                    for (auto& g : p->grad) g /= in_window;
                }
                optimizer.step();
                pm.zero_grad();
                in_window = 0;
            }
        }
        // reduce in target-index order for shuffle-independent bits
        double total_acc = 0.0;
        for (double v : sample_totals) total_acc += v;
        const double mean_total = total_acc / static_cast<double>(targets.size());
        result.epochs.push_back({epoch, mean_total});
        if (epoch == 0) initial_mean = mean_total;
        if (!std::isfinite(mean_total) || mean_total > 1e3 * std::max(initial_mean, 1e-12))
            throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": mean total " +
                                     std::to_string(mean_total) + " vs initial " + std::to_string(initial_mean));
        if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0)
            save_model(model, out_dir / ("ckpt_epoch" + std::to_string(epoch + 1) + ".ckpt"));
    }
    result.checkpoint = out_dir / "final.ckpt";
    save_model(model, result.checkpoint);
    return result;
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

double deform_with_net(const Model& model, const nets::FeaturePair& target_feats, const PartSegmentedShape& source,
                       const PointCloud& reference, const retrieval::SourceFeatures& feats, std::size_t source_idx) {
    auto deform = model.deformer.forward(feats.part_feats[source_idx], target_feats.global, feats.global[source_idx]);
    auto scale = nets::scales_from_raw(deform.scale_raw);
    auto deformed = deformation::apply_deformation_tensor(source, deform.center_delta, scale);
    return geometry::chamfer_distance(nets::cloud_from_tensor(deformed), reference);
}

}  // namespace

EvalReport evaluate(const SourceDatabase& db, const std::vector<PartSegmentedShape>& targets, const Model& model,
                    const TrainConfig& config, double occlusion_ratio, std::uint64_t eval_seed) {
    EvalReport report;
    report.n_targets = static_cast<int>(targets.size());
    const auto source_feats = retrieval::encode_sources(db, model.enc_source, config.n_threads);

    std::vector<double> chamfers(targets.size(), 0.0);
    std::vector<Category> cats(targets.size());

    parallel_for(targets.size(), config.n_threads, [&](std::size_t t) {
        const auto& target = targets[t];
        cats[t] = target.category;

        auto spec = config.occl;
        spec.target_ratio = occlusion_ratio;
        Rng rng(derive_seed(eval_seed, "eval", t));
        spec = occlusion::randomize_geometry(spec, target.cloud, rng);
        spec.seed = rng.stream("occl-seed").state();
        const auto partial = occlusion::simulate(target.cloud, spec, target.cloud.size());

        retrieval::RetrievalConfig rc{.n_samples = config.n_sphere_samples,
                                      .top_k = config.top_k,
                                      .trim = config.trim,
                                      .mode = config.score_mode,
                                      .seed = derive_seed(eval_seed, "sphere", t),
                                      .n_threads = 1};
        const auto outcome = retrieval::retrieve_otm(db, partial.partial, model.enc_partial, model.enc_source,
                                                     model.residual, rc, &source_feats);

        const auto target_feats = model.enc_partial.forward(partial.partial, /*train=*/false);
        double best = std::numeric_limits<double>::infinity();
        for (int cand : outcome.top_k) {
            const double cd = deform_with_net(model, target_feats, db.shapes[static_cast<std::size_t>(cand)],
                                              target.cloud, source_feats, static_cast<std::size_t>(cand));
            best = std::min(best, cd);
        }
        chamfers[t] = best;
    });

    std::map<std::string, std::pair<double, int>> by_cat;
    double total = 0.0;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        total += chamfers[t];
        auto& [acc, n] = by_cat[shapes::category_name(cats[t])];
        acc += chamfers[t];
        ++n;
    }
    for (const auto& [name, acc_n] : by_cat)
        report.per_category[name] = 100.0 * acc_n.first / static_cast<double>(acc_n.second);
    report.instance_average = targets.empty() ? 0.0 : 100.0 * total / static_cast<double>(targets.size());
    return report;
}

deformation::Deformer net_deformer(const Model& model) {
    return [&model](const PartSegmentedShape& source, const PointCloud& target) {
        const auto target_feats = model.enc_partial.forward(target, /*train=*/false);
        const auto source_feats = model.enc_source.forward(source.cloud, /*train=*/false);
        const auto part_feats = shapes::part_mean_pool(source_feats.pointwise, source.part_labels, source.part_count());
        auto deform = model.deformer.forward(part_feats, target_feats.global, source_feats.global);
        auto scale = nets::scales_from_raw(deform.scale_raw);
        auto deformed = deformation::apply_deformation_tensor(source, deform.center_delta, scale);
        return geometry::chamfer_distance(nets::cloud_from_tensor(deformed), target);
    };
}

}  // namespace redforge::training
