#include <doctest.h>

#include <cmath>
#include <numeric>

#include "redforge/retrieval.hpp"
#include "redforge/training.hpp"

using namespace redforge;
using namespace redforge::retrieval;
using namespace redforge::autodiff;

TEST_CASE("sample_sphere: unit norms, determinism, concentration") {
    auto samples = sample_sphere(200, 16, 3);
    for (const auto& s : samples) {
        double n2 = 0.0;
        for (double v : s.v) n2 += v * v;
        CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-9);
        CHECK_NOTHROW(s.validate());
    }

    auto again = sample_sphere(200, 16, 3);
    for (std::size_t i = 0; i < samples.size(); ++i) CHECK(samples[i].v == again[i].v);

    // the mean of many uniform sphere samples concentrates near zero
    auto many = sample_sphere(10000, 8, 5);
    std::vector<double> mean(8, 0.0);
    for (const auto& s : many)
        for (std::size_t j = 0; j < 8; ++j) mean[j] += s.v[j];
    double norm = 0.0;
    for (double& m : mean) {
        m /= static_cast<double>(many.size());
        norm += m * m;
    }
    CHECK(std::sqrt(norm) < 0.05);
}

TEST_CASE("indicator_from_full: normalization and zero-vector error") {
    std::vector<double> v(8, 0.0);
    v[0] = 3.0;
    v[1] = 4.0;
    auto ind = indicator_from_full(v);
    CHECK(ind.v[0] == doctest::Approx(0.6));
    CHECK(ind.v[1] == doctest::Approx(0.8));

    auto unit = indicator_from_full(ind.v);
    for (std::size_t i = 0; i < unit.v.size(); ++i) CHECK(unit.v[i] == doctest::Approx(ind.v[i]).epsilon(1e-12));

    CHECK_THROWS(indicator_from_full(std::vector<double>(8, 0.0)));
}

TEST_CASE("trimmed_score: hand cases with norms 1..10") {
    std::vector<double> norms(10);
    std::iota(norms.begin(), norms.end(), 1.0);
    CHECK(trimmed_score(norms, 0.1, ScoreMode::Mean) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(trimmed_score(norms, 0.1, ScoreMode::Max) == doctest::Approx(9.0).epsilon(1e-15));
    CHECK(trimmed_score(norms, 0.0, ScoreMode::Max) == 10.0);

    auto zero_field = zeros({10, 3});
    CHECK(trimmed_score(zero_field, 0.1, ScoreMode::Mean) == 0.0);
    CHECK(trimmed_score(zero_field, 0.1, ScoreMode::Max) == 0.0);

    CHECK_THROWS_WITH_AS(trimmed_score(std::vector<double>{1.0}, 0.99, ScoreMode::Mean),
                         doctest::Contains("all points trimmed"), std::runtime_error);
}

TEST_CASE("trimmed_score: permutation invariance and positive-scale equivariance") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> norms(32);
        for (auto& n : norms) n = rng.uniform(0.0, 2.0);
        std::vector<double> shuffled = norms;
        for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
        for (auto mode : {ScoreMode::Mean, ScoreMode::Max}) {
            CHECK(trimmed_score(norms, 0.1, mode) == doctest::Approx(trimmed_score(shuffled, 0.1, mode)).epsilon(1e-12));
            const double c = rng.uniform(0.1, 5.0);
            std::vector<double> scaled = norms;
            for (auto& n : scaled) n *= c;
            CHECK(trimmed_score(scaled, 0.1, mode) == doctest::Approx(c * trimmed_score(norms, 0.1, mode)).epsilon(1e-12));
        }
    }
}

TEST_CASE("retrieve_otm: single-source database gets every vote") {
    auto config = training::TrainConfig::desk();
    config.points = 64;
    config.n_sphere_samples = 16;
    auto db = shapes::build_database(1, 61, 64);
    shapes::SourceDatabase single;
    single.ids = {db.ids[0]};
    single.shapes = {db.shapes[0]};

    auto model = training::Model::init(config, 8);
    RetrievalConfig rc{.n_samples = 16, .top_k = 5, .trim = 0.1, .mode = ScoreMode::Mean, .seed = 2};
    auto outcome = retrieve_otm(single, db.shapes[0].cloud, model.enc_partial, model.enc_source, model.residual, rc);
    REQUIRE(outcome.votes.size() == 1);
    CHECK(outcome.votes[0] == 16);
    CHECK(outcome.top_k == std::vector<int>{0});
}

TEST_CASE("retrieve_otm: votes sum to n_samples and caching is transparent") {
    auto config = training::TrainConfig::desk();
    config.points = 64;
    auto db = shapes::build_database(2, 62, 64);
    auto model = training::Model::init(config, 9);

    RetrievalConfig rc{.n_samples = 12, .top_k = 3, .trim = 0.1, .mode = ScoreMode::Mean, .seed = 7};
    auto target = db.shapes[2].cloud;
    auto outcome = retrieve_otm(db, target, model.enc_partial, model.enc_source, model.residual, rc);
    CHECK(std::accumulate(outcome.votes.begin(), outcome.votes.end(), 0) == 12);
    CHECK(outcome.top_k.size() == 3);

    // pre-encoded source features change nothing, bit for bit
    auto cached = encode_sources(db, model.enc_source);
    auto outcome2 = retrieve_otm(db, target, model.enc_partial, model.enc_source, model.residual, rc, &cached);
    CHECK(outcome2.votes == outcome.votes);
    CHECK(outcome2.scores == outcome.scores);
    CHECK(outcome2.top_k == outcome.top_k);

    // threads do not change the outcome either
    auto rc4 = rc;
    rc4.n_threads = 4;
    auto outcome3 = retrieve_otm(db, target, model.enc_partial, model.enc_source, model.residual, rc4);
    CHECK(outcome3.scores == outcome.scores);
    CHECK(outcome3.votes == outcome.votes);
}

TEST_CASE("retrieve_otm: ranking is by votes with id tie-break") {
    RetrievalOutcome out;
    out.votes = {3, 7, 3, 7, 1};
    out.ranked.resize(5);
    std::iota(out.ranked.begin(), out.ranked.end(), 0);
    std::stable_sort(out.ranked.begin(), out.ranked.end(), [&](int a, int b) {
        if (out.votes[static_cast<std::size_t>(a)] != out.votes[static_cast<std::size_t>(b)])
            return out.votes[static_cast<std::size_t>(a)] > out.votes[static_cast<std::size_t>(b)];
        return a < b;
    });
    CHECK(out.ranked == std::vector<int>{1, 3, 0, 2, 4});
}

TEST_CASE("argmin per sample is invariant to a global positive residual scale") {
    // scaling all residual norms by c > 0 scales every trimmed score by c,
    // so the per-sample winner cannot change
    Rng rng(63);
    for (int trial = 0; trial < 20; ++trial) {
        const int sources = 6;
        std::vector<std::vector<double>> fields(sources);
        for (auto& f : fields) {
            f.resize(40);
            for (auto& v : f) v = rng.uniform(0.0, 1.5);
        }
        const double c = rng.uniform(0.2, 9.0);
        for (auto mode : {ScoreMode::Mean, ScoreMode::Max}) {
            int best = 0, best_scaled = 0;
            double bs = 1e30, bss = 1e30;
            for (int s = 0; s < sources; ++s) {
                const double score = trimmed_score(fields[static_cast<std::size_t>(s)], 0.1, mode);
                std::vector<double> scaled = fields[static_cast<std::size_t>(s)];
                for (auto& v : scaled) v *= c;
                const double score_scaled = trimmed_score(scaled, 0.1, mode);
                if (score < bs) {
                    bs = score;
                    best = s;
                }
                if (score_scaled < bss) {
                    bss = score_scaled;
                    best_scaled = s;
                }
            }
            CHECK(best == best_scaled);
        }
    }
}
