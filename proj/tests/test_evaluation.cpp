#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "train_fixture.hpp"
#include "vsalign/compare.hpp"
#include "vsalign/evaluation.hpp"

using namespace vsalign;
using vsalign::testing::TinySetup;

TEST(Statistics, WorkedThreeEpisodeExample) {
    const EvalReport r = summarize({0.8, 1.0, 0.6}, {5, 1, 15}, 0, Split::novel);
    EXPECT_NEAR(r.mean_accuracy, 0.8, 1e-15);
    EXPECT_NEAR(r.ci95_halfwidth, 0.2263, 1e-4);
    EXPECT_NEAR(r.ci95_halfwidth, 1.96 * 0.2 / std::sqrt(3.0), 1e-15);
}

TEST(Statistics, MatchesOracleOnRandomSamples) {
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> xs(2 + uniform_index(rng, 50));
        for (double& x : xs) x = uniform01(rng);
        EXPECT_NEAR(sample_mean(xs), oracle::mean(xs), 1e-14);
        EXPECT_NEAR(sample_std(xs), oracle::sample_std(xs), 1e-14);
        EXPECT_NEAR(ci95_halfwidth(xs), 1.96 * oracle::sample_std(xs) / std::sqrt(double(xs.size())), 1e-14);
    }
}

TEST(Evaluate, RandomEncoderIsAtChance) {
    TinySetup t;
    const VisualEncoder enc = init_visual_encoder(t.cfg.encoder, 77);
    // images carry no class signal
    const Dataset noise = vsalign::testing::random_dataset(
        {{0, Split::novel}, {1, Split::novel}, {2, Split::novel}, {3, Split::novel}, {4, Split::novel},
         {5, Split::novel}, {6, Split::base}},
        20, t.data.dataset.shape(), 5);
    const EvalReport r = evaluate(enc, noise, Split::novel, {5, 1, 15}, 600, 3);
    EXPECT_LT(std::abs(r.mean_accuracy - 0.2), r.ci95_halfwidth);
}

TEST(Evaluate, ZeroNoiseClassMeansArePerfect) {
    SynthConfig cfg = vsalign::testing::small_synth();
    cfg.sigma_within = 0.0;
    const SynthData s = synth_generate(cfg, 4);
    const EvalReport r =
        evaluate_embedder([](const Matrix& x) { return x; }, s.dataset, Split::novel, {5, 1, 15}, 100, 9);
    EXPECT_EQ(r.mean_accuracy, 1.0);
    EXPECT_EQ(r.ci95_halfwidth, 0.0);
}

TEST(Evaluate, SideEffectFreeAndDeterministic) {
    TinySetup t;
    const VisualEncoder enc = init_visual_encoder(t.cfg.encoder, 1);
    const auto before = enc.checksum();
    const EvalReport a = evaluate(enc, t.data.dataset, Split::novel, {5, 1, 10}, 50, 8);
    const EvalReport b = evaluate(enc, t.data.dataset, Split::novel, {5, 1, 10}, 50, 8);
    EXPECT_EQ(enc.checksum(), before);
    EXPECT_EQ(a.per_episode_accuracy, b.per_episode_accuracy);
    EXPECT_EQ(a.n_episodes, 50u);
    EXPECT_EQ(a.split, "novel");
    EXPECT_NEAR(a.mean_accuracy, oracle::mean(a.per_episode_accuracy), 1e-15);
}

TEST(Evaluate, IntervalShrinksAsInverseSqrtN) {
    TinySetup t;
    const VisualEncoder enc = init_visual_encoder(t.cfg.encoder, 1);
    const double c1 = evaluate(enc, t.data.dataset, Split::novel, {5, 1, 5}, 300, 2).ci95_halfwidth;
    const double c2 = evaluate(enc, t.data.dataset, Split::novel, {5, 1, 5}, 600, 2).ci95_halfwidth;
    const double c4 = evaluate(enc, t.data.dataset, Split::novel, {5, 1, 5}, 1200, 2).ci95_halfwidth;
    EXPECT_NEAR(c2 / c1, 1 / std::sqrt(2.0), 0.2 / std::sqrt(2.0));
    EXPECT_NEAR(c4 / c1, 0.5, 0.1);
}

TEST(Evaluate, SplitsNeedEnoughClasses) {
    TinySetup t;
    const VisualEncoder enc = init_visual_encoder(t.cfg.encoder, 1);
    EXPECT_THROW(evaluate(enc, t.data.dataset, Split::val, {5, 1, 5}, 10, 1), Error);  // 4 val classes
    EXPECT_THROW(evaluate(enc, t.data.dataset, Split::novel, {5, 1, 50}, 10, 1), Error);
}

TEST(Compare, IdenticalConfigsGiveExactlyZeroDelta) {
    TinySetup t;
    const EvalSpec spec{Split::novel, {5, 1, 5}, 100, 4};
    const ComparisonTable table = compare_conditions({{"a", t.cfg}, {"b", t.cfg}}, t.data.dataset, &t.data.corpus, spec);
    ASSERT_EQ(table.deltas.size(), 1u);
    EXPECT_EQ(table.deltas[0].mean, 0.0);
    EXPECT_EQ(table.deltas[0].paired_se, 0.0);
    EXPECT_EQ(table.reports[0].per_episode_accuracy, table.reports[1].per_episode_accuracy);
}

TEST(Compare, ConditionsShareEpisodesAndMatchStandaloneRuns) {
    TinySetup t;
    TrainConfig no_vs = t.cfg;
    no_vs.stage2.use_vs_alignment = false;
    const EvalSpec spec{Split::novel, {5, 1, 5}, 60, 11};
    CompareOptions opt;
    opt.keep_states = true;
    const ComparisonTable table =
        compare_conditions({{"baseline", no_vs}, {"vs", t.cfg}}, t.data.dataset, &t.data.corpus, spec, opt);

    // Standalone pipeline for each condition reproduces its row.
    for (std::size_t i = 0; i < 2; ++i) {
        const TrainConfig& cfg = i == 0 ? no_vs : t.cfg;
        const TrainState s =
            train_meta_stage(train_classification_stage(t.data.dataset, cfg), t.data.dataset, &t.data.corpus, cfg);
        const EvalReport r = evaluate(s.encoder, t.data.dataset, spec.split, spec.shape, spec.n_episodes, spec.seed);
        EXPECT_EQ(r.per_episode_accuracy, table.reports[i].per_episode_accuracy);
    }
    // Paired delta from the per-episode differences.
    std::vector<double> d;
    for (std::size_t e = 0; e < 60; ++e)
        d.push_back(table.reports[1].per_episode_accuracy[e] - table.reports[0].per_episode_accuracy[e]);
    EXPECT_NEAR(table.deltas[0].mean, oracle::mean(d), 1e-15);
    EXPECT_NEAR(table.deltas[0].paired_se, oracle::sample_std(d) / std::sqrt(60.0), 1e-15);
    EXPECT_EQ(table.deltas[0].minuend, "vs");
    EXPECT_EQ(table.deltas[0].subtrahend, "baseline");

    // Same seed gives the same episode list regardless of the model.
    const auto a = episode_stream(t.data.dataset, Split::novel, spec.shape, 60, spec.seed);
    const auto b = episode_stream(t.data.dataset, Split::novel, spec.shape, 60, spec.seed);
    for (std::size_t e = 0; e < 60; ++e) ASSERT_EQ(a.at(e), b.at(e));

    const std::string text = table.render();
    EXPECT_NE(text.find("baseline"), std::string::npos);
    EXPECT_NE(text.find("vs - baseline"), std::string::npos);
    const auto recs = table.records();
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[0]["pairing"], "shared episode seeds");
    EXPECT_EQ(recs[2]["type"], "delta");
}

TEST(Compare, NeedsTwoConditions) {
    TinySetup t;
    EXPECT_THROW(compare_conditions({{"only", t.cfg}}, t.data.dataset, &t.data.corpus, {}), Error);
}
