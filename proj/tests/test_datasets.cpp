#include <cmath>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "vsalign/datasets.hpp"

using namespace vsalign;
using vsalign::testing::TempDir;
using vsalign::testing::write_file;

namespace {

/// Manifest text: classes {0..9}, split 6 base / 2 val / 2 novel, f64 payloads.
std::string ten_class_manifest(const TempDir& dir, int per_class, int extra_class = -1) {
    std::ostringstream m;
    m << "vsalign-manifest 1\nshape 2 2 1\n";
    for (int c = 0; c < 10; ++c) m << "class " << c << ' ' << (c < 6 ? "base" : c < 8 ? "val" : "novel") << '\n';
    Rng rng(1);
    for (int c = 0; c < 10; ++c)
        for (int i = 0; i < per_class; ++i) {
            const std::string name = "img_" + std::to_string(c) + "_" + std::to_string(i) + ".f64";
            double px[4];
            for (double& p : px) p = uniform01(rng);
            write_file(dir / name, std::string(reinterpret_cast<const char*>(px), sizeof px));
            m << c << ' ' << (c < 6 ? "base" : c < 8 ? "val" : "novel") << ' ' << name << '\n';
        }
    if (extra_class >= 0) m << "class " << extra_class << " novel\n";
    return m.str();
}

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorKind::io;
}

std::string message_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Manifest, CountsEchoDeclaredSplit) {
    TempDir dir;
    write_file(dir / "m.txt", ten_class_manifest(dir, 20));
    const Dataset ds = load_manifest(dir / "m.txt");
    EXPECT_EQ(ds.split().base_classes.size(), 6u);
    EXPECT_EQ(ds.split().val_classes.size(), 2u);
    EXPECT_EQ(ds.split().novel_classes.size(), 2u);
    EXPECT_EQ(ds.size(), 200u);
    EXPECT_EQ(ds.examples_of(3).size(), 20u);
    EXPECT_EQ(ds.shape(), (ImageShape{2, 2, 1}));
}

TEST(Manifest, SplitOverlapReportsClassAndLine) {
    TempDir dir;
    write_file(dir / "m.txt", ten_class_manifest(dir, 2, /*extra_class=*/3));
    const std::string msg = message_of([&] { load_manifest(dir / "m.txt"); });
    EXPECT_NE(msg.find("class 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("base"), std::string::npos);
    EXPECT_NE(msg.find("novel"), std::string::npos);
    EXPECT_NE(msg.find("m.txt:"), std::string::npos);
    EXPECT_EQ(kind_of([&] { load_manifest(dir / "m.txt"); }), ErrorKind::validation);
}

TEST(Manifest, TooFewExamplesForEpisode) {
    TempDir dir;
    write_file(dir / "m.txt", ten_class_manifest(dir, 1));
    EXPECT_NO_THROW(load_manifest(dir / "m.txt"));
    // K=1, Q=15 needs 16 per class.
    const std::string msg = message_of([&] { load_manifest(dir / "m.txt", 1 + 15); });
    EXPECT_NE(msg.find("class 0 has 1 examples, needs at least 16"), std::string::npos) << msg;
}

TEST(Manifest, MalformedRecordsNameTheLine) {
    TempDir dir;
    write_file(dir / "a.txt", "vsalign-manifest 1\nshape 2 2 x\n");
    EXPECT_NE(message_of([&] { load_manifest(dir / "a.txt"); }).find("a.txt:2"), std::string::npos);
    write_file(dir / "b.txt", "vsalign-manifest 2\n");
    EXPECT_EQ(kind_of([&] { load_manifest(dir / "b.txt"); }), ErrorKind::version);
    write_file(dir / "c.txt", "vsalign-manifest 1\nshape 1 1 1\nclass 0 base\n5 base img.f64\n");
    EXPECT_NE(message_of([&] { load_manifest(dir / "c.txt"); }).find("class 5 has no class declaration"),
              std::string::npos);
    EXPECT_EQ(kind_of([&] { load_manifest(dir / "missing.txt"); }), ErrorKind::io);
}

TEST(Manifest, SidecarAndFilePayloadsLoadEqual) {
    TempDir dir;
    write_file(dir / "files.txt", ten_class_manifest(dir, 3));
    const Dataset from_files = load_manifest(dir / "files.txt");
    save_manifest(from_files, dir / "sidecar.txt", "images.bin");
    const Dataset from_sidecar = load_manifest(dir / "sidecar.txt");
    EXPECT_TRUE(from_files == from_sidecar);
}

TEST(Manifest, PgmPayload) {
    TempDir dir;
    write_file(dir / "a.pgm", std::string("P5\n2 2\n255\n") + char(0) + char(255) + char(51) + char(102));
    write_file(dir / "b.pgm", "P2\n# ascii\n2 2\n4\n0 1 2 4\n");
    write_file(dir / "m.txt", "vsalign-manifest 1\nshape 2 2 1\nclass 0 base\n0 base a.pgm\n0 base b.pgm\n");
    const Dataset ds = load_manifest(dir / "m.txt");
    EXPECT_DOUBLE_EQ(ds.images()(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(ds.images()(0, 2), 0.2);
    EXPECT_DOUBLE_EQ(ds.images()(1, 2), 0.5);
}

TEST(Descriptions, SixBaseClassesThreeEach) {
    TempDir dir;
    write_file(dir / "m.txt", ten_class_manifest(dir, 2));
    const Dataset ds = load_manifest(dir / "m.txt");
    std::string text;
    for (int c = 0; c < 6; ++c)
        for (int k = 0; k < 3; ++k) text += std::to_string(c) + " \"class " + std::to_string(c) + " \\\"variant\\\"\"\n";
    write_file(dir / "d.txt", text);
    const DescriptionCorpus corpus = load_descriptions(dir / "d.txt", ds);
    EXPECT_EQ(corpus.kind, DescriptionKind::text);
    for (int c = 0; c < 6; ++c) EXPECT_EQ(corpus.count(c), 3u);
    EXPECT_EQ(corpus.texts.at(2)[0], "class 2 \"variant\"");
}

TEST(Descriptions, MissingBaseClassIsNamed) {
    TempDir dir;
    write_file(dir / "m.txt", ten_class_manifest(dir, 2));
    const Dataset ds = load_manifest(dir / "m.txt");
    std::string text;
    for (int c : {0, 1, 2, 3, 5}) text += std::to_string(c) + " \"x\"\n";
    write_file(dir / "d.txt", text);
    const std::string msg = message_of([&] { load_descriptions(dir / "d.txt", ds); });
    EXPECT_NE(msg.find("class 4"), std::string::npos) << msg;
}

TEST(Descriptions, EmbeddingDim512) {
    TempDir dir;
    write_file(dir / "m.txt", ten_class_manifest(dir, 2));
    const Dataset ds = load_manifest(dir / "m.txt");
    std::string text;
    for (int c = 0; c < 6; ++c) {
        text += std::to_string(c);
        for (int i = 0; i < 512; ++i) text += " 0.25";
        text += '\n';
    }
    write_file(dir / "d.txt", text);
    const DescriptionCorpus corpus = load_descriptions(dir / "d.txt", ds);
    EXPECT_EQ(corpus.kind, DescriptionKind::embedding);
    EXPECT_EQ(corpus.embedding_dim, 512);
}

TEST(Descriptions, RaggedAndMixedRejected) {
    TempDir dir;
    write_file(dir / "m.txt", ten_class_manifest(dir, 2));
    const Dataset ds = load_manifest(dir / "m.txt");
    write_file(dir / "ragged.txt", "0 1 2 3\n1 1 2\n");
    EXPECT_EQ(kind_of([&] { load_descriptions(dir / "ragged.txt", ds); }), ErrorKind::shape);
    write_file(dir / "mixed.txt", "0 1 2 3\n1 \"text\"\n");
    EXPECT_EQ(kind_of([&] { load_descriptions(dir / "mixed.txt", ds); }), ErrorKind::validation);
    write_file(dir / "unknown.txt", "42 \"nope\"\n");
    EXPECT_EQ(kind_of([&] { load_descriptions(dir / "unknown.txt", ds); }), ErrorKind::validation);
}

TEST(Synth, PureFunctionOfConfigAndSeed) {
    const SynthConfig cfg = vsalign::testing::small_synth();
    const SynthData a = synth_generate(cfg, 17), b = synth_generate(cfg, 17), c = synth_generate(cfg, 18);
    EXPECT_TRUE(a.dataset == b.dataset);
    EXPECT_TRUE(a.corpus == b.corpus);
    EXPECT_EQ(checksum(a.latents), checksum(b.latents));
    EXPECT_FALSE(a.dataset == c.dataset);
}

TEST(Synth, SplitsDisjointAndValuesInUnitInterval) {
    const SynthData s = synth_generate(vsalign::testing::small_synth(), 3);
    EXPECT_NO_THROW(s.dataset.split().check_disjoint());
    EXPECT_GE(s.dataset.images().minCoeff(), 0.0);
    EXPECT_LE(s.dataset.images().maxCoeff(), 1.0);
    EXPECT_EQ(s.dataset.split().base_classes.size(), 8u);
    EXPECT_EQ(s.corpus.count(0), 3u);
}

TEST(Synth, UninformativeDescriptionsCarryNoDirection) {
    SynthConfig cfg;
    cfg.num_base_classes = 90;
    cfg.num_val_classes = 0;
    cfg.num_novel_classes = 10;
    cfg.examples_per_class = 1;
    cfg.informativeness = 0.0;
    const SynthData s = synth_generate(cfg, 5);
    double mean = 0;
    for (int c = 0; c < 100; ++c) {
        const Vector dir = s.description_basis * s.class_means.row(c).transpose().normalized();
        const Vector& w = s.corpus.embeddings.at(c)[0];
        mean += w.dot(dir) / (w.norm() * dir.norm()) / 100.0;
    }
    EXPECT_LT(std::abs(mean), 0.1);

    cfg.informativeness = 1.0;
    const SynthData t = synth_generate(cfg, 5);
    const Vector dir = t.description_basis * t.class_means.row(0).transpose().normalized();
    const Vector& w = t.corpus.embeddings.at(0)[0];
    EXPECT_NEAR(w.dot(dir) / (w.norm() * dir.norm()), 1.0, 1e-12);
}

TEST(Synth, WellSeparatedClustersAreNearestNeighbourSeparable) {
    SynthConfig cfg = vsalign::testing::small_synth();
    cfg.sigma_between = 10.0;
    cfg.sigma_within = 1.0;
    const SynthData s = synth_generate(cfg, 8);
    const auto& z = s.latents;
    const auto& y = s.dataset.labels();
    int correct = 0;
    for (Index i = 0; i < z.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int label = -1;
        for (Index j = 0; j < z.rows(); ++j) {
            if (j == i) continue;
            const double d = (z.row(i) - z.row(j)).squaredNorm();
            if (d < best) best = d, label = y[std::size_t(j)];
        }
        correct += label == y[std::size_t(i)];
    }
    EXPECT_GT(double(correct) / double(z.rows()), 0.99);
}

TEST(Synth, RoundTripsThroughFiles) {
    TempDir dir;
    for (auto kind : {DescriptionKind::embedding, DescriptionKind::text}) {
        SynthConfig cfg = vsalign::testing::small_synth();
        cfg.description_kind = kind;
        const SynthData s = synth_generate(cfg, 21);
        save_manifest(s.dataset, dir / "manifest.txt");
        save_descriptions(s.corpus, dir / "descriptions.txt");
        const Dataset ds = load_manifest(dir / "manifest.txt");
        EXPECT_TRUE(ds == s.dataset);
        EXPECT_TRUE(load_descriptions(dir / "descriptions.txt", ds) == s.corpus);
    }
}

TEST(Synth, RejectsNonPositiveCounts) {
    SynthConfig cfg;
    cfg.examples_per_class = 0;
    EXPECT_EQ(kind_of([&] { synth_generate(cfg, 1); }), ErrorKind::config);
    cfg = {};
    cfg.informativeness = 1.5;
    EXPECT_EQ(kind_of([&] { synth_generate(cfg, 1); }), ErrorKind::config);
}
