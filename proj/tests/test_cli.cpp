// Drives the built `vsalign` binary end to end.

#include <array>
#include <cstdio>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "support.hpp"
#include "vsalign/checkpoint.hpp"
#include "vsalign/config.hpp"

using namespace vsalign;
using vsalign::testing::read_file;
using vsalign::testing::TempDir;
using vsalign::testing::write_file;

namespace {

struct CliResult {
    int code;
    std::string output;  // stdout and stderr
};

CliResult cli(const std::string& args) {
    const std::string cmd = std::string(VSALIGN_CLI) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return {-1, "popen failed"};
    std::string out;
    std::array<char, 4096> buf;
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

// Small enough that a whole pipeline takes a second or two.
const std::string kFast =
    " dataset.synth.num_base_classes=8 dataset.synth.num_val_classes=5 dataset.synth.num_novel_classes=8"
    " dataset.synth.examples_per_class=24 'dataset.synth.image_shape=[8,8,1]'"
    " train.stage1.epochs=3 'train.stage1.decay_epochs=[2]' train.stage2.epochs=4"
    " train.stage2.batches_per_epoch=3 train.stage2.q_per_class=5 eval.episodes=60 eval.q_per_class=5";

}  // namespace

TEST(Cli, SynthDataIsByteIdenticalAcrossRuns) {
    TempDir dir;
    ASSERT_EQ(cli("synth-data --seed 5 --out " + q(dir / "a") + kFast).code, 0);
    ASSERT_EQ(cli("synth-data --seed 5 --out " + q(dir / "b") + kFast).code, 0);
    for (const char* f : {"manifest.txt", "images.bin", "descriptions.txt"}) {
        const std::string a = read_file(dir / "a" / f);
        EXPECT_FALSE(a.empty()) << f;
        EXPECT_EQ(a, read_file(dir / "b" / f)) << f;
    }
    // The written manifest loads and matches the in-memory generator.
    const Dataset loaded = load_manifest(dir / "a" / "manifest.txt");
    const SynthData s = synth_generate(resolve_config("", {"dataset.synth.num_base_classes=8",
                                                            "dataset.synth.num_val_classes=5",
                                                            "dataset.synth.num_novel_classes=8",
                                                            "dataset.synth.examples_per_class=24",
                                                            "dataset.synth.image_shape=[8,8,1]"})
                                           .synth,
                                       5);
    EXPECT_TRUE(loaded.images() == s.dataset.images());
    EXPECT_EQ(loaded.labels(), s.dataset.labels());
    EXPECT_TRUE(load_descriptions(dir / "a" / "descriptions.txt", loaded) == s.corpus);
}

TEST(Cli, SynthDataRefusesNonEmptyDirectory) {
    TempDir dir;
    write_file(dir / "keep.txt", "x");
    const CliResult r = cli("synth-data --out " + q(dir.path()) + kFast);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("error[prerequisite]"), std::string::npos) << r.output;
    EXPECT_EQ(read_file(dir / "keep.txt"), "x");
    EXPECT_EQ(cli("synth-data --force --out " + q(dir.path()) + kFast).code, 0);
}

TEST(Cli, PrerequisiteAndConfigErrors) {
    TempDir dir;
    CliResult r = cli("eval --out " + q(dir.path()) + kFast);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("error[prerequisite]"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("meta.ckpt"), std::string::npos) << r.output;
    r = cli("meta-train --out " + q(dir.path()) + kFast);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("pretrain.ckpt"), std::string::npos) << r.output;
    r = cli("pretrain --out " + q(dir.path()) + " train.stage2.lamda=1");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("error[config]"), std::string::npos) << r.output;
    r = cli("frobnicate");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("error[usage]"), std::string::npos) << r.output;
}

TEST(Cli, PipelineMatchesCompareAndResume) {
    TempDir dir;
    const std::string common = " --seed 3" + kFast;
    const std::string data_args = " dataset.manifest=" + q(dir / "data" / "manifest.txt") +
                                  " descriptions.path=" + q(dir / "data" / "descriptions.txt");
    ASSERT_EQ(cli("synth-data --out " + q(dir / "data") + common).code, 0);
    const std::string manifest_before = read_file(dir / "data" / "manifest.txt");
    const std::string images_before = read_file(dir / "data" / "images.bin");

    // Uninterrupted pipeline with alignment.
    const std::string run = " --out " + q(dir / "run") + common + data_args;
    ASSERT_EQ(cli("pretrain" + run).code, 0);
    ASSERT_EQ(cli("meta-train" + run).code, 0);
    const CliResult ev = cli("eval" + run);
    ASSERT_EQ(ev.code, 0) << ev.output;
    const EvalReport report = eval_report_from_json(json::parse(read_file(dir / "run" / "eval_report.json")));
    EXPECT_EQ(report.n_episodes, 60u);
    for (const char* f : {"pretrain.config.json", "meta-train.config.json", "eval.config.json"})
        EXPECT_TRUE(std::filesystem::exists(dir / "run" / f)) << f;
    const json resolved = json::parse(read_file(dir / "run" / "eval.config.json"));
    EXPECT_EQ(resolved["seed"], 3);
    EXPECT_EQ(resolved["train"]["stage2"]["epochs"], 4);

    // Interrupted at every stage, then resumed.
    const std::string split = " --out " + q(dir / "split") + common + data_args;
    ASSERT_EQ(cli("pretrain --stop-after 1" + split).code, 0);
    EXPECT_EQ(cli("meta-train" + split).code, 2);  // classification stage unfinished
    ASSERT_EQ(cli("pretrain --resume" + split).code, 0);
    ASSERT_EQ(cli("meta-train --stop-after 2" + split).code, 0);
    ASSERT_EQ(cli("meta-train --resume" + split).code, 0);
    EXPECT_EQ(read_file(dir / "split" / "meta.ckpt"), read_file(dir / "run" / "meta.ckpt"));
    EXPECT_EQ(read_file(dir / "split" / "metrics.jsonl"), read_file(dir / "run" / "metrics.jsonl"));

    // Baseline without alignment.
    const std::string base = " --out " + q(dir / "base") + " --no-vs" + common + data_args;
    ASSERT_EQ(cli("pretrain" + base).code, 0);
    ASSERT_EQ(cli("meta-train" + base).code, 0);
    ASSERT_EQ(cli("eval" + base).code, 0);
    const EvalReport base_report = eval_report_from_json(json::parse(read_file(dir / "base" / "eval_report.json")));
    EXPECT_NE(read_file(dir / "base" / "meta.ckpt"), read_file(dir / "run" / "meta.ckpt"));

    // compare trains both conditions itself; its rows equal the separate runs.
    const CliResult cmp = cli("compare --out " + q(dir / "cmp") + common + data_args);
    ASSERT_EQ(cmp.code, 0) << cmp.output;
    std::istringstream lines(read_file(dir / "cmp" / "compare.jsonl"));
    std::vector<json> recs;
    for (std::string line; std::getline(lines, line);) recs.push_back(json::parse(line));
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[0]["label"], "meta-baseline");
    EXPECT_EQ(recs[0]["mean_accuracy"].get<double>(), base_report.mean_accuracy);
    EXPECT_EQ(recs[1]["label"], "meta-baseline+vs");
    EXPECT_EQ(recs[1]["mean_accuracy"].get<double>(), report.mean_accuracy);
    EXPECT_EQ(recs[1]["ci95_halfwidth"].get<double>(), report.ci95_halfwidth);
    EXPECT_EQ(recs[2]["type"], "delta");
    EXPECT_NE(read_file(dir / "cmp" / "compare.txt").find("meta-baseline+vs - meta-baseline"), std::string::npos);

    EXPECT_EQ(read_file(dir / "data" / "manifest.txt"), manifest_before);
    EXPECT_EQ(read_file(dir / "data" / "images.bin"), images_before);
}

TEST(Cli, ManifestWithoutDescriptionsNeedsNoVs) {
    TempDir dir;
    ASSERT_EQ(cli("synth-data --out " + q(dir / "data") + kFast).code, 0);
    const std::string run = " --out " + q(dir / "run") + kFast + " dataset.manifest=" + q(dir / "data" / "manifest.txt");
    ASSERT_EQ(cli("pretrain" + run).code, 0);
    const CliResult r = cli("meta-train" + run);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("--no-vs"), std::string::npos) << r.output;
    EXPECT_EQ(cli("meta-train --no-vs" + run).code, 0);
}
