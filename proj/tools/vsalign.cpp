// vsalign: synth-data | pretrain | meta-train | eval | compare
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or prerequisite error.
// Failures print one line to stderr: "error[<kind>]: <message>".

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "vsalign/checkpoint.hpp"
#include "vsalign/compare.hpp"
#include "vsalign/config.hpp"

namespace fs = std::filesystem;
using namespace vsalign;

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
    bool no_vs = false;
    bool resume = false;
    int stop_after = -1;
    std::string checkpoint;
    std::vector<std::string> overrides;
};

struct Context {
    ExperimentConfig cfg;
    json resolved;
    fs::path out;
};

Context resolve(const Flags& f) {
    std::vector<std::string> overrides = f.overrides;
    if (f.seed) overrides.push_back("seed=" + std::to_string(*f.seed));
    if (!f.out.empty()) overrides.push_back("output_dir=" + json(f.out).dump());
    if (f.no_vs) overrides.push_back("train.stage2.use_vs_alignment=false");
    Context ctx;
    ctx.resolved = resolve_config_json(f.config, overrides);
    ctx.cfg = experiment_from_json(ctx.resolved);
    ctx.out = ctx.cfg.output_dir;
    return ctx;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

void prepare_out(const Context& ctx, const std::string& command) {
    std::error_code ec;
    fs::create_directories(ctx.out, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create " + ctx.out.string() + ": " + ec.message());
    write_text(ctx.out / (command + ".config.json"), ctx.resolved.dump(2) + "\n");
}

struct Data {
    Dataset dataset;
    std::optional<DescriptionCorpus> corpus;
};

Data load_data(const ExperimentConfig& cfg) {
    if (cfg.manifest.empty()) {
        SynthData s = synth_generate(cfg.synth, cfg.seed);
        Data d{std::move(s.dataset), std::move(s.corpus)};
        if (!cfg.descriptions.empty()) d.corpus = load_descriptions(cfg.descriptions, d.dataset);
        return d;
    }
    Data d{load_manifest(cfg.manifest), std::nullopt};
    if (!cfg.descriptions.empty()) d.corpus = load_descriptions(cfg.descriptions, d.dataset);
    return d;
}

TrainConfig train_config(const ExperimentConfig& cfg, const Dataset& ds) {
    TrainConfig t = cfg.train;
    t.encoder.input = ds.shape();
    return t;
}

TrainState require_checkpoint(const fs::path& path, const std::string& hint) {
    if (!fs::exists(path)) throw Error(ErrorKind::prerequisite, "missing checkpoint " + path.string() + "; " + hint);
    return load_checkpoint(path);
}

// ---------------------------------------------------------------------------

int cmd_synth_data(const Flags& f) {
    Context ctx = resolve(f);
    if (fs::exists(ctx.out) && !fs::is_directory(ctx.out))
        throw Error(ErrorKind::io, ctx.out.string() + " exists and is not a directory");
    if (fs::exists(ctx.out) && !fs::is_empty(ctx.out) && !f.force)
        throw Error(ErrorKind::prerequisite, ctx.out.string() + " is not empty (use --force to overwrite)");
    prepare_out(ctx, "synth-data");
    const SynthData s = synth_generate(ctx.cfg.synth, ctx.cfg.seed);
    save_manifest(s.dataset, ctx.out / "manifest.txt", "images.bin");
    save_descriptions(s.corpus, ctx.out / "descriptions.txt");
    std::cout << "wrote " << s.dataset.size() << " examples, " << s.corpus.class_ids().size()
              << " described classes to " << ctx.out.string() << "\n";
    return 0;
}

int cmd_pretrain(const Flags& f) {
    Context ctx = resolve(f);
    prepare_out(ctx, "pretrain");
    const Data data = load_data(ctx.cfg);
    const TrainConfig tc = train_config(ctx.cfg, data.dataset);
    const fs::path ckpt = ctx.out / "pretrain.ckpt";

    TrainState state = f.resume ? require_checkpoint(ckpt, "nothing to resume") : init_train_state(tc);
    std::ofstream metrics(ctx.out / "metrics.jsonl", f.resume ? std::ios::app : std::ios::trunc);
    RunOptions run;
    run.metrics = &metrics;
    run.stop_after_epoch = f.stop_after;
    run.last_checkpoint = ckpt.string();
    run.on_epoch_end = [&](const TrainState& s) { save_checkpoint(s, ckpt); };
    state = train_classification_stage(std::move(state), data.dataset, tc, run);
    save_checkpoint(state, ckpt);
    std::cout << "classification stage: epoch " << state.epoch << "/" << tc.stage1.epochs << ", checkpoint "
              << ckpt.string() << "\n";
    return 0;
}

int cmd_meta_train(const Flags& f) {
    Context ctx = resolve(f);
    prepare_out(ctx, "meta-train");
    const Data data = load_data(ctx.cfg);
    const TrainConfig tc = train_config(ctx.cfg, data.dataset);
    const fs::path ckpt = ctx.out / "meta.ckpt";

    TrainState state = f.resume ? require_checkpoint(ckpt, "nothing to resume")
                                : require_checkpoint(ctx.out / "pretrain.ckpt", "run `vsalign pretrain` first");
    if (state.has_head())
        throw Error(ErrorKind::prerequisite, "classification stage is unfinished; run `vsalign pretrain --resume`");
    if (tc.stage2.use_vs_alignment && !data.corpus)
        throw Error(ErrorKind::prerequisite, "alignment is enabled but no descriptions are configured "
                                             "(set descriptions.path or pass --no-vs)");
    std::ofstream metrics(ctx.out / "metrics.jsonl", std::ios::app);
    RunOptions run;
    run.metrics = &metrics;
    run.stop_after_epoch = f.stop_after;
    run.last_checkpoint = ckpt.string();
    run.on_epoch_end = [&](const TrainState& s) { save_checkpoint(s, ckpt); };
    state = train_meta_stage(std::move(state), data.dataset, data.corpus ? &*data.corpus : nullptr, tc, run);
    save_checkpoint(state, ckpt);
    std::cout << "meta stage: epoch " << state.epoch << "/" << tc.stage2.epochs << ", tau_cls " << state.tau_cls()
              << ", checkpoint " << ckpt.string() << "\n";
    return 0;
}

int cmd_eval(const Flags& f) {
    Context ctx = resolve(f);
    const fs::path ckpt = f.checkpoint.empty() ? ctx.out / "meta.ckpt" : fs::path(f.checkpoint);
    const TrainState state = require_checkpoint(ckpt, "run `vsalign meta-train` first or pass --checkpoint");
    prepare_out(ctx, "eval");
    const Data data = load_data(ctx.cfg);
    const auto& e = ctx.cfg.eval;
    const EvalReport r = evaluate(state.encoder, data.dataset, e.split, e.shape, e.n_episodes, e.seed);
    json doc = to_json(r);
    doc["checkpoint"] = ckpt.string();
    write_text(ctx.out / "eval_report.json", doc.dump(2) + "\n");
    std::printf("%s %d-way %d-shot, %zu episodes: %.4f +- %.4f\n", r.split.c_str(), r.shape.n_way, r.shape.k_shot,
                r.n_episodes, r.mean_accuracy, r.ci95_halfwidth);
    return 0;
}

int cmd_compare(const Flags& f) {
    Context ctx = resolve(f);
    prepare_out(ctx, "compare");
    const Data data = load_data(ctx.cfg);
    std::vector<Condition> conditions;
    for (const auto& c : ctx.cfg.conditions) conditions.push_back({c.label, condition_train_config(ctx.cfg, c)});
    std::ofstream metrics(ctx.out / "compare.metrics.jsonl", std::ios::trunc);
    CompareOptions opt;
    opt.metrics = &metrics;
    const ComparisonTable table =
        compare_conditions(conditions, data.dataset, data.corpus ? &*data.corpus : nullptr, ctx.cfg.eval, opt);
    const std::string text = table.render();
    write_text(ctx.out / "compare.txt", text);
    std::string lines;
    for (const auto& rec : table.records()) lines += rec.dump() + "\n";
    write_text(ctx.out / "compare.jsonl", lines);
    std::cout << text;
    return 0;
}

int exit_code(ErrorKind k) {
    return k == ErrorKind::prerequisite || k == ErrorKind::config ? 2 : 1;
}

void report(std::string_view kind, std::string msg) {
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error[" << kind << "]: " << msg << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot training with visual-semantic prototype alignment"};
    app.require_subcommand(1);
    Flags f;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON config file (empty or absent: desk profile)");
        sub->add_option("--seed", f.seed, "master seed");
        sub->add_option("--out", f.out, "output directory");
        sub->add_flag("--no-vs", f.no_vs, "disable the alignment term");
        sub->add_option("overrides", f.overrides, "dotted-key overrides, e.g. train.stage2.objective.lambda_vs=1.0");
    };

    auto* synth = app.add_subcommand("synth-data", "generate a synthetic dataset and descriptions");
    add_common(synth);
    synth->add_flag("--force", f.force, "write into a non-empty output directory");

    auto* pretrain = app.add_subcommand("pretrain", "classification stage on base classes");
    auto* meta = app.add_subcommand("meta-train", "episodic stage starting from pretrain.ckpt");
    for (auto* sub : {pretrain, meta}) {
        add_common(sub);
        sub->add_flag("--resume", f.resume, "continue from this stage's checkpoint");
        sub->add_option("--stop-after", f.stop_after, "stop once this many epochs of the stage are done");
    }

    auto* eval = app.add_subcommand("eval", "episodic evaluation of a checkpoint");
    add_common(eval);
    eval->add_option("--checkpoint", f.checkpoint, "checkpoint to evaluate (default <out>/meta.ckpt)");

    auto* compare = app.add_subcommand("compare", "train and evaluate every compare.conditions entry");
    add_common(compare);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report("usage", e.what());
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth_data(f);
        if (pretrain->parsed()) return cmd_pretrain(f);
        if (meta->parsed()) return cmd_meta_train(f);
        if (eval->parsed()) return cmd_eval(f);
        return cmd_compare(f);
    } catch (const Error& e) {
        report(to_string(e.kind()), e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        report("internal", e.what());
        return 1;
    }
}
