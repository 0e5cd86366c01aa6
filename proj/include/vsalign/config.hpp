#pragma once

// Experiment configuration as JSON. Files are merged onto the desk-profile
// defaults, then dotted-key overrides ("train.stage2.objective.lambda_vs=2.5")
// are applied. Keys absent from the defaults are rejected.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "compare.hpp"
#include "evaluation.hpp"
#include "training.hpp"

namespace vsalign {

using json = nlohmann::ordered_json;

struct ConditionSpec {
    std::string label;
    json overrides = json::object();  // dotted key -> value
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "runs/desk";
    std::string manifest;      // empty: generate from `synth`
    SynthConfig synth;
    std::string descriptions;  // empty: use the generated corpus
    TrainConfig train;
    EvalSpec eval;
    std::vector<ConditionSpec> conditions;

    /// Desk-scale profile: every default an empty config file resolves to.
    static ExperimentConfig desk_profile() {
        ExperimentConfig c;
        c.synth.latent_dim = 4;
        c.synth.pixel_noise = 2.0;
        c.train = TrainConfig::desk_profile();
        c.eval.n_episodes = 600;
        c.conditions = {{"meta-baseline", json{{"train.stage2.use_vs_alignment", false}}},
                        {"meta-baseline+vs", json{{"train.stage2.use_vs_alignment", true}}}};
        return c;
    }
};

// ---------------------------------------------------------------------------
// to_json

inline json to_json(const SynthConfig& s) {
    return {{"num_base_classes", s.num_base_classes},
            {"num_val_classes", s.num_val_classes},
            {"num_novel_classes", s.num_novel_classes},
            {"examples_per_class", s.examples_per_class},
            {"image_shape", {s.image.height, s.image.width, s.image.channels}},
            {"latent_dim", s.latent_dim},
            {"sigma_between", s.sigma_between},
            {"sigma_within", s.sigma_within},
            {"pixel_noise", s.pixel_noise},
            {"embedding_dim", s.embedding_dim},
            {"descriptions_per_class", s.descriptions_per_class},
            {"informativeness", s.informativeness},
            {"description_kind", s.description_kind == DescriptionKind::text ? "text" : "embedding"},
            {"tokens_per_description", s.tokens_per_description},
            {"attributes_per_class", s.attributes_per_class},
            {"noise_vocabulary", s.noise_vocabulary}};
}

inline json to_json(const TrainConfig& t) {
    const auto& s1 = t.stage1;
    const auto& s2 = t.stage2;
    return {{"encoder",
             {{"architecture", std::string(to_string(t.encoder.architecture))},
              {"output_dim", t.encoder.output_dim},
              {"hidden", t.encoder.hidden},
              {"conv_width", t.encoder.conv_width}}},
            {"semantic",
             {{"token_dim", t.semantic.token_dim}, {"seed", t.semantic.seed}, {"projection", t.semantic.projection}}},
            {"stage1",
             {{"enabled", s1.enabled},
              {"optimizer", "sgd"},
              {"lr", s1.lr},
              {"momentum", s1.momentum},
              {"weight_decay", s1.weight_decay},
              {"epochs", s1.epochs},
              {"batch_size", s1.batch_size},
              {"decay_epochs", s1.decay_epochs},
              {"decay_factor", s1.decay_factor}}},
            {"stage2",
             {{"optimizer", "adam"},
              {"lr", s2.lr},
              {"epochs", s2.epochs},
              {"batches_per_epoch", s2.batches_per_epoch},
              {"tasks_per_batch", s2.tasks_per_batch},
              {"n_way", s2.episode.n_way},
              {"k_shot", s2.episode.k_shot},
              {"q_per_class", s2.episode.q_per_class},
              {"use_vs_alignment", s2.use_vs_alignment},
              {"select_on_val", s2.select_on_val},
              {"val_episodes", s2.val_episodes},
              {"objective",
               {{"lambda_vs", s2.objective.lambda_vs},
                {"tau_cls_init", s2.objective.tau_cls_init},
                {"tau_vs", s2.objective.tau_vs},
                {"norm_epsilon", s2.objective.norm_epsilon}}}}}};
}

inline json to_json(const EvalSpec& e) {
    return {{"split", std::string(to_string(e.split))},
            {"n_way", e.shape.n_way},
            {"k_shot", e.shape.k_shot},
            {"q_per_class", e.shape.q_per_class},
            {"episodes", e.n_episodes},
            {"seed", e.seed}};
}

inline json to_json(const ExperimentConfig& c) {
    json conditions = json::array();
    for (const auto& cond : c.conditions) conditions.push_back({{"label", cond.label}, {"overrides", cond.overrides}});
    json train = to_json(c.train);
    json out = {{"seed", c.seed},
                {"output_dir", c.output_dir},
                {"dataset", {{"manifest", c.manifest}, {"synth", to_json(c.synth)}}},
                {"descriptions", {{"path", c.descriptions}}},
                {"encoder", train["encoder"]},
                {"semantic", train["semantic"]},
                {"train", {{"stage1", train["stage1"]}, {"stage2", train["stage2"]}}},
                {"eval", to_json(c.eval)},
                {"compare", {{"conditions", conditions}}}};
    return out;
}

inline json to_json(const EvalReport& r) {
    return {{"split", r.split},
            {"n_way", r.shape.n_way},
            {"k_shot", r.shape.k_shot},
            {"q_per_class", r.shape.q_per_class},
            {"n_episodes", r.n_episodes},
            {"seed", r.seed},
            {"mean_accuracy", r.mean_accuracy},
            {"ci95_halfwidth", r.ci95_halfwidth},
            {"ci_method", "normal approximation: 1.96 * sample_std(n-1) / sqrt(n)"},
            {"per_episode_accuracy", r.per_episode_accuracy}};
}

inline EvalReport eval_report_from_json(const json& j) {
    EvalReport r;
    r.split = j.at("split").get<std::string>();
    r.shape = {j.at("n_way").get<int>(), j.at("k_shot").get<int>(), j.at("q_per_class").get<int>()};
    r.n_episodes = j.at("n_episodes").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.mean_accuracy = j.at("mean_accuracy").get<double>();
    r.ci95_halfwidth = j.at("ci95_halfwidth").get<double>();
    r.per_episode_accuracy = j.at("per_episode_accuracy").get<std::vector<double>>();
    return r;
}

// ---------------------------------------------------------------------------
// from_json

namespace detail {

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::config, where + "." + key + ": " + e.what());
    }
}

}  // namespace detail

inline SynthConfig synth_from_json(const json& j) {
    using detail::get;
    const std::string w = "dataset.synth";
    SynthConfig s;
    s.num_base_classes = get<int>(j, "num_base_classes", w);
    s.num_val_classes = get<int>(j, "num_val_classes", w);
    s.num_novel_classes = get<int>(j, "num_novel_classes", w);
    s.examples_per_class = get<int>(j, "examples_per_class", w);
    const auto shape = get<std::vector<int>>(j, "image_shape", w);
    if (shape.size() != 3) throw Error(ErrorKind::config, w + ".image_shape needs [height, width, channels]");
    s.image = {shape[0], shape[1], shape[2]};
    s.latent_dim = get<int>(j, "latent_dim", w);
    s.sigma_between = get<double>(j, "sigma_between", w);
    s.sigma_within = get<double>(j, "sigma_within", w);
    s.pixel_noise = get<double>(j, "pixel_noise", w);
    s.embedding_dim = get<int>(j, "embedding_dim", w);
    s.descriptions_per_class = get<int>(j, "descriptions_per_class", w);
    s.informativeness = get<double>(j, "informativeness", w);
    const auto kind = get<std::string>(j, "description_kind", w);
    if (kind != "text" && kind != "embedding")
        throw Error(ErrorKind::config, w + ".description_kind must be 'text' or 'embedding'");
    s.description_kind = kind == "text" ? DescriptionKind::text : DescriptionKind::embedding;
    s.tokens_per_description = get<int>(j, "tokens_per_description", w);
    s.attributes_per_class = get<int>(j, "attributes_per_class", w);
    s.noise_vocabulary = get<int>(j, "noise_vocabulary", w);
    return s;
}

inline ExperimentConfig experiment_from_json(const json& j) {
    using detail::get;
    ExperimentConfig c;
    c.seed = get<std::uint64_t>(j, "seed", "");
    c.output_dir = get<std::string>(j, "output_dir", "");
    c.manifest = get<std::string>(j.at("dataset"), "manifest", "dataset");
    c.synth = synth_from_json(j.at("dataset").at("synth"));
    c.descriptions = get<std::string>(j.at("descriptions"), "path", "descriptions");

    const json& e = j.at("encoder");
    c.train.encoder.architecture = parse_architecture(get<std::string>(e, "architecture", "encoder"));
    c.train.encoder.output_dim = get<int>(e, "output_dim", "encoder");
    c.train.encoder.hidden = get<std::vector<int>>(e, "hidden", "encoder");
    c.train.encoder.conv_width = get<int>(e, "conv_width", "encoder");

    const json& sem = j.at("semantic");
    c.train.semantic.token_dim = get<int>(sem, "token_dim", "semantic");
    c.train.semantic.seed = get<std::uint64_t>(sem, "seed", "semantic");
    c.train.semantic.projection = get<std::string>(sem, "projection", "semantic");
    if (c.train.semantic.projection != "frozen")
        throw Error(ErrorKind::config, "semantic.projection: only 'frozen' is supported");

    const json& s1 = j.at("train").at("stage1");
    const std::string w1 = "train.stage1";
    if (get<std::string>(s1, "optimizer", w1) != "sgd") throw Error(ErrorKind::config, w1 + ".optimizer must be 'sgd'");
    auto& t1 = c.train.stage1;
    t1.enabled = get<bool>(s1, "enabled", w1);
    t1.lr = get<double>(s1, "lr", w1);
    t1.momentum = get<double>(s1, "momentum", w1);
    t1.weight_decay = get<double>(s1, "weight_decay", w1);
    t1.epochs = get<int>(s1, "epochs", w1);
    t1.batch_size = get<int>(s1, "batch_size", w1);
    t1.decay_epochs = get<std::vector<int>>(s1, "decay_epochs", w1);
    t1.decay_factor = get<double>(s1, "decay_factor", w1);

    const json& s2 = j.at("train").at("stage2");
    const std::string w2 = "train.stage2";
    if (get<std::string>(s2, "optimizer", w2) != "adam") throw Error(ErrorKind::config, w2 + ".optimizer must be 'adam'");
    auto& t2 = c.train.stage2;
    t2.lr = get<double>(s2, "lr", w2);
    t2.epochs = get<int>(s2, "epochs", w2);
    t2.batches_per_epoch = get<int>(s2, "batches_per_epoch", w2);
    t2.tasks_per_batch = get<int>(s2, "tasks_per_batch", w2);
    t2.episode = {get<int>(s2, "n_way", w2), get<int>(s2, "k_shot", w2), get<int>(s2, "q_per_class", w2)};
    t2.use_vs_alignment = get<bool>(s2, "use_vs_alignment", w2);
    t2.select_on_val = get<bool>(s2, "select_on_val", w2);
    t2.val_episodes = get<int>(s2, "val_episodes", w2);
    const json& o = s2.at("objective");
    t2.objective.lambda_vs = get<double>(o, "lambda_vs", w2 + ".objective");
    t2.objective.tau_cls_init = get<double>(o, "tau_cls_init", w2 + ".objective");
    t2.objective.tau_vs = get<double>(o, "tau_vs", w2 + ".objective");
    t2.objective.norm_epsilon = get<double>(o, "norm_epsilon", w2 + ".objective");

    const json& ev = j.at("eval");
    const auto split = parse_split(get<std::string>(ev, "split", "eval"));
    if (!split || *split == Split::base) throw Error(ErrorKind::config, "eval.split must be 'novel' or 'val'");
    c.eval.split = *split;
    c.eval.shape = {get<int>(ev, "n_way", "eval"), get<int>(ev, "k_shot", "eval"), get<int>(ev, "q_per_class", "eval")};
    c.eval.n_episodes = get<std::size_t>(ev, "episodes", "eval");
    c.eval.seed = get<std::uint64_t>(ev, "seed", "eval");

    for (const auto& cond : j.at("compare").at("conditions")) {
        ConditionSpec cs;
        cs.label = get<std::string>(cond, "label", "compare.conditions[]");
        if (cond.contains("overrides")) cs.overrides = cond.at("overrides");
        if (!cs.overrides.is_object())
            throw Error(ErrorKind::config, "compare.conditions[].overrides must be an object of dotted keys");
        c.conditions.push_back(std::move(cs));
    }

    c.train.seed = c.seed;
    c.train.validate();
    c.synth.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Merging and overrides

namespace detail {

/// Recursively applies `patch` onto `base`. Objects merge key by key and
/// every key must already exist in `base`; any other value replaces.
inline void merge_strict(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object() || !base.is_object()) {
        base = patch;
        return;
    }
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key_path = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw Error(ErrorKind::config, "unknown config key '" + key_path + "'");
        merge_strict(base[it.key()], it.value(), key_path);
    }
}

/// Parses an override value as JSON, falling back to a plain string.
inline json parse_override_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const nlohmann::json::exception&) {
        return text;
    }
}

}  // namespace detail

/// Sets the value at a dotted path; the path must exist.
inline void apply_override(json& cfg, const std::string& dotted, const json& value) {
    json* node = &cfg;
    std::size_t start = 0;
    while (true) {
        const auto dot = dotted.find('.', start);
        const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(key))
            throw Error(ErrorKind::config, "unknown config key '" + dotted + "'");
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    if (node->is_object() && !value.is_object())
        throw Error(ErrorKind::config, "config key '" + dotted + "' names a section, not a value");
    *node = value;
}

/// "key=value" -> apply_override.
inline void apply_override(json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw Error(ErrorKind::config, "override '" + assignment + "' is not of the form key=value");
    apply_override(cfg, assignment.substr(0, eq), detail::parse_override_value(assignment.substr(eq + 1)));
}

/// Defaults <- file (if given) <- overrides. An empty or absent file yields
/// the desk profile.
inline json resolve_config_json(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    json cfg = to_json(ExperimentConfig::desk_profile());
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw Error(ErrorKind::io, "cannot open config " + file.string());
        std::stringstream ss;
        ss << in.rdbuf();
        const std::string text = ss.str();
        if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
            json user;
            try {
                user = json::parse(text);
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::config, file.string() + ": " + e.what());
            }
            detail::merge_strict(cfg, user, "");
        }
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    return cfg;
}

inline ExperimentConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
    return experiment_from_json(resolve_config_json(file, overrides));
}

/// Train config of one comparison condition: the experiment's config with
/// the condition's overrides applied.
inline TrainConfig condition_train_config(const ExperimentConfig& base, const ConditionSpec& cond) {
    json j = to_json(base);
    for (auto it = cond.overrides.begin(); it != cond.overrides.end(); ++it) apply_override(j, it.key(), it.value());
    return experiment_from_json(j).train;
}

}  // namespace vsalign
