#pragma once

// Trains several conditions end to end and evaluates them on one shared
// episode set, so per-episode accuracies can be differenced pairwise.

#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "evaluation.hpp"
#include "training.hpp"

namespace vsalign {

struct EvalSpec {
    Split split = Split::novel;
    EpisodeShape shape{5, 1, 15};
    std::size_t n_episodes = 600;
    std::uint64_t seed = 1000;
};

struct Condition {
    std::string label;
    TrainConfig config;
};

struct PairedDelta {
    std::string minuend;     // later condition
    std::string subtrahend;  // earlier condition
    double mean = 0;         // mean of per-episode accuracy differences
    double paired_se = 0;    // sample std of the differences / sqrt(n)
    std::size_t n = 0;
};

struct ComparisonTable {
    EvalSpec spec;
    std::vector<std::string> labels;
    std::vector<EvalReport> reports;
    std::vector<PairedDelta> deltas;
    std::vector<TrainState> states;  // filled when requested

    std::string render() const {
        std::ostringstream os;
        char line[256];
        std::snprintf(line, sizeof line, "%-28s %10s %10s %9s\n", "condition", "mean_acc", "ci95", "episodes");
        os << line;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            std::snprintf(line, sizeof line, "%-28s %10.4f %10.4f %9zu\n", labels[i].c_str(),
                          reports[i].mean_accuracy, reports[i].ci95_halfwidth, reports[i].n_episodes);
            os << line;
        }
        if (!deltas.empty()) {
            std::snprintf(line, sizeof line, "\n%-40s %10s %10s\n", "paired delta", "mean", "paired_se");
            os << line;
            for (const auto& d : deltas) {
                const std::string name = d.minuend + " - " + d.subtrahend;
                std::snprintf(line, sizeof line, "%-40s %+10.4f %10.4f\n", name.c_str(), d.mean, d.paired_se);
                os << line;
            }
        }
        return os.str();
    }

    /// One self-contained JSON record per condition and per delta.
    std::vector<nlohmann::ordered_json> records() const {
        std::vector<nlohmann::ordered_json> out;
        for (std::size_t i = 0; i < labels.size(); ++i)
            out.push_back({{"type", "condition"},
                           {"label", labels[i]},
                           {"mean_accuracy", reports[i].mean_accuracy},
                           {"ci95_halfwidth", reports[i].ci95_halfwidth},
                           {"n_episodes", reports[i].n_episodes},
                           {"eval_seed", spec.seed},
                           {"pairing", "shared episode seeds"}});
        for (const auto& d : deltas)
            out.push_back({{"type", "delta"},
                           {"minuend", d.minuend},
                           {"subtrahend", d.subtrahend},
                           {"mean", d.mean},
                           {"paired_se", d.paired_se},
                           {"n_episodes", d.n}});
        return out;
    }
};

inline PairedDelta paired_delta(const EvalReport& later, const EvalReport& earlier, std::string later_label,
                                std::string earlier_label) {
    if (later.per_episode_accuracy.size() != earlier.per_episode_accuracy.size())
        throw Error(ErrorKind::validation, "paired delta needs equal episode counts");
    std::vector<double> d(later.per_episode_accuracy.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = later.per_episode_accuracy[i] - earlier.per_episode_accuracy[i];
    return {std::move(later_label), std::move(earlier_label), sample_mean(d),
            sample_std(d) / std::sqrt(double(d.size())), d.size()};
}

namespace detail {

/// Conditions whose classification stage is configured identically share it.
inline std::string stage1_key(const TrainConfig& c) {
    std::ostringstream os;
    os.precision(17);
    const auto& s = c.stage1;
    const auto& e = c.encoder;
    os << s.enabled << '|' << s.lr << '|' << s.momentum << '|' << s.weight_decay << '|' << s.epochs << '|'
       << s.batch_size << '|' << s.decay_factor << '|';
    for (int d : s.decay_epochs) os << d << ',';
    os << '|' << int(e.architecture) << '|' << e.input.height << 'x' << e.input.width << 'x' << e.input.channels
       << '|' << e.output_dim << '|' << e.conv_width << '|';
    for (int h : e.hidden) os << h << ',';
    os << '|' << c.seed << '|' << c.stage2.objective.tau_cls_init;
    return os.str();
}

}  // namespace detail

struct CompareOptions {
    bool keep_states = false;
    std::ostream* metrics = nullptr;
};

/// Trains every condition (classification stage, then meta stage) and
/// evaluates all of them on the episodes of `spec`. Deltas are reported for
/// every pair (j, i) with j > i as condition j minus condition i.
inline ComparisonTable compare_conditions(const std::vector<Condition>& conditions, const Dataset& dataset,
                                          const DescriptionCorpus* corpus, const EvalSpec& spec,
                                          const CompareOptions& opt = {}) {
    if (conditions.size() < 2) throw Error(ErrorKind::config, "comparison needs at least two conditions");
    ComparisonTable table;
    table.spec = spec;
    std::map<std::string, TrainState> stage1_cache;
    for (const auto& cond : conditions) {
        TrainConfig cfg = cond.config;
        cfg.encoder.input = dataset.shape();
        const std::string key = detail::stage1_key(cfg);
        RunOptions run;
        run.metrics = opt.metrics;
        auto it = stage1_cache.find(key);
        if (it == stage1_cache.end())
            it = stage1_cache.emplace(key, train_classification_stage(dataset, cfg, run)).first;
        TrainState state = train_meta_stage(it->second, dataset, corpus, cfg, run);
        table.labels.push_back(cond.label);
        table.reports.push_back(evaluate(state.encoder, dataset, spec.split, spec.shape, spec.n_episodes, spec.seed));
        if (opt.keep_states) table.states.push_back(std::move(state));
    }
    for (std::size_t j = 1; j < conditions.size(); ++j)
        for (std::size_t i = 0; i < j; ++i)
            table.deltas.push_back(paired_delta(table.reports[j], table.reports[i], table.labels[j], table.labels[i]));
    return table;
}

}  // namespace vsalign
