#pragma once

// Two-stage pipeline: supervised whole-classifier training on the base
// classes, then episodic training of the bare embedding with the cosine
// prototype classifier and, optionally, the visual-semantic alignment term.

#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "datasets.hpp"
#include "encoders.hpp"
#include "episodes.hpp"
#include "evaluation.hpp"
#include "objectives.hpp"
#include "optim.hpp"
#include "rng.hpp"

namespace vsalign {

struct ClassificationStageConfig {
    bool enabled = true;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    int epochs = 100;
    int batch_size = 64;
    std::vector<int> decay_epochs{60, 80};
    double decay_factor = 0.1;

    StepSchedule schedule() const { return {lr, decay_epochs, decay_factor}; }
};

struct MetaStageConfig {
    double lr = 0.001;
    int epochs = 600;
    int batches_per_epoch = 200;
    int tasks_per_batch = 4;
    EpisodeShape episode{5, 1, 15};
    bool use_vs_alignment = true;
    ObjectiveConfig objective;
    /// Keep the encoder with the best validation accuracy (checked each epoch).
    bool select_on_val = false;
    int val_episodes = 100;
};

struct TrainConfig {
    ClassificationStageConfig stage1;
    MetaStageConfig stage2;
    EncoderConfig encoder;
    SemanticConfig semantic;
    std::uint64_t seed = 0;

    void validate() const {
        if (stage1.enabled) {
            if (stage1.epochs < 0 || stage1.batch_size < 1 || !(stage1.lr > 0))
                throw Error(ErrorKind::config, "stage1 needs epochs >= 0, batch_size >= 1, lr > 0");
            for (std::size_t i = 0; i < stage1.decay_epochs.size(); ++i) {
                if (i > 0 && stage1.decay_epochs[i] <= stage1.decay_epochs[i - 1])
                    throw Error(ErrorKind::config, "stage1.decay_epochs must be strictly increasing");
                if (stage1.decay_epochs[i] >= stage1.epochs && stage1.epochs > 0)
                    throw Error(ErrorKind::config, "stage1.decay_epochs must all be < stage1.epochs");
            }
        }
        if (stage2.epochs < 0 || stage2.batches_per_epoch < 1 || stage2.tasks_per_batch < 1 || !(stage2.lr > 0))
            throw Error(ErrorKind::config, "stage2 needs epochs >= 0, batches_per_epoch >= 1, tasks_per_batch >= 1, lr > 0");
        stage2.objective.validate();
    }

    /// Published optimizer settings and schedule lengths.
    static TrainConfig full_profile() { return {}; }

    /// Small epochs and widths for single-core runs in minutes.
    static TrainConfig desk_profile() {
        TrainConfig c;
        c.stage1.epochs = 10;
        c.stage1.decay_epochs = {6, 8};
        c.stage2.epochs = 40;
        c.stage2.batches_per_epoch = 20;
        return c;
    }
};

struct MetricRecord {
    std::string stage;  // "classification" | "meta"
    std::string kind;   // "step" | "epoch"
    int epoch = 0;
    long long step = 0;
    double class_loss = 0;
    double vs_loss = 0;
    double total = 0;
    double accuracy = 0;
    double lr = 0;
    double tau_cls = 0;

    nlohmann::ordered_json to_json() const {
        return {{"stage", stage}, {"kind", kind},           {"epoch", epoch}, {"step", step},
                {"class_loss", class_loss}, {"vs_loss", vs_loss}, {"total", total},
                {"accuracy", accuracy}, {"lr", lr}, {"tau_cls", tau_cls}};
    }
    bool operator==(const MetricRecord&) const = default;
};

/// Everything needed to continue training bit for bit.
struct TrainState {
    std::string stage = "init";  // "init" | "classification" | "meta"
    VisualEncoder encoder;
    // Linear head [weight (D x C, row-major) | bias (C)], present only while
    // the classification stage is in progress.
    Vector head;
    std::vector<int> classifier_classes;
    double log_tau_cls = 0;
    Sgd sgd_encoder, sgd_head;
    Adam adam_encoder, adam_tau;
    int epoch = 0;       // completed epochs of the current stage
    long long step = 0;  // optimizer steps in the current stage
    std::string rng_state;
    std::vector<MetricRecord> history;
    Vector best_params;  // validation-based selection
    double best_val_accuracy = -1;

    double tau_cls() const { return std::exp(log_tau_cls); }
    bool has_head() const { return head.size() > 0; }

    Index head_classes() const { return Index(classifier_classes.size()); }
    Eigen::Map<const Matrix> head_weight() const {
        return {head.data(), encoder.output_dim(), head_classes()};
    }
    Eigen::Map<const Eigen::RowVectorXd> head_bias() const {
        return {head.data() + encoder.output_dim() * head_classes(), head_classes()};
    }
};

inline TrainState init_train_state(const TrainConfig& cfg) {
    TrainState s;
    s.encoder = init_visual_encoder(cfg.encoder, derive_seed(cfg.seed, 0));
    s.log_tau_cls = std::log(cfg.stage2.objective.tau_cls_init);
    s.rng_state = rng_state(Rng(derive_seed(cfg.seed, 1)));
    return s;
}

struct RunOptions {
    std::ostream* metrics = nullptr;  // line-delimited JSON records
    int stop_after_epoch = -1;        // stop once this many epochs are complete (-1: run to the end)
    std::string last_checkpoint;      // reported if training diverges
    std::function<void(const TrainState&)> on_epoch_end;
};

namespace detail {

inline void emit(TrainState& s, const RunOptions& opt, MetricRecord r) {
    if (opt.metrics) *opt.metrics << r.to_json().dump() << '\n';
    s.history.push_back(std::move(r));
}

inline Error divergence_error(const std::string& what, const TrainState& s, const RunOptions& opt) {
    return Error(ErrorKind::divergence, what + " at " + s.stage + " epoch " + std::to_string(s.epoch) + " step " +
                                            std::to_string(s.step) + "; last good checkpoint: " +
                                            (opt.last_checkpoint.empty() ? "none" : opt.last_checkpoint));
}

inline void check_finite_loss(double loss, const TrainState& s, const RunOptions& opt) {
    if (!std::isfinite(loss)) throw divergence_error("non-finite loss", s, opt);
}

inline Matrix checked_forward(const TrainState& s, const Matrix& x, ForwardTape& tape, const RunOptions& opt) {
    try {
        return s.encoder.forward(x, tape);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::divergence) throw;
        throw divergence_error(e.what(), s, opt);
    }
}

}  // namespace detail

/// Supervised training of encoder + linear head on all base-class examples
/// with SGD and the step schedule. When the final epoch completes the head is
/// dropped and only the embedding remains.
inline TrainState train_classification_stage(TrainState state, const Dataset& dataset, const TrainConfig& cfg,
                                             const RunOptions& opt = {}) {
    cfg.validate();
    const auto& s1 = cfg.stage1;
    const auto& base = dataset.split().base_classes;
    if (base.empty()) throw Error(ErrorKind::validation, "classification stage needs base classes");
    if (state.stage == "meta") throw Error(ErrorKind::prerequisite, "state has already entered the meta stage");
    if (!s1.enabled || s1.epochs == 0) {
        state.stage = "classification";
        state.epoch = 0;
        return state;
    }

    const Index D = state.encoder.output_dim();
    if (state.stage == "init") {
        state.stage = "classification";
        state.epoch = 0;
        state.step = 0;
        state.classifier_classes.assign(base.begin(), base.end());
        const Index C = Index(base.size());
        Rng head_rng(derive_seed(cfg.seed, 3));
        state.head = Vector::Zero(D * C + C);
        for (Index i = 0; i < D * C; ++i) state.head[i] = standard_normal(head_rng) / std::sqrt(double(D));
        state.sgd_encoder = Sgd{s1.momentum, s1.weight_decay, {}};
        state.sgd_head = Sgd{s1.momentum, s1.weight_decay, {}};
    }
    if (state.epoch >= s1.epochs) return state;
    if (!state.has_head()) throw Error(ErrorKind::prerequisite, "classification stage state has no linear head");

    std::map<int, int> label_of;
    for (std::size_t i = 0; i < state.classifier_classes.size(); ++i) label_of[state.classifier_classes[i]] = int(i);
    const std::vector<std::size_t> examples = dataset.examples_in(Split::base);
    const StepSchedule schedule = s1.schedule();
    Rng rng = rng_from_state(state.rng_state);

    const int last = opt.stop_after_epoch >= 0 ? std::min(opt.stop_after_epoch, s1.epochs) : s1.epochs;
    while (state.epoch < last) {
        const double lr = schedule.lr_at(state.epoch);
        std::vector<std::size_t> order(examples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle(rng, order);

        double loss_sum = 0, correct = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(s1.batch_size)) {
            const std::size_t end = std::min(order.size(), start + std::size_t(s1.batch_size));
            std::vector<std::size_t> idx;
            std::vector<int> y;
            for (std::size_t i = start; i < end; ++i) {
                idx.push_back(examples[order[i]]);
                y.push_back(label_of.at(dataset.labels()[idx.back()]));
            }
            const Index B = Index(idx.size());
            ForwardTape tape;
            const Matrix emb = detail::checked_forward(state, dataset.gather(idx), tape, opt);
            Matrix logits = emb * state.head_weight();
            logits.rowwise() += state.head_bias();

            double loss = 0;
            Index hits = 0;
            Matrix g_logits(B, logits.cols());
            for (Index r = 0; r < B; ++r) {
                const Vector z = logits.row(r).transpose();
                loss += cross_entropy<double>(z, y[std::size_t(r)]);
                Index arg;
                z.maxCoeff(&arg);
                hits += arg == y[std::size_t(r)];
                g_logits.row(r) = softmax<double>(z).transpose();
                g_logits(r, y[std::size_t(r)]) -= 1;
            }
            loss /= double(B);
            g_logits /= double(B);
            detail::check_finite_loss(loss, state, opt);

            const Index C = state.head_classes();
            Vector g_head(state.head.size());
            Eigen::Map<Matrix>(g_head.data(), D, C) = emb.transpose() * g_logits;
            g_head.tail(C) = g_logits.colwise().sum().transpose();
            const Matrix g_emb = g_logits * state.head_weight().transpose();
            Vector g_enc = Vector::Zero(state.encoder.num_params());
            state.encoder.backward(tape, g_emb, g_enc);

            state.sgd_encoder.step(state.encoder.params(), g_enc, lr);
            state.sgd_head.step(state.head, g_head, lr);
            ++state.step;

            loss_sum += loss * double(B);
            correct += double(hits);
            detail::emit(state, opt,
                         {"classification", "step", state.epoch, state.step, loss, 0.0, loss,
                          double(hits) / double(B), lr, state.tau_cls()});
        }
        detail::emit(state, opt,
                     {"classification", "epoch", state.epoch, state.step, loss_sum / double(examples.size()), 0.0,
                      loss_sum / double(examples.size()), correct / double(examples.size()), lr, state.tau_cls()});
        ++state.epoch;
        state.rng_state = rng_state(rng);
        if (opt.on_epoch_end) opt.on_epoch_end(state);
    }
    if (state.epoch >= s1.epochs) {
        state.head.resize(0);
        state.classifier_classes.clear();
        state.sgd_head = Sgd{};
    }
    return state;
}

/// Runs the classification stage from a fresh state seeded by cfg.seed.
inline TrainState train_classification_stage(const Dataset& dataset, const TrainConfig& cfg,
                                             const RunOptions& opt = {}) {
    return train_classification_stage(init_train_state(cfg), dataset, cfg, opt);
}

/// Semantic prototype (mean encoded description) of every class in the corpus.
inline std::map<int, Vector> semantic_prototypes(const SemanticEncoder& g, const DescriptionCorpus& corpus) {
    std::map<int, Vector> out;
    for (auto& [c, rows] : g.encode_corpus(corpus)) out.emplace(c, semantic_prototype(rows, rows.rows()));
    return out;
}

/// Seed of the stage-2 training episode with global index `i`.
inline std::uint64_t meta_episode_seed(std::uint64_t seed, std::uint64_t i) {
    return derive_seed(derive_seed(seed, 2), i);
}

/// Episodic training. Each optimizer step averages the per-episode totals of
/// tasks_per_batch episodes; Adam updates the encoder and log(tau_cls).
/// `semantic` may be null only when alignment is disabled.
inline TrainState train_meta_stage(TrainState state, const Dataset& dataset, const DescriptionCorpus* corpus,
                                   const SemanticEncoder* semantic, const TrainConfig& cfg,
                                   const RunOptions& opt = {}) {
    cfg.validate();
    const auto& s2 = cfg.stage2;
    if (state.stage == "init" || state.has_head())
        throw Error(ErrorKind::prerequisite, "meta stage needs a completed classification stage");
    if (state.stage == "classification") {
        state.stage = "meta";
        state.epoch = 0;
        state.step = 0;
        state.adam_encoder = Adam{};
        state.adam_tau = Adam{};
        state.best_params.resize(0);
        state.best_val_accuracy = -1;
    }
    if (state.epoch >= s2.epochs) return state;

    const Index D = state.encoder.output_dim();
    std::map<int, Vector> protos;
    if (s2.use_vs_alignment) {
        if (!corpus || !semantic)
            throw Error(ErrorKind::prerequisite, "alignment enabled but no description corpus given");
        if (semantic->output_dim() != D)
            throw Error(ErrorKind::shape, "semantic encoder output dim " + std::to_string(semantic->output_dim()) +
                                              " differs from visual output dim " + std::to_string(D));
        corpus->check_covers(dataset.split().base_classes);
        protos = semantic_prototypes(*semantic, *corpus);
    }

    const auto& base = dataset.split().base_classes;
    const int T = s2.tasks_per_batch;
    const int last = opt.stop_after_epoch >= 0 ? std::min(opt.stop_after_epoch, s2.epochs) : s2.epochs;
    while (state.epoch < last) {
        MetricRecord epoch_rec{"meta", "epoch", state.epoch, 0, 0, 0, 0, 0, s2.lr, 0};
        for (int b = 0; b < s2.batches_per_epoch; ++b) {
            Vector g_enc = Vector::Zero(state.encoder.num_params());
            double g_tau = 0;
            LossBreakdown mean;
            const double tau = state.tau_cls();
            for (int t = 0; t < T; ++t) {
                Rng rng(meta_episode_seed(cfg.seed, std::uint64_t(state.step) * std::uint64_t(T) + std::uint64_t(t)));
                const Episode ep = sample_episode(base, dataset, s2.episode, rng);
                std::vector<std::size_t> idx = ep.support_flat();
                const Index n_support = Index(idx.size());
                idx.insert(idx.end(), ep.query.begin(), ep.query.end());

                ForwardTape tape;
                const Matrix emb = detail::checked_forward(state, dataset.gather(idx), tape, opt);
                const Matrix support = emb.topRows(n_support);
                const Matrix query = emb.bottomRows(emb.rows() - n_support);

                Matrix sem;
                if (s2.use_vs_alignment) {
                    sem.resize(s2.episode.n_way, D);
                    for (int i = 0; i < s2.episode.n_way; ++i) {
                        auto it = protos.find(ep.class_ids[std::size_t(i)]);
                        if (it == protos.end())
                            throw Error(ErrorKind::validation,
                                        "class " + std::to_string(ep.class_ids[std::size_t(i)]) + " has no descriptions");
                        sem.row(i) = it->second.transpose();
                    }
                }
                EpisodeBatch batch{&support, &query, &ep.query_labels, s2.episode.n_way, s2.episode.k_shot,
                                   s2.use_vs_alignment ? &sem : nullptr};
                EpisodeGradients grads;
                const LossBreakdown l = episode_objective(batch, tau, s2.objective, &grads);
                detail::check_finite_loss(l.total, state, opt);

                Matrix g_emb(emb.rows(), D);
                g_emb.topRows(n_support) = grads.support / double(T);
                g_emb.bottomRows(emb.rows() - n_support) = grads.query / double(T);
                state.encoder.backward(tape, g_emb, g_enc);
                g_tau += grads.tau_cls / double(T);
                mean.class_loss += l.class_loss / double(T);
                mean.vs_loss += l.vs_loss / double(T);
                mean.total += l.total / double(T);
                mean.accuracy += l.accuracy / double(T);
            }
            state.adam_encoder.step(state.encoder.params(), g_enc, s2.lr);
            Vector log_tau(1), g_log_tau(1);
            log_tau[0] = state.log_tau_cls;
            g_log_tau[0] = g_tau * tau;  // chain rule through tau = exp(log_tau)
            state.adam_tau.step(log_tau, g_log_tau, s2.lr);
            state.log_tau_cls = log_tau[0];
            ++state.step;

            detail::emit(state, opt, {"meta", "step", state.epoch, state.step, mean.class_loss, mean.vs_loss,
                                      mean.total, mean.accuracy, s2.lr, state.tau_cls()});
            epoch_rec.class_loss += mean.class_loss / s2.batches_per_epoch;
            epoch_rec.vs_loss += mean.vs_loss / s2.batches_per_epoch;
            epoch_rec.total += mean.total / s2.batches_per_epoch;
            epoch_rec.accuracy += mean.accuracy / s2.batches_per_epoch;
        }
        epoch_rec.step = state.step;
        epoch_rec.tau_cls = state.tau_cls();
        detail::emit(state, opt, epoch_rec);
        ++state.epoch;

        if (s2.select_on_val && !dataset.split().val_classes.empty()) {
            const auto report = evaluate(state.encoder, dataset, Split::val, s2.episode,
                                         std::size_t(s2.val_episodes), derive_seed(cfg.seed, 4));
            if (report.mean_accuracy > state.best_val_accuracy) {
                state.best_val_accuracy = report.mean_accuracy;
                state.best_params = state.encoder.params();
            }
        }
        if (opt.on_epoch_end) opt.on_epoch_end(state);
    }
    if (state.epoch >= s2.epochs && s2.select_on_val && state.best_params.size() == state.encoder.num_params())
        state.encoder.params() = state.best_params;
    return state;
}

/// Builds the frozen semantic encoder from the corpus when alignment is on.
inline TrainState train_meta_stage(TrainState state, const Dataset& dataset, const DescriptionCorpus* corpus,
                                   const TrainConfig& cfg, const RunOptions& opt = {}) {
    if (!cfg.stage2.use_vs_alignment) return train_meta_stage(std::move(state), dataset, corpus, nullptr, cfg, opt);
    if (!corpus) throw Error(ErrorKind::prerequisite, "alignment enabled but no description corpus given");
    const SemanticEncoder g = SemanticEncoder::for_corpus(*corpus, state.encoder.output_dim(), cfg.semantic);
    return train_meta_stage(std::move(state), dataset, corpus, &g, cfg, opt);
}

}  // namespace vsalign
