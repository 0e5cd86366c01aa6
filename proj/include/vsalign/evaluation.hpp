#pragma once

// Episodic few-shot evaluation: nearest-prototype (cosine) classification of
// query examples, mean accuracy and a normal-approximation 95% interval.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "datasets.hpp"
#include "encoders.hpp"
#include "episodes.hpp"
#include "objectives.hpp"

namespace vsalign {

struct EvalReport {
    EpisodeShape shape;
    std::size_t n_episodes = 0;
    std::vector<double> per_episode_accuracy;
    double mean_accuracy = 0;
    double ci95_halfwidth = 0;
    std::uint64_t seed = 0;
    std::string split = "novel";
};

inline double sample_mean(const std::vector<double>& xs) {
    if (xs.empty()) throw Error(ErrorKind::validation, "mean of an empty sample");
    double s = 0;
    for (double x : xs) s += x;
    return s / double(xs.size());
}

/// Standard deviation with the n-1 denominator; 0 for a single observation.
inline double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = sample_mean(xs);
    double ss = 0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / double(xs.size() - 1));
}

/// 1.96 * s / sqrt(n)
inline double ci95_halfwidth(const std::vector<double>& xs) {
    return 1.96 * sample_std(xs) / std::sqrt(double(xs.size()));
}

inline EvalReport summarize(std::vector<double> per_episode, EpisodeShape shape, std::uint64_t seed, Split split) {
    EvalReport r;
    r.shape = shape;
    r.n_episodes = per_episode.size();
    r.mean_accuracy = sample_mean(per_episode);
    r.ci95_halfwidth = ci95_halfwidth(per_episode);
    r.per_episode_accuracy = std::move(per_episode);
    r.seed = seed;
    r.split = std::string(to_string(split));
    return r;
}

/// Fraction of queries whose most cosine-similar prototype is their class.
inline double episode_accuracy(const Matrix& support_embeddings, const Matrix& query_embeddings,
                               const std::vector<int>& query_labels, Index n_way, Index k_shot,
                               double norm_epsilon = 0.0) {
    const Matrix protos = class_prototypes(support_embeddings, n_way, k_shot);
    const Matrix cos = cosine_matrix<double>(query_embeddings, protos, norm_epsilon);
    Index correct = 0;
    for (Index j = 0; j < cos.rows(); ++j) {
        Index arg;
        cos.row(j).maxCoeff(&arg);
        correct += arg == query_labels[std::size_t(j)];
    }
    return double(correct) / double(cos.rows());
}

/// Evaluates any embedding function `embed(const Matrix& images) -> Matrix`
/// on `n_episodes` episodes drawn from `split` under `seed`. No state is
/// modified; results are in episode-index order.
template <typename Embed>
EvalReport evaluate_embedder(Embed&& embed, const Dataset& dataset, Split split, EpisodeShape shape,
                             std::size_t n_episodes, std::uint64_t seed, double norm_epsilon = 0.0) {
    if (n_episodes < 1) throw Error(ErrorKind::config, "evaluation needs at least one episode");
    const EpisodeStream stream = episode_stream(dataset, split, shape, n_episodes, seed);
    std::vector<double> acc;
    acc.reserve(n_episodes);
    for (const Episode& ep : stream) {
        const auto support_idx = ep.support_flat();
        const Matrix support = embed(dataset.gather(support_idx));
        const Matrix query = embed(dataset.gather(ep.query));
        acc.push_back(episode_accuracy(support, query, ep.query_labels, shape.n_way, shape.k_shot, norm_epsilon));
    }
    return summarize(std::move(acc), shape, seed, split);
}

inline EvalReport evaluate(const VisualEncoder& encoder, const Dataset& dataset, Split split, EpisodeShape shape,
                           std::size_t n_episodes, std::uint64_t seed) {
    return evaluate_embedder([&](const Matrix& x) { return encoder.forward(x); }, dataset, split, shape, n_episodes,
                             seed);
}

}  // namespace vsalign
