#pragma once

#include <cstdint>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include "datasets.hpp"
#include "rng.hpp"

namespace vsalign {

struct EpisodeShape {
    int n_way = 5;
    int k_shot = 1;
    int q_per_class = 15;

    bool operator==(const EpisodeShape&) const = default;
};

/// One N-way K-shot task. Examples are dataset indices; episode-local label
/// i stands for class_ids[i].
struct Episode {
    std::vector<int> class_ids;
    std::vector<std::vector<std::size_t>> support;  // [n_way][k_shot]
    std::vector<std::size_t> query;                 // class-major, q_per_class each
    std::vector<int> query_labels;
    EpisodeShape shape;

    /// Support indices flattened class-major (class 0's K shots first).
    std::vector<std::size_t> support_flat() const {
        std::vector<std::size_t> out;
        out.reserve(class_ids.size() * std::size_t(shape.k_shot));
        for (auto& s : support) out.insert(out.end(), s.begin(), s.end());
        return out;
    }

    bool operator==(const Episode&) const = default;
};

/// Samples N classes without replacement from `split_classes`, then K+Q
/// distinct examples per class: the first K go to support, the rest to query.
inline Episode sample_episode(const std::set<int>& split_classes, const Dataset& dataset, EpisodeShape shape,
                              Rng& rng) {
    if (shape.n_way < 1 || shape.k_shot < 1 || shape.q_per_class < 0)
        throw Error(ErrorKind::config, "episode needs n_way >= 1, k_shot >= 1, q_per_class >= 0");
    if (split_classes.size() < std::size_t(shape.n_way))
        throw Error(ErrorKind::validation, "split has " + std::to_string(split_classes.size()) +
                                               " classes, episode needs " + std::to_string(shape.n_way));
    const std::vector<int> pool(split_classes.begin(), split_classes.end());
    const std::size_t per_class = std::size_t(shape.k_shot + shape.q_per_class);

    Episode ep;
    ep.shape = shape;
    for (std::size_t pick : sample_without_replacement(rng, pool.size(), std::size_t(shape.n_way)))
        ep.class_ids.push_back(pool[pick]);
    ep.support.resize(ep.class_ids.size());
    for (std::size_t i = 0; i < ep.class_ids.size(); ++i) {
        const auto& members = dataset.examples_of(ep.class_ids[i]);
        if (members.size() < per_class)
            throw Error(ErrorKind::validation, "class " + std::to_string(ep.class_ids[i]) + " has " +
                                                   std::to_string(members.size()) + " examples, episode needs " +
                                                   std::to_string(per_class));
        const auto picks = sample_without_replacement(rng, members.size(), per_class);
        for (std::size_t j = 0; j < per_class; ++j) {
            if (j < std::size_t(shape.k_shot)) {
                ep.support[i].push_back(members[picks[j]]);
            } else {
                ep.query.push_back(members[picks[j]]);
                ep.query_labels.push_back(int(i));
            }
        }
    }
    return ep;
}

/// `count` episodes from one master seed. Episode i depends only on
/// (seed, i), so any element can be materialized on its own.
class EpisodeStream {
public:
    EpisodeStream(const Dataset& dataset, std::set<int> split_classes, EpisodeShape shape, std::size_t count,
                  std::uint64_t seed)
        : dataset_(&dataset), classes_(std::move(split_classes)), shape_(shape), count_(count), seed_(seed) {
        if (count_ < 1) throw Error(ErrorKind::config, "episode stream needs count >= 1");
    }

    std::uint64_t episode_seed(std::size_t i) const { return derive_seed(seed_, i); }

    Episode at(std::size_t i) const {
        Rng rng(episode_seed(i));
        return sample_episode(classes_, *dataset_, shape_, rng);
    }

    std::size_t size() const { return count_; }

    class iterator {
    public:
        using iterator_category = std::input_iterator_tag;
        using value_type = Episode;
        using difference_type = std::ptrdiff_t;

        iterator() = default;
        iterator(const EpisodeStream* s, std::size_t i) : stream_(s), i_(i) {}
        Episode operator*() const { return stream_->at(i_); }
        iterator& operator++() {
            ++i_;
            return *this;
        }
        iterator operator++(int) {
            auto t = *this;
            ++i_;
            return t;
        }
        bool operator==(const iterator& o) const { return i_ == o.i_; }

    private:
        const EpisodeStream* stream_ = nullptr;
        std::size_t i_ = 0;
    };

    iterator begin() const { return {this, 0}; }
    iterator end() const { return {this, count_}; }

private:
    const Dataset* dataset_;
    std::set<int> classes_;
    EpisodeShape shape_;
    std::size_t count_;
    std::uint64_t seed_;
};

inline EpisodeStream episode_stream(const Dataset& dataset, Split split, EpisodeShape shape, std::size_t count,
                                    std::uint64_t seed) {
    return EpisodeStream(dataset, dataset.split().classes(split), shape, count, seed);
}

}  // namespace vsalign
