#pragma once

// Prototype and loss math. Every function is pure; the episode objective
// also returns analytic gradients w.r.t. the embeddings and the classifier
// temperature.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "common.hpp"

namespace vsalign {

struct ObjectiveConfig {
    double lambda_vs = 2.5;
    double tau_cls_init = 10.0;  // classifier temperature, trained
    double tau_vs = 0.1;         // contrastive temperature, fixed
    /// 0: zero-norm vectors raise ErrorKind::degenerate. >0: norms are
    /// clamped from below at this value.
    double norm_epsilon = 0.0;

    void validate() const {
        if (!(lambda_vs >= 0)) throw Error(ErrorKind::config, "lambda_vs must be non-negative");
        if (!(tau_cls_init > 0)) throw Error(ErrorKind::config, "tau_cls must be positive");
        if (!(tau_vs > 0)) throw Error(ErrorKind::config, "tau_vs must be positive");
        if (!(norm_epsilon >= 0)) throw Error(ErrorKind::config, "norm_epsilon must be non-negative");
    }
};

struct LossBreakdown {
    double class_loss = 0;
    double vs_loss = 0;
    double total = 0;
    double accuracy = 0;
};

/// Visual and semantic prototypes, one row per episode class, same order.
struct PrototypeSet {
    Matrix visual;
    Matrix semantic;

    Index n_way() const { return visual.rows(); }
    Index dim() const { return visual.cols(); }

    void validate() const {
        if (visual.rows() != semantic.rows() || visual.cols() != semantic.cols())
            throw Error(ErrorKind::shape, "visual and semantic prototype sets differ in shape");
        if (!all_finite(visual) || !all_finite(semantic))
            throw Error(ErrorKind::validation, "prototype set holds non-finite entries");
    }
};

namespace detail {

template <typename Scalar>
Scalar safe_norm(Scalar n, double epsilon, const char* what) {
    if (epsilon > 0) return std::max(n, Scalar(epsilon));
    if (!(n > Scalar(0))) throw Error(ErrorKind::degenerate, std::string("zero-norm ") + what + " in cosine similarity");
    return n;
}

}  // namespace detail

template <typename DA, typename DB>
typename DA::Scalar cosine_similarity(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                                      double epsilon = 0.0) {
    using Scalar = typename DA::Scalar;
    if (a.size() != b.size()) throw Error(ErrorKind::shape, "cosine similarity of vectors with different lengths");
    const Scalar na = detail::safe_norm<Scalar>(a.norm(), epsilon, "vector");
    const Scalar nb = detail::safe_norm<Scalar>(b.norm(), epsilon, "vector");
    const Scalar c = a.dot(b) / (na * nb);
    return std::clamp(c, Scalar(-1), Scalar(1));
}

/// Row-wise mean of the K support embeddings of one class.
template <typename Derived>
VectorT<typename Derived::Scalar> visual_prototype(const Eigen::MatrixBase<Derived>& support_embeddings) {
    if (support_embeddings.rows() == 0) throw Error(ErrorKind::validation, "visual prototype of an empty support set");
    return support_embeddings.colwise().mean().transpose();
}

/// Mean of the d_c encoded descriptions of one class. Constant w.r.t. training.
template <typename Derived>
VectorT<typename Derived::Scalar> semantic_prototype(const Eigen::MatrixBase<Derived>& description_embeddings,
                                                     Index d_c) {
    if (d_c < 1 || description_embeddings.rows() == 0)
        throw Error(ErrorKind::validation, "semantic prototype needs at least one description");
    if (description_embeddings.rows() != d_c)
        throw Error(ErrorKind::shape, "semantic prototype: d_c does not match the number of descriptions");
    return description_embeddings.colwise().sum().transpose() / typename Derived::Scalar(d_c);
}

/// Class prototypes from class-major support rows (n_way blocks of k_shot).
inline Matrix class_prototypes(const Matrix& support_embeddings, Index n_way, Index k_shot) {
    if (support_embeddings.rows() != n_way * k_shot)
        throw Error(ErrorKind::shape, "support set does not hold n_way * k_shot embeddings");
    Matrix protos(n_way, support_embeddings.cols());
    for (Index c = 0; c < n_way; ++c)
        protos.row(c) = visual_prototype(support_embeddings.middleRows(c * k_shot, k_shot)).transpose();
    return protos;
}

/// Cosine similarity of every row of `a` with every row of `b`.
template <typename Scalar>
MatrixT<Scalar> cosine_matrix(const MatrixT<Scalar>& a, const MatrixT<Scalar>& b, double epsilon = 0.0) {
    VectorT<Scalar> na(a.rows()), nb(b.rows());
    for (Index i = 0; i < a.rows(); ++i) na[i] = detail::safe_norm<Scalar>(a.row(i).norm(), epsilon, "vector");
    for (Index i = 0; i < b.rows(); ++i) nb[i] = detail::safe_norm<Scalar>(b.row(i).norm(), epsilon, "prototype");
    MatrixT<Scalar> s = a * b.transpose();
    for (Index i = 0; i < s.rows(); ++i)
        for (Index j = 0; j < s.cols(); ++j) s(i, j) /= na[i] * nb[j];
    return s;
}

template <typename Scalar>
Scalar log_sum_exp(const VectorT<Scalar>& z) {
    const Scalar m = z.maxCoeff();
    return m + std::log((z.array() - m).exp().sum());
}

template <typename Scalar>
VectorT<Scalar> softmax(const VectorT<Scalar>& z) {
    VectorT<Scalar> e = (z.array() - z.maxCoeff()).exp();
    return e / e.sum();
}

/// Softmax over classes of tau_cls * cos(query, prototype_c).
template <typename Scalar>
VectorT<Scalar> query_class_probabilities(const VectorT<Scalar>& query, const MatrixT<Scalar>& prototypes,
                                          Scalar tau_cls, double epsilon = 0.0) {
    if (!(tau_cls > 0)) throw Error(ErrorKind::config, "tau_cls must be positive");
    if (prototypes.rows() == 0) throw Error(ErrorKind::validation, "no prototypes");
    const MatrixT<Scalar> q = query.transpose();
    VectorT<Scalar> logits = tau_cls * cosine_matrix<Scalar>(q, prototypes, epsilon).row(0).transpose();
    return softmax<Scalar>(logits);
}

/// -log softmax(logits)[target], via log-sum-exp.
template <typename Scalar>
Scalar cross_entropy(const VectorT<Scalar>& logits, Index target) {
    if (target < 0 || target >= logits.size())
        throw Error(ErrorKind::validation, "cross-entropy target " + std::to_string(target) + " out of range");
    return log_sum_exp<Scalar>(logits) - logits[target];
}

/// -log probs[target] for an already-normalized probability vector.
template <typename Scalar>
Scalar cross_entropy_from_probabilities(const VectorT<Scalar>& probs, Index target) {
    if (target < 0 || target >= probs.size())
        throw Error(ErrorKind::validation, "cross-entropy target " + std::to_string(target) + " out of range");
    return -std::log(probs[target]);
}

/// Mean cross-entropy over the rows of `logits`.
template <typename Scalar>
Scalar batch_cross_entropy(const MatrixT<Scalar>& logits, const std::vector<int>& targets) {
    if (Index(targets.size()) != logits.rows()) throw Error(ErrorKind::shape, "one target per logit row required");
    if (targets.empty()) throw Error(ErrorKind::validation, "cross-entropy over an empty batch");
    Scalar sum = 0;
    for (Index i = 0; i < logits.rows(); ++i)
        sum += cross_entropy<Scalar>(VectorT<Scalar>(logits.row(i).transpose()), targets[std::size_t(i)]);
    return sum / Scalar(logits.rows());
}

/// Multimodal NT-Xent anchored on visual prototypes. For anchor i:
///   -log exp(s(v_i,s_i)/t) / (sum_{k!=i} exp(s(v_i,v_k)/t) + sum_k exp(s(v_i,s_k)/t))
/// with s = cosine. The semantic sum includes k = i. Mean over anchors.
/// If `d_visual` is non-null it receives d(loss)/d(visual prototypes).
template <typename Scalar>
Scalar vs_alignment_loss(const MatrixT<Scalar>& visual, const MatrixT<Scalar>& semantic, Scalar tau_vs,
                         MatrixT<Scalar>* d_visual = nullptr, double epsilon = 0.0) {
    const Index N = visual.rows();
    if (N < 2) throw Error(ErrorKind::validation, "alignment loss needs at least 2 classes");
    if (semantic.rows() != N || semantic.cols() != visual.cols())
        throw Error(ErrorKind::shape, "visual and semantic prototype sets differ in shape");
    if (!(tau_vs > 0)) throw Error(ErrorKind::config, "tau_vs must be positive");

    const MatrixT<Scalar> vv = cosine_matrix<Scalar>(visual, visual, epsilon);
    const MatrixT<Scalar> vs = cosine_matrix<Scalar>(visual, semantic, epsilon);

    // Denominator logits of anchor i: [vv(i, k != i) ..., vs(i, 0..N-1)] / tau.
    MatrixT<Scalar> weight_vv = MatrixT<Scalar>::Zero(N, N), weight_vs(N, N);
    Scalar loss = 0;
    for (Index i = 0; i < N; ++i) {
        Scalar m = -std::numeric_limits<Scalar>::infinity();
        for (Index k = 0; k < N; ++k) {
            if (k != i) m = std::max(m, vv(i, k) / tau_vs);
            m = std::max(m, vs(i, k) / tau_vs);
        }
        Scalar denom = 0;
        for (Index k = 0; k < N; ++k) {
            if (k != i) {
                weight_vv(i, k) = std::exp(vv(i, k) / tau_vs - m);
                denom += weight_vv(i, k);
            }
            weight_vs(i, k) = std::exp(vs(i, k) / tau_vs - m);
            denom += weight_vs(i, k);
        }
        loss += m + std::log(denom) - vs(i, i) / tau_vs;
        weight_vv.row(i) /= denom;
        weight_vs.row(i) /= denom;
    }
    loss /= Scalar(N);

    if (d_visual) {
        // d loss / d cos-entries, then chain through the cosines.
        MatrixT<Scalar> g_vv = weight_vv / (Scalar(N) * tau_vs);
        MatrixT<Scalar> g_vs = weight_vs;
        g_vs.diagonal().array() -= Scalar(1);
        g_vs /= Scalar(N) * tau_vs;

        VectorT<Scalar> norm_v(N);
        MatrixT<Scalar> unit_v(N, visual.cols()), unit_s(N, visual.cols());
        for (Index i = 0; i < N; ++i) {
            norm_v[i] = detail::safe_norm<Scalar>(visual.row(i).norm(), epsilon, "prototype");
            unit_v.row(i) = visual.row(i) / norm_v[i];
            unit_s.row(i) = semantic.row(i) / detail::safe_norm<Scalar>(semantic.row(i).norm(), epsilon, "prototype");
        }
        // d cos(a,b)/da = (b_hat - cos * a_hat) / |a|
        MatrixT<Scalar> d = MatrixT<Scalar>::Zero(N, visual.cols());
        for (Index i = 0; i < N; ++i)
            for (Index k = 0; k < N; ++k) {
                if (k != i && g_vv(i, k) != Scalar(0)) {
                    d.row(i) += g_vv(i, k) * (unit_v.row(k) - vv(i, k) * unit_v.row(i)) / norm_v[i];
                    d.row(k) += g_vv(i, k) * (unit_v.row(i) - vv(i, k) * unit_v.row(k)) / norm_v[k];
                }
                d.row(i) += g_vs(i, k) * (unit_s.row(k) - vs(i, k) * unit_v.row(i)) / norm_v[i];
            }
        *d_visual = std::move(d);
    }
    return loss;
}

inline double vs_alignment_loss(const PrototypeSet& protos, double tau_vs, double epsilon = 0.0) {
    protos.validate();
    return vs_alignment_loss<double>(protos.visual, protos.semantic, tau_vs, nullptr, epsilon);
}

/// class_loss + lambda * vs_loss with a single rounding. lambda = 0 returns
/// class_loss bit for bit.
inline double combined_loss(double class_loss, double vs_loss, double lambda_vs) {
    if (!(lambda_vs >= 0)) throw Error(ErrorKind::config, "lambda_vs must be non-negative");
    return std::fma(lambda_vs, vs_loss, class_loss);
}

/// Gradients of one episode's total loss.
struct EpisodeGradients {
    Matrix support;        // d/d support embeddings (class-major)
    Matrix query;          // d/d query embeddings
    double tau_cls = 0;    // d/d tau_cls
};

/// Loss inputs for one episode, all embeddings already computed.
struct EpisodeBatch {
    const Matrix* support = nullptr;  // n_way * k_shot rows, class-major
    const Matrix* query = nullptr;
    const std::vector<int>* query_labels = nullptr;
    Index n_way = 0;
    Index k_shot = 0;
    const Matrix* semantic = nullptr;  // n_way semantic prototypes, or null when alignment is off
};

/// Query cross-entropy under the cosine classifier plus, when `batch.semantic`
/// is set, lambda times the alignment loss.
inline LossBreakdown episode_objective(const EpisodeBatch& batch, double tau_cls, const ObjectiveConfig& cfg,
                                       EpisodeGradients* grads = nullptr) {
    const Matrix& S = *batch.support;
    const Matrix& Q = *batch.query;
    const auto& labels = *batch.query_labels;
    const Index N = batch.n_way, M = Q.rows();
    if (!(tau_cls > 0)) throw Error(ErrorKind::config, "tau_cls must be positive");
    if (Index(labels.size()) != M || M == 0) throw Error(ErrorKind::shape, "one label per query required");
    if (S.cols() != Q.cols()) throw Error(ErrorKind::shape, "support and query embeddings differ in width");

    const Matrix protos = class_prototypes(S, N, batch.k_shot);
    const Matrix cos = cosine_matrix<double>(Q, protos, cfg.norm_epsilon);
    const Matrix logits = tau_cls * cos;

    LossBreakdown out;
    Matrix g_logits(M, N);
    Index correct = 0;
    double ce_sum = 0;
    for (Index j = 0; j < M; ++j) {
        const Vector z = logits.row(j).transpose();
        const int y = labels[std::size_t(j)];
        ce_sum += cross_entropy<double>(z, y);
        Index arg;
        z.maxCoeff(&arg);
        correct += arg == y;
        g_logits.row(j) = softmax<double>(z).transpose();
        g_logits(j, y) -= 1.0;
    }
    out.class_loss = ce_sum / double(M);
    out.accuracy = double(correct) / double(M);
    g_logits /= double(M);

    Matrix d_protos;
    if (batch.semantic) {
        if (batch.semantic->rows() != N || batch.semantic->cols() != protos.cols())
            throw Error(ErrorKind::shape, "semantic prototypes do not match the episode");
        Matrix d_vs;
        out.vs_loss = vs_alignment_loss<double>(protos, *batch.semantic, cfg.tau_vs, grads ? &d_vs : nullptr,
                                                cfg.norm_epsilon);
        out.total = combined_loss(out.class_loss, out.vs_loss, cfg.lambda_vs);
        if (grads && cfg.lambda_vs != 0) d_protos = cfg.lambda_vs * d_vs;
    } else {
        out.total = out.class_loss;
    }

    if (grads) {
        grads->tau_cls = (g_logits.array() * cos.array()).sum();
        const Matrix g_cos = tau_cls * g_logits;

        Vector nq(M), np(N);
        for (Index j = 0; j < M; ++j) nq[j] = detail::safe_norm(Q.row(j).norm(), cfg.norm_epsilon, "query");
        for (Index c = 0; c < N; ++c) np[c] = detail::safe_norm(protos.row(c).norm(), cfg.norm_epsilon, "prototype");

        grads->query = Matrix::Zero(M, Q.cols());
        Matrix dp = Matrix::Zero(N, Q.cols());
        for (Index j = 0; j < M; ++j)
            for (Index c = 0; c < N; ++c) {
                const double g = g_cos(j, c);
                grads->query.row(j) += g * (protos.row(c) / np[c] - cos(j, c) * Q.row(j) / nq[j]) / nq[j];
                dp.row(c) += g * (Q.row(j) / nq[j] - cos(j, c) * protos.row(c) / np[c]) / np[c];
            }
        if (d_protos.size()) dp += d_protos;

        grads->support.resize(S.rows(), S.cols());
        for (Index c = 0; c < N; ++c)
            for (Index k = 0; k < batch.k_shot; ++k)
                grads->support.row(c * batch.k_shot + k) = dp.row(c) / double(batch.k_shot);
    }
    return out;
}

}  // namespace vsalign
