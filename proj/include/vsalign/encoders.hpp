#pragma once

// Visual encoder f (trainable, hand-written backprop over a flat parameter
// vector) and the frozen semantic encoder g.

#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "datasets.hpp"
#include "rng.hpp"

namespace vsalign {

enum class Architecture { mlp_tiny, conv4_small };

inline std::string_view to_string(Architecture a) {
    return a == Architecture::mlp_tiny ? "mlp-tiny" : "reference-conv4-small";
}

inline Architecture parse_architecture(std::string_view s) {
    if (s == "mlp-tiny") return Architecture::mlp_tiny;
    if (s == "reference-conv4-small" || s == "conv4-small") return Architecture::conv4_small;
    throw Error(ErrorKind::config, "unknown architecture id '" + std::string(s) + "'");
}

struct EncoderConfig {
    Architecture architecture = Architecture::mlp_tiny;
    ImageShape input{16, 16, 1};
    int output_dim = 64;
    std::vector<int> hidden{128};      // mlp-tiny hidden widths
    int conv_width = 16;               // channels of conv blocks 1-3; block 4 yields output_dim

    bool operator==(const EncoderConfig&) const = default;
};

/// A named slice of the flat parameter vector.
struct TensorSlot {
    std::string name;
    std::vector<Index> shape;
    Index offset = 0;
    Index size = 0;

    bool operator==(const TensorSlot&) const = default;
};

namespace layers {

struct Dense {
    Index in = 0, out = 0;
    Index w = 0, b = 0;  // offsets; weight is in x out row-major
};

/// 3x3 convolution, stride 1, zero padding 1, HWC layout.
struct Conv3x3 {
    int height = 0, width = 0, cin = 0, cout = 0;
    Index w = 0, b = 0;  // weight is (9*cin) x cout row-major, rows ordered (dy, dx, ci)
};

struct Relu {};

/// 2x2 max pool, stride 2; odd trailing row/column dropped.
struct MaxPool {
    int height = 0, width = 0, channels = 0;
};

using Layer = std::variant<Dense, Conv3x3, Relu, MaxPool>;

}  // namespace layers

/// Activations kept by a training forward pass for the backward pass.
struct ForwardTape {
    struct Entry {
        Matrix input;                    // Dense / Relu (output stored instead for Relu)
        Matrix patches;                  // Conv3x3 im2col
        std::vector<Index> argmax;       // MaxPool
        Index rows = 0, cols = 0;
    };
    std::vector<Entry> entries;
};

class VisualEncoder {
public:
    VisualEncoder() = default;

    /// Builds the layer graph and a zero parameter vector.
    explicit VisualEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) { build(); }

    const EncoderConfig& config() const { return cfg_; }
    Index output_dim() const { return cfg_.output_dim; }
    Index input_size() const { return cfg_.input.size(); }
    const std::vector<TensorSlot>& slots() const { return slots_; }

    Vector& params() { return params_; }
    const Vector& params() const { return params_; }
    Index num_params() const { return params_.size(); }

    std::uint64_t checksum() const { return vsalign::checksum(params_); }

    /// Inference; one embedding row per image row.
    Matrix forward(const Matrix& images) const { return run(images, nullptr); }

    /// Training forward; records what backward() needs.
    Matrix forward(const Matrix& images, ForwardTape& tape) const {
        tape.entries.assign(layers_.size(), {});
        return run(images, &tape);
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output).
    /// Returns d(loss)/d(images).
    Matrix backward(const ForwardTape& tape, const Matrix& grad_output, Vector& grad) const {
        if (grad.size() != params_.size()) grad = Vector::Zero(params_.size());
        Matrix g = grad_output;
        for (std::size_t li = layers_.size(); li-- > 0;) {
            const auto& e = tape.entries[li];
            g = std::visit([&](const auto& layer) { return backward_layer(layer, e, g, grad); }, layers_[li]);
        }
        return g;
    }

    bool operator==(const VisualEncoder& o) const {
        return cfg_ == o.cfg_ && params_.size() == o.params_.size() && params_ == o.params_;
    }

private:
    using RowMap = Eigen::Map<Matrix>;
    using ConstRowMap = Eigen::Map<const Matrix>;

    void add_slot(const std::string& name, std::vector<Index> shape) {
        Index size = 1;
        for (Index d : shape) size *= d;
        slots_.push_back({name, std::move(shape), total_, size});
        total_ += size;
    }

    void build() {
        if (cfg_.input.size() <= 0) throw Error(ErrorKind::config, "encoder input shape must be positive");
        if (cfg_.output_dim <= 0) throw Error(ErrorKind::config, "encoder output_dim must be positive");
        layers_.clear();
        slots_.clear();
        total_ = 0;
        if (cfg_.architecture == Architecture::mlp_tiny) {
            Index in = cfg_.input.size();
            std::vector<Index> widths(cfg_.hidden.begin(), cfg_.hidden.end());
            widths.push_back(cfg_.output_dim);
            for (std::size_t i = 0; i < widths.size(); ++i) {
                if (widths[i] <= 0) throw Error(ErrorKind::config, "mlp hidden widths must be positive");
                layers::Dense d{in, widths[i], 0, 0};
                const std::string n = "dense" + std::to_string(i);
                add_slot(n + ".weight", {in, widths[i]});
                d.w = slots_.back().offset;
                add_slot(n + ".bias", {widths[i]});
                d.b = slots_.back().offset;
                layers_.push_back(d);
                if (i + 1 < widths.size()) layers_.push_back(layers::Relu{});
                in = widths[i];
            }
        } else {
            int h = cfg_.input.height, w = cfg_.input.width, c = cfg_.input.channels;
            if (h < 16 || w < 16)
                throw Error(ErrorKind::config, "reference-conv4-small needs inputs of at least 16x16");
            const int hf = h >> 4, wf = w >> 4;
            if (cfg_.output_dim % (hf * wf) != 0)
                throw Error(ErrorKind::config, "output_dim must be divisible by the final spatial size " +
                                                   std::to_string(hf) + "x" + std::to_string(wf));
            if (cfg_.conv_width <= 0) throw Error(ErrorKind::config, "conv_width must be positive");
            for (int blk = 0; blk < 4; ++blk) {
                const int cout = blk == 3 ? cfg_.output_dim / (hf * wf) : cfg_.conv_width;
                layers::Conv3x3 conv{h, w, c, cout, 0, 0};
                const std::string n = "conv" + std::to_string(blk);
                add_slot(n + ".weight", {3, 3, c, cout});
                conv.w = slots_.back().offset;
                add_slot(n + ".bias", {cout});
                conv.b = slots_.back().offset;
                layers_.push_back(conv);
                layers_.push_back(layers::Relu{});
                layers_.push_back(layers::MaxPool{h, w, cout});
                h /= 2;
                w /= 2;
                c = cout;
            }
        }
        params_ = Vector::Zero(total_);
    }

    Matrix run(const Matrix& images, ForwardTape* tape) const {
        if (images.cols() != cfg_.input.size())
            throw Error(ErrorKind::shape, "encoder expects images of " + std::to_string(cfg_.input.size()) +
                                              " values, got " + std::to_string(images.cols()));
        Matrix x = images;
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            ForwardTape::Entry* e = tape ? &tape->entries[li] : nullptr;
            x = std::visit([&](const auto& layer) { return forward_layer(layer, x, e); }, layers_[li]);
        }
        if (!all_finite(x)) throw Error(ErrorKind::divergence, "visual encoder produced non-finite activations");
        return x;
    }

    // Dense ---------------------------------------------------------------
    Matrix forward_layer(const layers::Dense& d, const Matrix& x, ForwardTape::Entry* e) const {
        ConstRowMap W(params_.data() + d.w, d.in, d.out);
        Eigen::Map<const Eigen::RowVectorXd> b(params_.data() + d.b, d.out);
        if (e) e->input = x;
        Matrix y = x * W;
        y.rowwise() += b;
        return y;
    }
    Matrix backward_layer(const layers::Dense& d, const ForwardTape::Entry& e, const Matrix& g, Vector& grad) const {
        RowMap dW(grad.data() + d.w, d.in, d.out);
        Eigen::Map<Eigen::RowVectorXd> db(grad.data() + d.b, d.out);
        dW.noalias() += e.input.transpose() * g;
        db += g.colwise().sum();
        ConstRowMap W(params_.data() + d.w, d.in, d.out);
        return g * W.transpose();
    }

    // ReLU ----------------------------------------------------------------
    Matrix forward_layer(const layers::Relu&, const Matrix& x, ForwardTape::Entry* e) const {
        Matrix y = x.cwiseMax(0.0);
        if (e) e->input = y;
        return y;
    }
    Matrix backward_layer(const layers::Relu&, const ForwardTape::Entry& e, const Matrix& g, Vector&) const {
        return g.cwiseProduct((e.input.array() > 0.0).cast<double>().matrix());
    }

    // Conv ----------------------------------------------------------------
    Matrix forward_layer(const layers::Conv3x3& c, const Matrix& x, ForwardTape::Entry* e) const {
        const Index B = x.rows(), HW = Index(c.height) * c.width, K = 9 * Index(c.cin);
        Matrix patches = Matrix::Zero(B * HW, K);
        for (Index n = 0; n < B; ++n) {
            const double* img = x.row(n).data();
            for (int y = 0; y < c.height; ++y)
                for (int xx = 0; xx < c.width; ++xx) {
                    double* row = patches.row(n * HW + Index(y) * c.width + xx).data();
                    for (int dy = 0; dy < 3; ++dy) {
                        const int sy = y + dy - 1;
                        if (sy < 0 || sy >= c.height) continue;
                        for (int dx = 0; dx < 3; ++dx) {
                            const int sx = xx + dx - 1;
                            if (sx < 0 || sx >= c.width) continue;
                            const double* src = img + (Index(sy) * c.width + sx) * c.cin;
                            double* dst = row + (dy * 3 + dx) * c.cin;
                            for (int ci = 0; ci < c.cin; ++ci) dst[ci] = src[ci];
                        }
                    }
                }
        }
        ConstRowMap W(params_.data() + c.w, K, c.cout);
        Eigen::Map<const Eigen::RowVectorXd> b(params_.data() + c.b, c.cout);
        Matrix out = patches * W;
        out.rowwise() += b;
        if (e) e->patches = std::move(patches);
        // (B*HW) x cout row-major is already B x (HW*cout) in HWC order.
        return Eigen::Map<Matrix>(out.data(), B, HW * c.cout);
    }
    Matrix backward_layer(const layers::Conv3x3& c, const ForwardTape::Entry& e, const Matrix& g, Vector& grad) const {
        const Index B = g.rows(), HW = Index(c.height) * c.width, K = 9 * Index(c.cin);
        ConstRowMap gout(g.data(), B * HW, c.cout);
        RowMap dW(grad.data() + c.w, K, c.cout);
        Eigen::Map<Eigen::RowVectorXd> db(grad.data() + c.b, c.cout);
        dW.noalias() += e.patches.transpose() * gout;
        db += gout.colwise().sum();
        ConstRowMap W(params_.data() + c.w, K, c.cout);
        const Matrix dpatches = gout * W.transpose();
        Matrix dx = Matrix::Zero(B, HW * c.cin);
        for (Index n = 0; n < B; ++n) {
            double* img = dx.row(n).data();
            for (int y = 0; y < c.height; ++y)
                for (int xx = 0; xx < c.width; ++xx) {
                    const double* row = dpatches.row(n * HW + Index(y) * c.width + xx).data();
                    for (int dy = 0; dy < 3; ++dy) {
                        const int sy = y + dy - 1;
                        if (sy < 0 || sy >= c.height) continue;
                        for (int dx2 = 0; dx2 < 3; ++dx2) {
                            const int sx = xx + dx2 - 1;
                            if (sx < 0 || sx >= c.width) continue;
                            double* dst = img + (Index(sy) * c.width + sx) * c.cin;
                            const double* src = row + (dy * 3 + dx2) * c.cin;
                            for (int ci = 0; ci < c.cin; ++ci) dst[ci] += src[ci];
                        }
                    }
                }
        }
        return dx;
    }

    // Max pool ------------------------------------------------------------
    Matrix forward_layer(const layers::MaxPool& p, const Matrix& x, ForwardTape::Entry* e) const {
        const int oh = p.height / 2, ow = p.width / 2, C = p.channels;
        const Index B = x.rows(), osize = Index(oh) * ow * C;
        Matrix y(B, osize);
        std::vector<Index> arg(std::size_t(B * osize));
        for (Index n = 0; n < B; ++n)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox)
                    for (int ch = 0; ch < C; ++ch) {
                        Index best = (Index(2 * oy) * p.width + 2 * ox) * C + ch;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const Index idx = (Index(2 * oy + dy) * p.width + 2 * ox + dx) * C + ch;
                                if (x(n, idx) > x(n, best)) best = idx;
                            }
                        const Index o = (Index(oy) * ow + ox) * C + ch;
                        y(n, o) = x(n, best);
                        arg[std::size_t(n * osize + o)] = best;
                    }
        if (e) {
            e->argmax = std::move(arg);
            e->rows = B;
            e->cols = x.cols();
        }
        return y;
    }
    Matrix backward_layer(const layers::MaxPool&, const ForwardTape::Entry& e, const Matrix& g, Vector&) const {
        Matrix dx = Matrix::Zero(e.rows, e.cols);
        const Index osize = g.cols();
        for (Index n = 0; n < g.rows(); ++n)
            for (Index o = 0; o < osize; ++o) dx(n, e.argmax[std::size_t(n * osize + o)]) += g(n, o);
        return dx;
    }

    EncoderConfig cfg_;
    std::vector<layers::Layer> layers_;
    std::vector<TensorSlot> slots_;
    Index total_ = 0;
    Vector params_;
};

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases. Deterministic in seed.
inline VisualEncoder init_visual_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
    VisualEncoder enc(cfg);
    Rng rng(seed);
    for (const auto& slot : enc.slots()) {
        if (slot.shape.size() == 1) continue;  // bias
        Index fan_in = 1;
        for (std::size_t i = 0; i + 1 < slot.shape.size(); ++i) fan_in *= slot.shape[i];
        const double std = std::sqrt(2.0 / double(fan_in));
        for (Index i = 0; i < slot.size; ++i) enc.params()[slot.offset + i] = std * standard_normal(rng);
    }
    return enc;
}

/// Rebuilds an encoder around stored parameters (checkpoint loading).
inline VisualEncoder make_visual_encoder(const EncoderConfig& cfg, Vector params) {
    VisualEncoder enc(cfg);
    if (params.size() != enc.num_params())
        throw Error(ErrorKind::shape, "parameter vector has " + std::to_string(params.size()) + " entries, " +
                                          std::string(to_string(cfg.architecture)) + " needs " +
                                          std::to_string(enc.num_params()));
    enc.params() = std::move(params);
    return enc;
}

// ---------------------------------------------------------------------------
// Semantic encoder

enum class SemanticMode { precomputed, toy_text };

struct SemanticConfig {
    int token_dim = 64;          // toy-text token embedding width
    std::uint64_t seed = 7;      // projection seed
    std::string projection = "frozen";
};

/// Frozen g: maps a description (text or precomputed vector) to a vector of
/// the visual output dimension. Never updated by training.
class SemanticEncoder {
public:
    SemanticEncoder(SemanticMode mode, Index input_dim, Index output_dim, std::uint64_t seed)
        : mode_(mode), input_dim_(input_dim), output_dim_(output_dim) {
        if (input_dim <= 0 || output_dim <= 0) throw Error(ErrorKind::config, "semantic encoder dims must be positive");
        if (input_dim != output_dim) {
            // Gaussian projection, entries N(0, 1/output_dim): approximately norm- and angle-preserving.
            SplitMix rng{derive_seed(seed, 0x5e3a)};
            projection_ = Matrix(output_dim, input_dim);
            for (Index i = 0; i < projection_.size(); ++i)
                projection_.data()[i] = standard_normal(rng) / std::sqrt(double(output_dim));
        }
    }

    /// Chooses the mode from the corpus kind.
    static SemanticEncoder for_corpus(const DescriptionCorpus& corpus, Index output_dim, const SemanticConfig& cfg = {}) {
        if (cfg.projection != "frozen")
            throw Error(ErrorKind::config, "semantic projection '" + cfg.projection + "' unsupported; only 'frozen'");
        if (corpus.kind == DescriptionKind::text)
            return SemanticEncoder(SemanticMode::toy_text, cfg.token_dim, output_dim, cfg.seed);
        return SemanticEncoder(SemanticMode::precomputed, corpus.embedding_dim, output_dim, cfg.seed);
    }

    SemanticMode mode() const { return mode_; }
    Index input_dim() const { return input_dim_; }
    Index output_dim() const { return output_dim_; }
    bool has_projection() const { return projection_.size() > 0; }
    const Matrix& projection() const { return projection_; }

    Vector encode(const Vector& description) const {
        if (mode_ != SemanticMode::precomputed)
            throw Error(ErrorKind::config, "toy-text semantic encoder needs text, got a vector");
        if (description.size() != input_dim_)
            throw Error(ErrorKind::shape, "precomputed description has dim " + std::to_string(description.size()) +
                                              ", encoder expects " + std::to_string(input_dim_));
        return project(description);
    }

    Vector encode(std::string_view text) const {
        if (mode_ != SemanticMode::toy_text)
            throw Error(ErrorKind::config, "precomputed semantic encoder needs a vector, got text");
        const auto tokens = tokenize(text);
        Vector pooled = Vector::Zero(input_dim_);
        for (const auto& t : tokens) pooled += token_embedding(t);
        if (!tokens.empty()) pooled /= double(tokens.size());
        return project(pooled);
    }

    /// d_c x output_dim matrix of encoded descriptions per class.
    std::map<int, Matrix> encode_corpus(const DescriptionCorpus& corpus) const {
        std::map<int, Matrix> out;
        auto fill = [&](int c, std::size_t n, auto&& get) {
            Matrix m(Index(n), output_dim_);
            for (std::size_t i = 0; i < n; ++i) m.row(Index(i)) = get(i).transpose();
            out.emplace(c, std::move(m));
        };
        if (corpus.kind == DescriptionKind::text)
            for (auto& [c, list] : corpus.texts) fill(c, list.size(), [&](std::size_t i) { return encode(list[i]); });
        else
            for (auto& [c, list] : corpus.embeddings)
                fill(c, list.size(), [&](std::size_t i) { return encode(list[i]); });
        return out;
    }

    std::uint64_t checksum() const {
        std::uint64_t h = vsalign::checksum(projection_);
        const std::int64_t meta[3] = {std::int64_t(mode_), std::int64_t(input_dim_), std::int64_t(output_dim_)};
        return fnv1a64(meta, sizeof meta, h);
    }

    /// Lowercased runs of [a-z0-9_].
    static std::vector<std::string> tokenize(std::string_view text) {
        std::vector<std::string> out;
        std::string cur;
        for (char ch : text) {
            const auto u = static_cast<unsigned char>(ch);
            if (std::isalnum(u) || ch == '_') {
                cur.push_back(char(std::tolower(u)));
            } else if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
        return out;
    }

    /// Token vector seeded by the token's FNV-1a hash; identical on every platform
    /// with IEEE doubles and a correctly rounded libm.
    Vector token_embedding(std::string_view token) const {
        SplitMix rng{fnv1a64(token)};
        Vector v(input_dim_);
        for (Index i = 0; i < input_dim_; ++i) v[i] = standard_normal(rng) / std::sqrt(double(input_dim_));
        return v;
    }

private:
    Vector project(const Vector& v) const { return has_projection() ? Vector(projection_ * v) : v; }

    SemanticMode mode_;
    Index input_dim_;
    Index output_dim_;
    Matrix projection_;
};

}  // namespace vsalign
