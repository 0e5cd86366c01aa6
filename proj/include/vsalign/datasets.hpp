#pragma once

// Few-shot datasets: images with global class ids, a disjoint
// base/val/novel class split, per-class description corpora, and the
// synthetic Gaussian-cluster generator used for desk-scale experiments.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace vsalign {

struct ImageShape {
    int height = 0;
    int width = 0;
    int channels = 0;

    Index size() const { return Index(height) * width * channels; }
    bool operator==(const ImageShape&) const = default;
};

enum class Split { base, val, novel };

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::base: return "base";
        case Split::val: return "val";
        case Split::novel: return "novel";
    }
    return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
    if (s == "base") return Split::base;
    if (s == "val") return Split::val;
    if (s == "novel") return Split::novel;
    return std::nullopt;
}

/// Non-owning view of one example. `image` is H*W*C values in HWC order.
struct LabeledExample {
    std::span<const double> image;
    int class_id = 0;
};

struct DatasetSplit {
    std::set<int> base_classes;
    std::set<int> val_classes;
    std::set<int> novel_classes;

    const std::set<int>& classes(Split s) const {
        switch (s) {
            case Split::base: return base_classes;
            case Split::val: return val_classes;
            case Split::novel: break;
        }
        return novel_classes;
    }
    std::set<int>& classes(Split s) {
        return const_cast<std::set<int>&>(std::as_const(*this).classes(s));
    }

    std::optional<Split> split_of(int class_id) const {
        for (Split s : {Split::base, Split::val, Split::novel})
            if (classes(s).contains(class_id)) return s;
        return std::nullopt;
    }

    /// Throws a validation error naming the first class found in two splits.
    void check_disjoint() const {
        const std::pair<Split, Split> pairs[] = {
            {Split::base, Split::val}, {Split::base, Split::novel}, {Split::val, Split::novel}};
        for (auto [a, b] : pairs)
            for (int c : classes(a))
                if (classes(b).contains(c))
                    throw Error(ErrorKind::validation,
                                "class " + std::to_string(c) + " appears in both " +
                                    std::string(to_string(a)) + " and " + std::string(to_string(b)) +
                                    " splits");
    }

    bool operator==(const DatasetSplit&) const = default;
};

/// Immutable after construction; safe for concurrent readers.
class Dataset {
public:
    Dataset() = default;

    /// `images` holds one flattened example per row.
    Dataset(ImageShape shape, Matrix images, std::vector<int> labels, DatasetSplit split)
        : shape_(shape), images_(std::move(images)), labels_(std::move(labels)), split_(std::move(split)) {
        if (images_.rows() != Index(labels_.size()))
            throw Error(ErrorKind::shape, "image rows and label count differ");
        if (images_.rows() > 0 && images_.cols() != shape_.size())
            throw Error(ErrorKind::shape, "image width does not match declared shape");
        split_.check_disjoint();
        for (std::size_t i = 0; i < labels_.size(); ++i) {
            if (!split_.split_of(labels_[i]))
                throw Error(ErrorKind::validation,
                            "example " + std::to_string(i) + " has class " + std::to_string(labels_[i]) +
                                " which belongs to no split");
            by_class_[labels_[i]].push_back(i);
        }
    }

    const ImageShape& shape() const { return shape_; }
    const Matrix& images() const { return images_; }
    const std::vector<int>& labels() const { return labels_; }
    const DatasetSplit& split() const { return split_; }
    std::size_t size() const { return labels_.size(); }

    LabeledExample example(std::size_t i) const {
        return {std::span<const double>(images_.row(Index(i)).data(), std::size_t(images_.cols())),
                labels_[i]};
    }

    /// Example indices of a class, in dataset order. Empty if unknown.
    const std::vector<std::size_t>& examples_of(int class_id) const {
        static const std::vector<std::size_t> empty;
        auto it = by_class_.find(class_id);
        return it == by_class_.end() ? empty : it->second;
    }

    /// Example indices of every class in `s`, in dataset order.
    std::vector<std::size_t> examples_in(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < labels_.size(); ++i)
            if (split_.classes(s).contains(labels_[i])) out.push_back(i);
        return out;
    }

    /// Gathers rows into a batch matrix.
    Matrix gather(std::span<const std::size_t> indices) const {
        Matrix out(Index(indices.size()), images_.cols());
        for (std::size_t r = 0; r < indices.size(); ++r) out.row(Index(r)) = images_.row(Index(indices[r]));
        return out;
    }

    /// Every class must hold at least `min_examples` examples.
    void check_min_examples(std::size_t min_examples) const {
        for (Split s : {Split::base, Split::val, Split::novel})
            for (int c : split_.classes(s))
                if (examples_of(c).size() < min_examples)
                    throw Error(ErrorKind::validation,
                                "class " + std::to_string(c) + " has " + std::to_string(examples_of(c).size()) +
                                    " examples, needs at least " + std::to_string(min_examples));
    }

    bool operator==(const Dataset& o) const {
        return shape_ == o.shape_ && labels_ == o.labels_ && split_ == o.split_ &&
               images_.rows() == o.images_.rows() && images_.cols() == o.images_.cols() &&
               images_ == o.images_;
    }

private:
    ImageShape shape_;
    Matrix images_;
    std::vector<int> labels_;
    DatasetSplit split_;
    std::map<int, std::vector<std::size_t>> by_class_;
};

enum class DescriptionKind { text, embedding };

/// Per-class ordered descriptions. One corpus holds one kind only.
struct DescriptionCorpus {
    DescriptionKind kind = DescriptionKind::embedding;
    std::map<int, std::vector<std::string>> texts;
    std::map<int, std::vector<Vector>> embeddings;
    Index embedding_dim = 0;  // 0 for text corpora

    std::size_t count(int class_id) const {
        if (kind == DescriptionKind::text) {
            auto it = texts.find(class_id);
            return it == texts.end() ? 0 : it->second.size();
        }
        auto it = embeddings.find(class_id);
        return it == embeddings.end() ? 0 : it->second.size();
    }

    std::vector<int> class_ids() const {
        std::vector<int> ids;
        if (kind == DescriptionKind::text)
            for (auto& [c, _] : texts) ids.push_back(c);
        else
            for (auto& [c, _] : embeddings) ids.push_back(c);
        return ids;
    }

    /// Every class in `classes` needs d_c >= 1.
    void check_covers(const std::set<int>& classes) const {
        for (int c : classes)
            if (count(c) == 0)
                throw Error(ErrorKind::validation, "class " + std::to_string(c) + " has no descriptions");
    }

    bool operator==(const DescriptionCorpus& o) const {
        if (kind != o.kind || embedding_dim != o.embedding_dim || texts != o.texts) return false;
        if (embeddings.size() != o.embeddings.size()) return false;
        for (auto& [c, rows] : embeddings) {
            auto it = o.embeddings.find(c);
            if (it == o.embeddings.end() || it->second.size() != rows.size()) return false;
            for (std::size_t i = 0; i < rows.size(); ++i)
                if (rows[i].size() != it->second[i].size() || rows[i] != it->second[i]) return false;
        }
        return true;
    }
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

inline std::string where(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line) + ": ";
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return lines;
}

constexpr char kSidecarMagic[8] = {'V', 'S', 'I', 'M', 'G', '0', '0', '1'};

inline Matrix read_sidecar(const std::filesystem::path& path, Index pixels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open sidecar " + path.string());
    char magic[8];
    std::uint64_t rows = 0, cols = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&rows), 8);
    in.read(reinterpret_cast<char*>(&cols), 8);
    if (!in || std::memcmp(magic, kSidecarMagic, 8) != 0)
        throw Error(ErrorKind::parse, "bad sidecar header in " + path.string());
    if (Index(cols) != pixels)
        throw Error(ErrorKind::shape, "sidecar " + path.string() + " stores " + std::to_string(cols) +
                                          " values per image, manifest shape needs " + std::to_string(pixels));
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), std::streamsize(sizeof(double) * rows * cols));
    if (!in) throw Error(ErrorKind::parse, "sidecar " + path.string() + " is truncated");
    return m;
}

inline void write_sidecar(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    const std::uint64_t rows = std::uint64_t(m.rows()), cols = std::uint64_t(m.cols());
    out.write(kSidecarMagic, 8);
    out.write(reinterpret_cast<const char*>(&rows), 8);
    out.write(reinterpret_cast<const char*>(&cols), 8);
    out.write(reinterpret_cast<const char*>(m.data()), std::streamsize(sizeof(double) * rows * cols));
    if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

/// Raw little-endian float64 image file.
inline Vector read_f64_image(const std::filesystem::path& path, Index pixels) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error(ErrorKind::io, "cannot open image " + path.string());
    const auto bytes = std::size_t(in.tellg());
    if (bytes != sizeof(double) * std::size_t(pixels))
        throw Error(ErrorKind::shape, "image " + path.string() + " holds " + std::to_string(bytes / 8) +
                                          " values, expected " + std::to_string(pixels));
    in.seekg(0);
    Vector v(pixels);
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(bytes));
    return v;
}

/// Binary (P5) or ASCII (P2) graymap, scaled by 1/maxval.
inline Vector read_pgm_image(const std::filesystem::path& path, const ImageShape& shape) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open image " + path.string());
    auto token = [&]() {
        std::string t;
        char ch;
        while (in.get(ch)) {
            if (ch == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(ch);
        }
        return t;
    };
    const std::string magic = token();
    const auto w = parse_number<int>(token()), h = parse_number<int>(token()), maxval = parse_number<int>(token());
    if ((magic != "P5" && magic != "P2") || !w || !h || !maxval || *maxval <= 0 || *maxval > 255)
        throw Error(ErrorKind::parse, "unsupported PGM header in " + path.string());
    if (shape.channels != 1 || *w != shape.width || *h != shape.height)
        throw Error(ErrorKind::shape, "PGM " + path.string() + " does not match manifest shape");
    Vector v(shape.size());
    for (Index i = 0; i < v.size(); ++i) {
        int px;
        if (magic == "P5") {
            char c;
            if (!in.get(c)) throw Error(ErrorKind::parse, "PGM " + path.string() + " is truncated");
            px = static_cast<unsigned char>(c);
        } else {
            auto t = parse_number<int>(token());
            if (!t) throw Error(ErrorKind::parse, "PGM " + path.string() + " is truncated");
            px = *t;
        }
        v[i] = double(px) / double(*maxval);
    }
    return v;
}

}  // namespace detail

/*
 Manifest format (line-delimited, '#' starts a comment line):

   vsalign-manifest 1
   shape <height> <width> <channels>
   sidecar <relative path>            optional binary image store
   class <class_id> <base|val|novel>  one per class
   <class_id> <split> <payload>       one per example

 A payload is either "@<row>" (row of the sidecar) or a path relative to the
 manifest's directory naming a raw float64 (.f64) or PGM (.pgm) image.
*/

/// Parses and validates a manifest. `min_examples_per_class` is K+Q of the
/// largest episode configuration the caller intends to sample (0 = no check).
inline Dataset load_manifest(const std::filesystem::path& path, std::size_t min_examples_per_class = 0) {
    using detail::where;
    const auto lines = detail::read_lines(path);
    const auto dir = path.parent_path();

    ImageShape shape;
    bool saw_header = false, saw_shape = false;
    std::optional<Matrix> sidecar;
    DatasetSplit split;
    std::map<int, std::size_t> class_line;
    std::vector<int> labels;
    std::vector<Vector> images;

    for (std::size_t ln = 1; ln <= lines.size(); ++ln) {
        const auto tok = detail::split_ws(lines[ln - 1]);
        if (tok.empty() || tok[0].starts_with('#')) continue;
        if (!saw_header) {
            if (tok.size() != 2 || tok[0] != "vsalign-manifest")
                throw Error(ErrorKind::parse, where(path, ln) + "expected 'vsalign-manifest <version>' header");
            if (tok[1] != "1")
                throw Error(ErrorKind::version, where(path, ln) + "unsupported manifest version " + std::string(tok[1]));
            saw_header = true;
            continue;
        }
        if (tok[0] == "shape") {
            std::optional<int> h, w, c;
            if (tok.size() == 4) {
                h = detail::parse_number<int>(tok[1]);
                w = detail::parse_number<int>(tok[2]);
                c = detail::parse_number<int>(tok[3]);
            }
            if (!h || !w || !c || *h <= 0 || *w <= 0 || *c <= 0)
                throw Error(ErrorKind::parse, where(path, ln) + "malformed shape line");
            shape = {*h, *w, *c};
            saw_shape = true;
        } else if (tok[0] == "sidecar") {
            if (tok.size() != 2 || !saw_shape)
                throw Error(ErrorKind::parse, where(path, ln) + "sidecar line needs one path and a preceding shape");
            sidecar = detail::read_sidecar(dir / std::string(tok[1]), shape.size());
        } else if (tok[0] == "class") {
            std::optional<int> id;
            std::optional<Split> s;
            if (tok.size() == 3) {
                id = detail::parse_number<int>(tok[1]);
                s = parse_split(tok[2]);
            }
            if (!id || !s) throw Error(ErrorKind::parse, where(path, ln) + "malformed class line");
            if (auto prev = split.split_of(*id); prev && *prev != *s)
                throw Error(ErrorKind::validation, where(path, ln) + "class " + std::to_string(*id) +
                                                       " appears in both " + std::string(to_string(*prev)) +
                                                       " and " + std::string(to_string(*s)) + " splits");
            split.classes(*s).insert(*id);
            class_line.emplace(*id, ln);
        } else {
            if (!saw_shape) throw Error(ErrorKind::parse, where(path, ln) + "example before shape line");
            std::optional<int> id;
            std::optional<Split> s;
            if (tok.size() == 3) {
                id = detail::parse_number<int>(tok[0]);
                s = parse_split(tok[1]);
            }
            if (!id || !s) throw Error(ErrorKind::parse, where(path, ln) + "malformed example record");
            const auto declared = split.split_of(*id);
            if (!declared)
                throw Error(ErrorKind::validation,
                            where(path, ln) + "class " + std::to_string(*id) + " has no class declaration");
            if (*declared != *s)
                throw Error(ErrorKind::validation, where(path, ln) + "class " + std::to_string(*id) +
                                                       " declared " + std::string(to_string(*declared)) +
                                                       " but record tagged " + std::string(tok[1]));
            const std::string_view payload = tok[2];
            if (payload.starts_with('@')) {
                auto row = detail::parse_number<Index>(payload.substr(1));
                if (!sidecar) throw Error(ErrorKind::parse, where(path, ln) + "sidecar reference without sidecar line");
                if (!row || *row < 0 || *row >= sidecar->rows())
                    throw Error(ErrorKind::parse, where(path, ln) + "sidecar row out of range");
                images.emplace_back(sidecar->row(*row).transpose());
            } else {
                const auto file = dir / std::string(payload);
                try {
                    if (file.extension() == ".pgm")
                        images.push_back(detail::read_pgm_image(file, shape));
                    else
                        images.push_back(detail::read_f64_image(file, shape.size()));
                } catch (const Error& e) {
                    throw Error(e.kind(), where(path, ln) + e.what());
                }
            }
            labels.push_back(*id);
        }
    }
    if (!saw_header) throw Error(ErrorKind::parse, path.string() + ": empty manifest");
    if (!saw_shape) throw Error(ErrorKind::parse, path.string() + ": missing shape line");

    Matrix m(Index(images.size()), shape.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!all_finite(images[i]) || (images[i].array() < 0.0).any() || (images[i].array() > 1.0).any())
            throw Error(ErrorKind::validation, path.string() + ": example " + std::to_string(i) + " of class " +
                                                   std::to_string(labels[i]) + " has values outside [0,1]");
        m.row(Index(i)) = images[i].transpose();
    }
    Dataset ds(shape, std::move(m), std::move(labels), std::move(split));
    for (auto [id, ln] : class_line) {
        const auto n = ds.examples_of(id).size();
        if (n < min_examples_per_class)
            throw Error(ErrorKind::validation, where(path, ln) + "class " + std::to_string(id) + " has " +
                                                   std::to_string(n) + " examples, needs at least " +
                                                   std::to_string(min_examples_per_class));
    }
    return ds;
}

/// Writes `manifest.txt` plus a binary sidecar into `dir`.
inline void save_manifest(const Dataset& ds, const std::filesystem::path& manifest_path,
                          const std::string& sidecar_name = "images.bin") {
    const auto dir = manifest_path.parent_path();
    detail::write_sidecar(dir / sidecar_name, ds.images());
    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + manifest_path.string());
    out << "vsalign-manifest 1\n";
    out << "shape " << ds.shape().height << ' ' << ds.shape().width << ' ' << ds.shape().channels << '\n';
    out << "sidecar " << sidecar_name << '\n';
    for (Split s : {Split::base, Split::val, Split::novel})
        for (int c : ds.split().classes(s)) out << "class " << c << ' ' << to_string(s) << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int c = ds.labels()[i];
        out << c << ' ' << to_string(*ds.split().split_of(c)) << " @" << i << '\n';
    }
    if (!out) throw Error(ErrorKind::io, "failed writing " + manifest_path.string());
}

/*
 Description file: one record per line,
   <class_id> "<text>"             backslash escapes \" and \\
   <class_id> <f_1> ... <f_D>      precomputed embedding
 A file holds one kind only.
*/

inline DescriptionCorpus load_descriptions(const std::filesystem::path& path, const Dataset& dataset) {
    using detail::where;
    const auto lines = detail::read_lines(path);
    DescriptionCorpus corpus;
    std::optional<DescriptionKind> kind;
    for (std::size_t ln = 1; ln <= lines.size(); ++ln) {
        std::string_view line = lines[ln - 1];
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string_view::npos || line[first] == '#') continue;
        line.remove_prefix(first);
        const auto sp = line.find_first_of(" \t");
        const auto id = detail::parse_number<int>(line.substr(0, sp));
        if (!id || sp == std::string_view::npos)
            throw Error(ErrorKind::parse, where(path, ln) + "expected '<class_id> <description>'");
        if (!dataset.split().split_of(*id))
            throw Error(ErrorKind::validation, where(path, ln) + "class " + std::to_string(*id) + " is not in the dataset");
        std::string_view rest = line.substr(sp);
        rest.remove_prefix(std::min(rest.find_first_not_of(" \t"), rest.size()));

        const DescriptionKind this_kind =
            rest.starts_with('"') ? DescriptionKind::text : DescriptionKind::embedding;
        if (kind && *kind != this_kind)
            throw Error(ErrorKind::validation, where(path, ln) + "file mixes text and embedding descriptions");
        kind = this_kind;

        if (this_kind == DescriptionKind::text) {
            std::string text;
            std::size_t i = 1;
            bool closed = false;
            for (; i < rest.size(); ++i) {
                if (rest[i] == '\\' && i + 1 < rest.size()) {
                    text.push_back(rest[++i]);
                } else if (rest[i] == '"') {
                    closed = true;
                    ++i;
                    break;
                } else {
                    text.push_back(rest[i]);
                }
            }
            if (!closed || rest.substr(i).find_first_not_of(" \t") != std::string_view::npos)
                throw Error(ErrorKind::parse, where(path, ln) + "unterminated or trailing text after quoted description");
            corpus.texts[*id].push_back(std::move(text));
        } else {
            const auto tok = detail::split_ws(rest);
            Vector v(Index(tok.size()));
            for (std::size_t i = 0; i < tok.size(); ++i) {
                auto x = detail::parse_number<double>(tok[i]);
                if (!x || !std::isfinite(*x))
                    throw Error(ErrorKind::parse, where(path, ln) + "bad number '" + std::string(tok[i]) + "'");
                v[Index(i)] = *x;
            }
            if (corpus.embedding_dim == 0) corpus.embedding_dim = v.size();
            if (v.size() != corpus.embedding_dim)
                throw Error(ErrorKind::shape, where(path, ln) + "class " + std::to_string(*id) + " embedding has dim " +
                                                  std::to_string(v.size()) + ", earlier rows have " +
                                                  std::to_string(corpus.embedding_dim));
            corpus.embeddings[*id].push_back(std::move(v));
        }
    }
    corpus.kind = kind.value_or(DescriptionKind::embedding);
    try {
        corpus.check_covers(dataset.split().base_classes);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
    return corpus;
}

inline void save_descriptions(const DescriptionCorpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    if (corpus.kind == DescriptionKind::text) {
        for (auto& [c, list] : corpus.texts)
            for (auto& t : list) {
                out << c << " \"";
                for (char ch : t) {
                    if (ch == '"' || ch == '\\') out << '\\';
                    out << ch;
                }
                out << "\"\n";
            }
    } else {
        for (auto& [c, list] : corpus.embeddings)
            for (auto& v : list) {
                out << c;
                for (Index i = 0; i < v.size(); ++i) out << ' ' << detail::format_double(v[i]);
                out << '\n';
            }
    }
    if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
    int num_base_classes = 16;
    int num_val_classes = 8;
    int num_novel_classes = 16;
    int examples_per_class = 40;
    ImageShape image{16, 16, 1};
    int latent_dim = 16;
    double sigma_between = 4.0;
    double sigma_within = 1.0;
    double pixel_noise = 0.0;
    int embedding_dim = 32;
    int descriptions_per_class = 3;
    /// 1: descriptions carry the class direction exactly; 0: pure noise.
    double informativeness = 1.0;
    DescriptionKind description_kind = DescriptionKind::embedding;
    int tokens_per_description = 12;
    int attributes_per_class = 6;
    int noise_vocabulary = 200;

    void validate() const {
        auto positive = [](long v, const char* what) {
            if (v <= 0) throw Error(ErrorKind::config, std::string("synth: ") + what + " must be positive");
        };
        positive(num_base_classes, "num_base_classes");
        positive(num_novel_classes, "num_novel_classes");
        if (num_val_classes < 0) throw Error(ErrorKind::config, "synth: num_val_classes must be non-negative");
        positive(examples_per_class, "examples_per_class");
        positive(image.height, "image height");
        positive(image.width, "image width");
        positive(image.channels, "image channels");
        positive(latent_dim, "latent_dim");
        positive(embedding_dim, "embedding_dim");
        positive(descriptions_per_class, "descriptions_per_class");
        positive(tokens_per_description, "tokens_per_description");
        positive(attributes_per_class, "attributes_per_class");
        positive(noise_vocabulary, "noise_vocabulary");
        if (!(sigma_between > 0)) throw Error(ErrorKind::config, "synth: sigma_between must be positive");
        if (!(sigma_within >= 0)) throw Error(ErrorKind::config, "synth: sigma_within must be non-negative");
        if (!(pixel_noise >= 0)) throw Error(ErrorKind::config, "synth: pixel_noise must be non-negative");
        if (!(informativeness >= 0 && informativeness <= 1))
            throw Error(ErrorKind::config, "synth: informativeness must lie in [0,1]");
    }

    int num_classes() const { return num_base_classes + num_val_classes + num_novel_classes; }
};

/// Generated data plus the hidden generative quantities tests compare against.
struct SynthData {
    Dataset dataset;
    DescriptionCorpus corpus;
    Matrix class_means;         // num_classes x latent_dim, row = class id
    Matrix latents;             // one latent code per example
    Matrix description_basis;   // embedding_dim x latent_dim
};

/// Classes are Gaussian clusters in latent space; images are a fixed random
/// linear map of the latent code squashed into (0,1). Pure in (config, seed).
inline SynthData synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const int C = cfg.num_classes();
    const Index L = cfg.latent_dim, P = cfg.image.size(), D = cfg.embedding_dim;

    Rng means_rng(derive_seed(seed, 0)), render_rng(derive_seed(seed, 1)), example_rng(derive_seed(seed, 2)),
        basis_rng(derive_seed(seed, 3)), desc_rng(derive_seed(seed, 4));

    Matrix means(C, L);
    for (Index i = 0; i < means.size(); ++i) means.data()[i] = cfg.sigma_between * standard_normal(means_rng);

    Matrix render(P, L);
    for (Index i = 0; i < render.size(); ++i) render.data()[i] = standard_normal(render_rng) / std::sqrt(double(L));
    const double scale = std::sqrt(cfg.sigma_between * cfg.sigma_between + cfg.sigma_within * cfg.sigma_within);

    const Index n = Index(C) * cfg.examples_per_class;
    Matrix latents(n, L), images(n, P);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int c = 0; c < C; ++c)
        for (int e = 0; e < cfg.examples_per_class; ++e) {
            const Index r = Index(c) * cfg.examples_per_class + e;
            labels[std::size_t(r)] = c;
            for (Index j = 0; j < L; ++j) latents(r, j) = means(c, j) + cfg.sigma_within * standard_normal(example_rng);
            Vector pre = render * latents.row(r).transpose() / scale;
            for (Index p = 0; p < P; ++p) {
                const double z = pre[p] + cfg.pixel_noise * standard_normal(example_rng);
                images(r, p) = 1.0 / (1.0 + std::exp(-z));
            }
        }

    DatasetSplit split;
    for (int c = 0; c < C; ++c) {
        if (c < cfg.num_base_classes)
            split.base_classes.insert(c);
        else if (c < cfg.num_base_classes + cfg.num_val_classes)
            split.val_classes.insert(c);
        else
            split.novel_classes.insert(c);
    }

    // Orthonormal columns when D >= L so latent cosines carry over exactly.
    Matrix gauss(D, L);
    for (Index i = 0; i < gauss.size(); ++i) gauss.data()[i] = standard_normal(basis_rng);
    Matrix basis;
    if (D >= L) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr{Eigen::MatrixXd(gauss)};
        basis = Matrix(qr.householderQ() * Eigen::MatrixXd::Identity(D, L));
    } else {
        basis = gauss;
        for (Index j = 0; j < L; ++j) basis.col(j).normalize();
    }

    DescriptionCorpus corpus;
    corpus.kind = cfg.description_kind;
    const double inf = cfg.informativeness;
    const double noise = std::sqrt(std::max(0.0, 1.0 - inf * inf));
    for (int c = 0; c < C; ++c) {
        const Vector dir = means.row(c).transpose().normalized();
        if (cfg.description_kind == DescriptionKind::embedding) {
            const Vector signal = basis * dir;
            for (int k = 0; k < cfg.descriptions_per_class; ++k) {
                Vector w(D);
                for (Index i = 0; i < D; ++i) w[i] = standard_normal(desc_rng) / std::sqrt(double(D));
                corpus.embeddings[c].push_back(inf * signal + noise * w);
            }
        } else {
            // Attribute words name the dominant latent axes and their signs.
            std::vector<Index> axes(static_cast<std::size_t>(L));
            for (Index j = 0; j < L; ++j) axes[std::size_t(j)] = j;
            std::stable_sort(axes.begin(), axes.end(),
                             [&](Index a, Index b) { return std::abs(dir[a]) > std::abs(dir[b]); });
            const auto n_attr = std::min<std::size_t>(std::size_t(cfg.attributes_per_class), axes.size());
            for (int k = 0; k < cfg.descriptions_per_class; ++k) {
                std::string text;
                for (int t = 0; t < cfg.tokens_per_description; ++t) {
                    if (t) text.push_back(' ');
                    if (uniform01(desc_rng) < inf) {
                        const Index axis = axes[uniform_index(desc_rng, n_attr)];
                        text += "axis" + std::to_string(axis) + (dir[axis] >= 0 ? "_pos" : "_neg");
                    } else {
                        text += "word" + std::to_string(uniform_index(desc_rng, std::uint64_t(cfg.noise_vocabulary)));
                    }
                }
                corpus.texts[c].push_back(std::move(text));
            }
        }
    }
    if (corpus.kind == DescriptionKind::embedding) corpus.embedding_dim = D;

    return {Dataset(cfg.image, std::move(images), std::move(labels), std::move(split)), std::move(corpus),
            std::move(means), std::move(latents), std::move(basis)};
}

}  // namespace vsalign
