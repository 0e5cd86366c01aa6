#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace vsalign {

using Index = Eigen::Index;

/// Row-major dense matrix; one row per example / embedding.
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixT<double>;
using Vector = VectorT<double>;

/// Broad failure classes. The CLI maps these onto exit codes and prints the
/// class name as the machine-readable prefix of an error line.
enum class ErrorKind {
    io,            // missing / unreadable / unwritable file
    parse,         // malformed record
    validation,    // invariant violated by input data
    degenerate,    // zero-norm vector fed to a cosine
    shape,         // dimension mismatch
    config,        // bad configuration value
    prerequisite,  // an earlier pipeline stage has not produced its artifact
    version,       // checkpoint version tag mismatch
    checksum,      // corrupt checkpoint
    divergence,    // non-finite loss during training
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::io: return "io";
        case ErrorKind::parse: return "parse";
        case ErrorKind::validation: return "validation";
        case ErrorKind::degenerate: return "degenerate";
        case ErrorKind::shape: return "shape";
        case ErrorKind::config: return "config";
        case ErrorKind::prerequisite: return "prerequisite";
        case ErrorKind::version: return "version";
        case ErrorKind::checksum: return "checksum";
        case ErrorKind::divergence: return "divergence";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// 64-bit FNV-1a. Used for checksums and for the toy text encoder's token
/// hashing, so the value must not depend on platform or std::hash.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        state ^= c;
        state *= 0x100000001b3ULL;
    }
    return state;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t state = 0xcbf29ce484222325ULL) {
    return fnv1a64(std::string_view(static_cast<const char*>(data), size), state);
}

template <typename Derived>
std::uint64_t checksum(const Eigen::DenseBase<Derived>& m, std::uint64_t state = 0xcbf29ce484222325ULL) {
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) {
            const double v = static_cast<double>(m(r, c));
            state = fnv1a64(&v, sizeof v, state);
        }
    return state;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.derived().array().isFinite().all();
}

}  // namespace vsalign
