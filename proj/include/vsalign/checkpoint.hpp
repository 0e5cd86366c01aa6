#pragma once

// Checkpoint container:
//   "VSALCKPT" | u32 version | u64 payload size | payload | u64 FNV-1a(payload)
// The payload stores the encoder architecture, each named weight array with
// its shape, and the remaining TrainState fields. Integers and doubles are
// written in host (little-endian) byte order.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "training.hpp"

namespace vsalign {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
    template <typename T>
    void pod(const T& v) {
        buf_.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void str(const std::string& s) {
        pod(std::uint64_t(s.size()));
        buf_.append(s);
    }
    void vec(const Vector& v) {
        pod(std::uint64_t(v.size()));
        buf_.append(reinterpret_cast<const char*>(v.data()), sizeof(double) * std::size_t(v.size()));
    }
    template <typename T>
    void list(const std::vector<T>& v) {
        pod(std::uint64_t(v.size()));
        for (const auto& x : v) pod(x);
    }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view b) : b_(b) {}

    template <typename T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof v);
        pos_ += sizeof v;
        return v;
    }
    std::string str() {
        const auto n = std::size_t(pod<std::uint64_t>());
        need(n);
        std::string s(b_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    Vector vec() {
        const auto n = std::size_t(pod<std::uint64_t>());
        need(n * sizeof(double));
        Vector v(static_cast<Index>(n));
        std::memcpy(v.data(), b_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return v;
    }
    template <typename T>
    std::vector<T> list() {
        const auto n = std::size_t(pod<std::uint64_t>());
        need(n * sizeof(T));
        std::vector<T> v(n);
        for (auto& x : v) x = pod<T>();
        return v;
    }
    bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw Error(ErrorKind::checksum, "checkpoint payload ends early");
    }
    std::string_view b_;
    std::size_t pos_ = 0;
};

inline void write_optim(ByteWriter& w, const Sgd& s) {
    w.pod(s.momentum);
    w.pod(s.weight_decay);
    w.vec(s.buffer);
}
inline Sgd read_sgd(ByteReader& r) {
    Sgd s;
    s.momentum = r.pod<double>();
    s.weight_decay = r.pod<double>();
    s.buffer = r.vec();
    return s;
}
inline void write_optim(ByteWriter& w, const Adam& a) {
    w.pod(a.beta1);
    w.pod(a.beta2);
    w.pod(a.epsilon);
    w.vec(a.m);
    w.vec(a.v);
    w.pod(std::int64_t(a.t));
}
inline Adam read_adam(ByteReader& r) {
    Adam a;
    a.beta1 = r.pod<double>();
    a.beta2 = r.pod<double>();
    a.epsilon = r.pod<double>();
    a.m = r.vec();
    a.v = r.vec();
    a.t = r.pod<std::int64_t>();
    return a;
}

}  // namespace detail

inline std::string serialize_state(const TrainState& s) {
    detail::ByteWriter w;
    const auto& ec = s.encoder.config();
    w.str(std::string(to_string(ec.architecture)));
    w.pod(std::int32_t(ec.input.height));
    w.pod(std::int32_t(ec.input.width));
    w.pod(std::int32_t(ec.input.channels));
    w.pod(std::int32_t(ec.output_dim));
    w.list(std::vector<std::int32_t>(ec.hidden.begin(), ec.hidden.end()));
    w.pod(std::int32_t(ec.conv_width));

    w.pod(std::uint64_t(s.encoder.slots().size()));
    for (const auto& slot : s.encoder.slots()) {
        w.str(slot.name);
        w.list(std::vector<std::int64_t>(slot.shape.begin(), slot.shape.end()));
        w.vec(s.encoder.params().segment(slot.offset, slot.size));
    }

    w.str(s.stage);
    w.vec(s.head);
    w.list(std::vector<std::int32_t>(s.classifier_classes.begin(), s.classifier_classes.end()));
    w.pod(s.log_tau_cls);
    detail::write_optim(w, s.sgd_encoder);
    detail::write_optim(w, s.sgd_head);
    detail::write_optim(w, s.adam_encoder);
    detail::write_optim(w, s.adam_tau);
    w.pod(std::int32_t(s.epoch));
    w.pod(std::int64_t(s.step));
    w.str(s.rng_state);
    w.pod(std::uint64_t(s.history.size()));
    for (const auto& m : s.history) {
        w.str(m.stage);
        w.str(m.kind);
        w.pod(std::int32_t(m.epoch));
        w.pod(std::int64_t(m.step));
        for (double v : {m.class_loss, m.vs_loss, m.total, m.accuracy, m.lr, m.tau_cls}) w.pod(v);
    }
    w.vec(s.best_params);
    w.pod(s.best_val_accuracy);
    return w.bytes();
}

inline TrainState deserialize_state(std::string_view payload) {
    detail::ByteReader r(payload);
    EncoderConfig ec;
    ec.architecture = parse_architecture(r.str());
    ec.input.height = r.pod<std::int32_t>();
    ec.input.width = r.pod<std::int32_t>();
    ec.input.channels = r.pod<std::int32_t>();
    ec.output_dim = r.pod<std::int32_t>();
    const auto hidden = r.list<std::int32_t>();
    ec.hidden.assign(hidden.begin(), hidden.end());
    ec.conv_width = r.pod<std::int32_t>();

    TrainState s;
    s.encoder = VisualEncoder(ec);
    const auto n_slots = r.pod<std::uint64_t>();
    if (n_slots != s.encoder.slots().size())
        throw Error(ErrorKind::shape, "checkpoint holds " + std::to_string(n_slots) + " weight arrays, " +
                                          std::string(to_string(ec.architecture)) + " has " +
                                          std::to_string(s.encoder.slots().size()));
    for (const auto& slot : s.encoder.slots()) {
        const std::string name = r.str();
        const auto shape = r.list<std::int64_t>();
        const Vector data = r.vec();
        if (name != slot.name || std::vector<Index>(shape.begin(), shape.end()) != slot.shape ||
            data.size() != slot.size)
            throw Error(ErrorKind::shape, "checkpoint weight '" + name + "' does not match architecture slot '" +
                                              slot.name + "'");
        s.encoder.params().segment(slot.offset, slot.size) = data;
    }

    s.stage = r.str();
    s.head = r.vec();
    const auto classes = r.list<std::int32_t>();
    s.classifier_classes.assign(classes.begin(), classes.end());
    s.log_tau_cls = r.pod<double>();
    s.sgd_encoder = detail::read_sgd(r);
    s.sgd_head = detail::read_sgd(r);
    s.adam_encoder = detail::read_adam(r);
    s.adam_tau = detail::read_adam(r);
    s.epoch = r.pod<std::int32_t>();
    s.step = r.pod<std::int64_t>();
    s.rng_state = r.str();
    const auto n_hist = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_hist; ++i) {
        MetricRecord m;
        m.stage = r.str();
        m.kind = r.str();
        m.epoch = r.pod<std::int32_t>();
        m.step = r.pod<std::int64_t>();
        m.class_loss = r.pod<double>();
        m.vs_loss = r.pod<double>();
        m.total = r.pod<double>();
        m.accuracy = r.pod<double>();
        m.lr = r.pod<double>();
        m.tau_cls = r.pod<double>();
        s.history.push_back(std::move(m));
    }
    s.best_params = r.vec();
    s.best_val_accuracy = r.pod<double>();
    if (!r.done()) throw Error(ErrorKind::checksum, "checkpoint payload has trailing bytes");
    return s;
}

inline void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
    const std::string payload = serialize_state(state);
    const std::uint64_t size = payload.size();
    const std::uint64_t sum = fnv1a64(payload);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write checkpoint " + path.string());
    out.write("VSALCKPT", 8);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), 4);
    out.write(reinterpret_cast<const char*>(&size), 8);
    out.write(payload.data(), std::streamsize(payload.size()));
    out.write(reinterpret_cast<const char*>(&sum), 8);
    if (!out) throw Error(ErrorKind::io, "failed writing checkpoint " + path.string());
}

/// Either returns the complete state or throws; never a partial state.
inline TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || bytes.compare(0, 8, "VSALCKPT") != 0)
        throw Error(ErrorKind::parse, path.string() + " is not a checkpoint");
    std::uint32_t version;
    std::memcpy(&version, bytes.data() + 8, 4);
    if (version != kCheckpointVersion)
        throw Error(ErrorKind::version, path.string() + ": checkpoint version " + std::to_string(version) +
                                            ", this build reads version " + std::to_string(kCheckpointVersion));
    std::uint64_t size = 0, sum = 0;
    if (bytes.size() < 20) throw Error(ErrorKind::checksum, path.string() + ": truncated checkpoint");
    std::memcpy(&size, bytes.data() + 12, 8);
    if (bytes.size() != 20 + size + 8) throw Error(ErrorKind::checksum, path.string() + ": truncated checkpoint");
    std::memcpy(&sum, bytes.data() + 20 + size, 8);
    const std::string_view payload(bytes.data() + 20, std::size_t(size));
    if (fnv1a64(payload) != sum) throw Error(ErrorKind::checksum, path.string() + ": checksum mismatch");
    try {
        return deserialize_state(payload);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

}  // namespace vsalign
