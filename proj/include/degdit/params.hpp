#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "degdit/autodiff.hpp"
#include "degdit/errors.hpp"
#include "degdit/rng.hpp"

namespace degdit {

using ad::Mat;

// Named parameter tensors. Initialization is a pure function of (store seed,
// parameter name), so layouts built in any order come out identical.
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Mat value;
    };

    ParamStore() = default;
    explicit ParamStore(uint64_t seed) : seed_(seed) {}

    uint64_t seed() const { return seed_; }
    void set_seed(uint64_t s) { seed_ = s; }

    int ensure_uniform(const std::string& name, int rows, int cols,
                       int fan_in) {
        auto it = by_name_.find(name);
        if (it != by_name_.end()) return it->second;
        Rng rng = derive_rng(seed_, name);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Mat m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                m(i, j) = rng.uniform(-bound, bound);
        return insert(name, std::move(m));
    }

    int ensure_constant(const std::string& name, int rows, int cols,
                        double value) {
        auto it = by_name_.find(name);
        if (it != by_name_.end()) return it->second;
        return insert(name, Mat::Constant(rows, cols, value));
    }

    int find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? -1 : it->second;
    }

    int count() const { return static_cast<int>(entries_.size()); }
    const Entry& entry(int i) const { return entries_[i]; }
    Mat& value(int i) { return entries_[i].value; }
    const Mat& value(int i) const { return entries_[i].value; }

    size_t total_scalars() const {
        size_t n = 0;
        for (const auto& e : entries_) n += static_cast<size_t>(e.value.size());
        return n;
    }

  private:
    int insert(const std::string& name, Mat m) {
        entries_.push_back(Entry{name, std::move(m)});
        int idx = static_cast<int>(entries_.size() - 1);
        by_name_[name] = idx;
        return idx;
    }

    uint64_t seed_ = 0;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> by_name_;
};

// Binds a store's parameters onto one tape, either as differentiable leaves
// or as constants (reference models). Each parameter becomes a single node so
// gradient accumulation across reuse is automatic.
class Binding {
  public:
    Binding(ad::Tape& tape, const ParamStore& store, bool differentiable = true)
        : tape_(&tape), store_(&store), differentiable_(differentiable),
          cache_(static_cast<size_t>(store.count())) {}

    ad::Var operator()(int param_id) {
        auto& slot = cache_[static_cast<size_t>(param_id)];
        if (!slot.valid()) {
            slot = differentiable_
                       ? tape_->param(param_id, store_->value(param_id))
                       : tape_->constant(store_->value(param_id));
        }
        return slot;
    }

    ad::Tape& tape() { return *tape_; }
    const ParamStore& store() const { return *store_; }
    bool differentiable() const { return differentiable_; }

    // tape-local gradient for a parameter (zeros when untouched); call after
    // Tape::backward
    Mat grad(int param_id) const {
        const auto& slot = cache_[static_cast<size_t>(param_id)];
        if (!slot.valid())
            return Mat::Zero(store_->value(param_id).rows(),
                             store_->value(param_id).cols());
        return tape_->grad(slot);
    }

    // accumulate all touched parameter gradients into a buffer indexed like
    // the store
    void accumulate_grads(std::vector<Mat>& buf, double scale = 1.0) const {
        for (int i = 0; i < store_->count(); ++i) {
            const auto& slot = cache_[static_cast<size_t>(i)];
            if (!slot.valid() || !tape_->has_grad(slot)) continue;
            Mat g = tape_->grad(slot) * scale;
            if (buf[static_cast<size_t>(i)].size() == 0)
                buf[static_cast<size_t>(i)] = std::move(g);
            else
                buf[static_cast<size_t>(i)] += g;
        }
    }

  private:
    ad::Tape* tape_;
    const ParamStore* store_;
    bool differentiable_;
    std::vector<ad::Var> cache_;
};

inline std::vector<Mat> make_grad_buffer(const ParamStore& store) {
    return std::vector<Mat>(static_cast<size_t>(store.count()));
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
};

class Adam {
  public:
    Adam(const ParamStore& store, AdamConfig cfg = {}) : cfg_(cfg) {
        m_.resize(static_cast<size_t>(store.count()));
        v_.resize(static_cast<size_t>(store.count()));
        for (int i = 0; i < store.count(); ++i) {
            m_[i] = Mat::Zero(store.value(i).rows(), store.value(i).cols());
            v_[i] = Mat::Zero(store.value(i).rows(), store.value(i).cols());
        }
    }

    void step(ParamStore& store, const std::vector<Mat>& grads) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (int i = 0; i < store.count(); ++i) {
            const Mat& g = grads[static_cast<size_t>(i)];
            if (g.size() == 0) continue;
            Mat& m = m_[static_cast<size_t>(i)];
            Mat& v = v_[static_cast<size_t>(i)];
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
            Mat mhat = m / c1;
            Mat vhat = v / c2;
            store.value(i) -=
                cfg_.lr *
                mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() +
                                   Mat::Constant(vhat.rows(), vhat.cols(),
                                                 cfg_.eps));
        }
    }

    long steps_taken() const { return t_; }

  private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<Mat> m_, v_;
};

// reference <- decay*reference + (1-decay)*live
inline void ema_update(ParamStore& reference, const ParamStore& live,
                       double decay) {
    if (reference.count() != live.count())
        throw Error(ErrorKind::ShapeMismatch, "ema_update store layouts");
    for (int i = 0; i < live.count(); ++i)
        reference.value(i) =
            decay * reference.value(i) + (1.0 - decay) * live.value(i);
}

// ---- binary tensor container ------------------------------------------
// Layout: magic "DGDT1\n" | u64 LE header length | header JSON | payload of
// little-endian f64. Header: {"seed": ..., "tensors": [{"name", "shape":
// [r,c], "offset"}...], "extra": {...}}. Offsets count doubles from payload
// start. Round-trips are bit-exact.

struct TensorFile {
    uint64_t seed = 0;
    std::vector<std::pair<std::string, Mat>> tensors;
    nlohmann::json extra = nlohmann::json::object();
};

namespace detail {

inline void put_u64_le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline uint64_t get_u64_le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

inline void put_f64_le(std::string& out, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64_le(out, bits);
}

inline double get_f64_le(const unsigned char* p) {
    uint64_t bits = get_u64_le(p);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

constexpr char kTensorMagic[6] = {'D', 'G', 'D', 'T', '1', '\n'};

}  // namespace detail

inline void write_tensor_file(const std::string& path, const TensorFile& tf) {
    nlohmann::json header;
    header["seed"] = tf.seed;
    header["tensors"] = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, m] : tf.tensors) {
        header["tensors"].push_back(
            {{"name", name},
             {"shape", {m.rows(), m.cols()}},
             {"offset", offset}});
        offset += static_cast<uint64_t>(m.size());
    }
    header["extra"] = tf.extra;
    std::string hjson = header.dump();

    std::string buf;
    buf.reserve(16 + hjson.size() + offset * 8);
    buf.append(detail::kTensorMagic, 6);
    detail::put_u64_le(buf, hjson.size());
    buf += hjson;
    for (const auto& [name, m] : tf.tensors) {
        (void)name;
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                detail::put_f64_le(buf, m(r, c));
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::IoError, "cannot write " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw Error(ErrorKind::IoError, "short write " + path);
}

inline TensorFile read_tensor_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::IoError, "cannot read " + path);
    std::string buf((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
    if (buf.size() < 14 || std::memcmp(buf.data(), detail::kTensorMagic, 6) != 0)
        throw Error(ErrorKind::ParseError, "bad tensor file magic: " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    uint64_t hlen = detail::get_u64_le(p + 6);
    if (14 + hlen > buf.size())
        throw Error(ErrorKind::ParseError, "truncated header: " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.substr(14, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ParseError,
                    "tensor header json: " + std::string(e.what()));
    }
    TensorFile tf;
    tf.seed = header.at("seed").get<uint64_t>();
    if (header.contains("extra")) tf.extra = header["extra"];
    const size_t payload = 14 + hlen;
    for (const auto& t : header.at("tensors")) {
        std::string name = t.at("name").get<std::string>();
        long rows = t.at("shape").at(0).get<long>();
        long cols = t.at("shape").at(1).get<long>();
        uint64_t off = t.at("offset").get<uint64_t>();
        Mat m(rows, cols);
        size_t base = payload + off * 8;
        if (base + static_cast<size_t>(m.size()) * 8 > buf.size())
            throw Error(ErrorKind::ParseError, "truncated payload: " + path);
        size_t k = 0;
        for (long r = 0; r < rows; ++r)
            for (long c = 0; c < cols; ++c, ++k)
                m(r, c) = detail::get_f64_le(p + base + k * 8);
        tf.tensors.emplace_back(std::move(name), std::move(m));
    }
    return tf;
}

inline void save_checkpoint(const ParamStore& store, const std::string& path,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    TensorFile tf;
    tf.seed = store.seed();
    tf.extra = extra;
    for (int i = 0; i < store.count(); ++i)
        tf.tensors.emplace_back(store.entry(i).name, store.value(i));
    write_tensor_file(path, tf);
}

// Restores parameter values into a store whose layout was already built by
// the owning models; names must match.
inline void load_checkpoint(ParamStore& store, const std::string& path) {
    TensorFile tf = read_tensor_file(path);
    store.set_seed(tf.seed);
    for (const auto& [name, m] : tf.tensors) {
        int idx = store.find(name);
        if (idx < 0)
            throw Error(ErrorKind::ParseError,
                        "checkpoint tensor not in model: " + name);
        if (store.value(idx).rows() != m.rows() ||
            store.value(idx).cols() != m.cols())
            throw Error(ErrorKind::ShapeMismatch,
                        "checkpoint tensor shape: " + name);
        store.value(idx) = m;
    }
}

}  // namespace degdit
