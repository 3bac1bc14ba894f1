#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "error.hpp"
#include "segnet.hpp"

namespace stvm {

/// Flat archive of named float32 arrays plus a string metadata record.
///
/// Layout (all integers little-endian):
///   "STVMCKPT" | u32 version | u32 n_meta | n_meta × (str key, str value)
///   | u32 n_arrays | n_arrays × (str name, u32 ndim, ndim × u32 dim, f32 data)
/// where `str` is a u32 byte length followed by the bytes.
class Archive {
public:
    struct Array {
        std::vector<std::uint32_t> shape;
        std::vector<float> data;
    };

    static constexpr std::uint32_t kVersion = 1;

    std::map<std::string, std::string> meta;

    void put(const std::string& name, std::vector<std::uint32_t> shape, std::vector<float> data) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        if (n != data.size()) throw ShapeError("archive: shape does not match data for " + name);
        if (!arrays_.count(name)) order_.push_back(name);
        arrays_[name] = {std::move(shape), std::move(data)};
    }

    template <typename T>
    void put_matrix(const std::string& name, const Matrix<T>& m) {
        std::vector<float> v(static_cast<std::size_t>(m.size()));
        for (Eigen::Index i = 0; i < m.size(); ++i) v[i] = static_cast<float>(m.data()[i]);
        put(name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, std::move(v));
    }

    bool has(const std::string& name) const { return arrays_.count(name) > 0; }

    const Array& get(const std::string& name) const {
        auto it = arrays_.find(name);
        if (it == arrays_.end()) throw DataError("archive: missing array " + name);
        return it->second;
    }

    template <typename T>
    Matrix<T> get_matrix(const std::string& name) const {
        const Array& a = get(name);
        if (a.shape.size() != 2) throw ShapeError("archive: " + name + " is not a matrix");
        Matrix<T> m(a.shape[0], a.shape[1]);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(a.data[i]);
        return m;
    }

    const std::string& meta_at(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) throw DataError("archive: missing metadata " + key);
        return it->second;
    }

    const std::vector<std::string>& names() const { return order_; }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write " + path);
        os.write("STVMCKPT", 8);
        write_u32(os, kVersion);
        write_u32(os, static_cast<std::uint32_t>(meta.size()));
        for (const auto& [k, v] : meta) {
            write_str(os, k);
            write_str(os, v);
        }
        write_u32(os, static_cast<std::uint32_t>(order_.size()));
        for (const auto& name : order_) {
            const Array& a = arrays_.at(name);
            write_str(os, name);
            write_u32(os, static_cast<std::uint32_t>(a.shape.size()));
            for (auto d : a.shape) write_u32(os, d);
            for (float f : a.data) write_u32(os, std::bit_cast<std::uint32_t>(f));
        }
        if (!os) throw IoError("write failed for " + path);
    }

    static Archive load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("cannot open checkpoint " + path);
        char magic[8];
        is.read(magic, 8);
        if (!is || std::memcmp(magic, "STVMCKPT", 8) != 0) throw DataError(path + " is not a checkpoint archive");
        if (read_u32(is) != kVersion) throw DataError(path + ": unsupported archive version");
        Archive ar;
        const std::uint32_t n_meta = read_u32(is);
        for (std::uint32_t i = 0; i < n_meta; ++i) {
            std::string k = read_str(is);
            ar.meta[k] = read_str(is);
        }
        const std::uint32_t n = read_u32(is);
        for (std::uint32_t i = 0; i < n; ++i) {
            std::string name = read_str(is);
            const std::uint32_t ndim = read_u32(is);
            std::vector<std::uint32_t> shape(ndim);
            std::size_t count = 1;
            for (auto& d : shape) {
                d = read_u32(is);
                count *= d;
            }
            std::vector<float> data(count);
            for (auto& f : data) f = std::bit_cast<float>(read_u32(is));
            ar.put(name, std::move(shape), std::move(data));
        }
        return ar;
    }

private:
    std::map<std::string, Array> arrays_;
    std::vector<std::string> order_;

    static void write_u32(std::ostream& os, std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
    }
    static std::uint32_t read_u32(std::istream& is) {
        unsigned char b[4];
        is.read(reinterpret_cast<char*>(b), 4);
        if (!is) throw DataError("truncated checkpoint");
        return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    static void write_str(std::ostream& os, const std::string& s) {
        write_u32(os, static_cast<std::uint32_t>(s.size()));
        os.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    static std::string read_str(std::istream& is) {
        const std::uint32_t n = read_u32(is);
        if (n > (1u << 28)) throw DataError("corrupt checkpoint string");
        std::string s(n, '\0');
        is.read(s.data(), n);
        if (!is) throw DataError("truncated checkpoint");
        return s;
    }
};

template <typename T>
void put_params(Archive& ar, const std::string& prefix, const NetworkParams<T>& net) {
    for (const auto& p : net.params) ar.put_matrix(prefix + p.name, p.value);
}

/// Fills `net` (whose structure defines what to read) from the archive.
template <typename T>
void get_params(const Archive& ar, const std::string& prefix, NetworkParams<T>& net) {
    for (auto& p : net.params) {
        Matrix<T> m = ar.get_matrix<T>(prefix + p.name);
        if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
            throw ShapeError("checkpoint: shape mismatch for " + prefix + p.name);
        p.value = std::move(m);
    }
}

inline void put_arch(Archive& ar, const ArchConfig& a) {
    ar.meta["arch.num_classes"] = std::to_string(a.num_classes);
    ar.meta["arch.feature_dim"] = std::to_string(a.feature_dim);
    ar.meta["arch.metric_dim"] = std::to_string(a.metric_dim);
    ar.meta["arch.base_width"] = std::to_string(a.base_width);
}

inline ArchConfig get_arch(const Archive& ar) {
    ArchConfig a;
    a.num_classes = std::stoi(ar.meta_at("arch.num_classes"));
    a.feature_dim = std::stoi(ar.meta_at("arch.feature_dim"));
    a.metric_dim = std::stoi(ar.meta_at("arch.metric_dim"));
    a.base_width = std::stoi(ar.meta_at("arch.base_width"));
    a.validate();
    return a;
}

/// Network checkpoint: parameters + arch config + seed + iteration.
template <typename T>
void save_network(const std::string& path, const NetworkParams<T>& net, const ArchConfig& arch, std::uint64_t seed,
                  long iteration) {
    Archive ar;
    put_arch(ar, arch);
    ar.meta["seed"] = std::to_string(seed);
    ar.meta["iteration"] = std::to_string(iteration);
    put_params(ar, "net.", net);
    ar.save(path);
}

struct LoadedNetwork {
    NetworkParams<float> params;
    ArchConfig arch;
    std::uint64_t seed = 0;
    long iteration = 0;
};

inline LoadedNetwork load_network(const std::string& path) {
    Archive ar = Archive::load(path);
    LoadedNetwork out;
    out.arch = get_arch(ar);
    out.seed = std::stoull(ar.meta_at("seed"));
    out.iteration = std::stol(ar.meta_at("iteration"));
    out.params = init_network<float>(out.arch, 0);
    get_params(ar, "net.", out.params);
    return out;
}

} // namespace stvm
