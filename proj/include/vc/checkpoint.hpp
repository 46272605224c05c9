#ifndef VC_CHECKPOINT_HPP
#define VC_CHECKPOINT_HPP

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "vc/tensor.hpp"

namespace vc {

// Flat binary archive: "VCKP" magic, version, then (name, dtype, shape,
// little-endian payload) entries sorted by name so identical state always
// produces identical bytes. Everything a run needs to resume or sample is
// stored through this one format: parameters, optimizer moments, schedule
// arrays and scalar config fields.

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

struct ArchiveEntry {
    std::string name;
    Dtype dtype = Dtype::f32;
    std::vector<int> shape;
    std::vector<unsigned char> bytes;
};

void write_archive(const std::string& path, std::vector<ArchiveEntry> entries);
std::vector<ArchiveEntry> read_archive(const std::string& path);

// Named parameter set. std::map keeps iteration order stable, which the
// optimizer and the archive writer both rely on.
template <class T>
struct ParamStore {
    std::map<std::string, Tensor<T>> items;

    Tensor<T>& add(const std::string& name, Tensor<T> t, bool trainable = true) {
        if (items.count(name)) throw std::runtime_error("params: duplicate name " + name);
        if (trainable) t.set_requires_grad(true);
        return items.emplace(name, std::move(t)).first->second;
    }

    bool has(const std::string& name) const { return items.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = items.find(name);
        if (it == items.end()) throw std::runtime_error("params: unknown name " + name);
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = items.find(name);
        if (it == items.end()) throw std::runtime_error("params: unknown name " + name);
        return it->second;
    }

    int64_t scalar_count() const {
        int64_t n = 0;
        for (const auto& [k, v] : items) n += v.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [k, v] : items) v.zero_grad();
    }
};

template <class T>
ArchiveEntry to_entry(const std::string& name, const Tensor<T>& t) {
    ArchiveEntry e;
    e.name = name;
    e.dtype = sizeof(T) == 4 ? Dtype::f32 : Dtype::f64;
    e.shape = t.shape();
    e.bytes.resize((size_t)t.numel() * sizeof(T));
    std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
    return e;
}

template <class T>
Tensor<T> from_entry(const ArchiveEntry& e) {
    Tensor<T> t = Tensor<T>::zeros(e.shape);
    if ((e.dtype == Dtype::f32 && sizeof(T) == 4) || (e.dtype == Dtype::f64 && sizeof(T) == 8)) {
        std::memcpy(t.data(), e.bytes.data(), e.bytes.size());
    } else if (e.dtype == Dtype::f32) {
        const float* src = reinterpret_cast<const float*>(e.bytes.data());
        for (int64_t i = 0; i < t.numel(); i++) t.at(i) = (T)src[i];
    } else {
        const double* src = reinterpret_cast<const double*>(e.bytes.data());
        for (int64_t i = 0; i < t.numel(); i++) t.at(i) = (T)src[i];
    }
    return t;
}

template <class T>
void append_params(std::vector<ArchiveEntry>& out, const ParamStore<T>& store) {
    for (const auto& [name, t] : store.items) out.push_back(to_entry(name, t));
}

// Copies archive values into existing tensors of the store, by name.
// Shapes must match; names in the store but not the archive are an error,
// extra archive entries are ignored (they belong to other sections).
template <class T>
void load_params(const std::vector<ArchiveEntry>& entries, ParamStore<T>& store) {
    std::map<std::string, const ArchiveEntry*> index;
    for (const auto& e : entries) index[e.name] = &e;
    for (auto& [name, t] : store.items) {
        auto it = index.find(name);
        if (it == index.end()) throw std::runtime_error("checkpoint: missing entry " + name);
        const ArchiveEntry& e = *it->second;
        if (e.shape != t.shape())
            throw std::runtime_error("checkpoint: entry " + name + " has shape " + shape_str(e.shape) +
                                     ", expected " + shape_str(t.shape()));
        Tensor<T> v = from_entry<T>(e);
        std::copy(v.data(), v.data() + v.numel(), t.data());
    }
}

} // namespace vc

#endif
