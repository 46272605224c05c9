#include "vc/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "archive payloads are written as native little-endian");

namespace vc {

namespace {
constexpr char kMagic[4] = {'V', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

template <class V>
void put(std::ofstream& f, V v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::ifstream& f) {
    V v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!f) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
} // namespace

void write_archive(const std::string& path, std::vector<ArchiveEntry> entries) {
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    for (size_t i = 1; i < entries.size(); i++)
        if (entries[i].name == entries[i - 1].name)
            throw std::runtime_error("checkpoint: duplicate entry " + entries[i].name);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write(kMagic, 4);
    put<uint32_t>(f, kVersion);
    put<uint64_t>(f, entries.size());
    for (const auto& e : entries) {
        put<uint32_t>(f, (uint32_t)e.name.size());
        f.write(e.name.data(), (std::streamsize)e.name.size());
        put<uint8_t>(f, (uint8_t)e.dtype);
        put<uint32_t>(f, (uint32_t)e.shape.size());
        int64_t n = 1;
        for (int d : e.shape) {
            put<uint32_t>(f, (uint32_t)d);
            n *= d;
        }
        size_t esz = e.dtype == Dtype::f32 ? 4 : 8;
        if (e.bytes.size() != (size_t)n * esz)
            throw std::runtime_error("checkpoint: entry " + e.name + " payload does not match shape");
        put<uint64_t>(f, (uint64_t)e.bytes.size());
        f.write(reinterpret_cast<const char*>(e.bytes.data()), (std::streamsize)e.bytes.size());
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<ArchiveEntry> read_archive(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t ver = get<uint32_t>(f);
    if (ver != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ver) + " in " + path);
    uint64_t count = get<uint64_t>(f);
    std::vector<ArchiveEntry> entries;
    entries.reserve(count);
    for (uint64_t i = 0; i < count; i++) {
        ArchiveEntry e;
        uint32_t nl = get<uint32_t>(f);
        e.name.resize(nl);
        f.read(e.name.data(), nl);
        uint8_t dt = get<uint8_t>(f);
        if (dt > 1) throw std::runtime_error("checkpoint: unknown dtype tag " + std::to_string(dt));
        e.dtype = (Dtype)dt;
        uint32_t rank = get<uint32_t>(f);
        e.shape.resize(rank);
        for (uint32_t r = 0; r < rank; r++) e.shape[r] = (int)get<uint32_t>(f);
        uint64_t bytes = get<uint64_t>(f);
        e.bytes.resize(bytes);
        f.read(reinterpret_cast<char*>(e.bytes.data()), (std::streamsize)bytes);
        if (!f) throw std::runtime_error("checkpoint: truncated file");
        entries.push_back(std::move(e));
    }
    return entries;
}

} // namespace vc
