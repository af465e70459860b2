#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rtd/nn.hpp"

namespace rtd {

// Parameter checkpoint format:
//   magic "RTDW", version u32, count u32, then per parameter:
//   name length u16, name bytes, rank u8, dims u32 each, values f64 LE.
// All integers little-endian.
namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(os, buf, sizeof(T));
}

inline void put_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_le<std::uint64_t>(os, bits);
}

template <typename T>
bool get_le(std::istream& is, T& v) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
    v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return true;
}

inline bool get_f64(std::istream& is, double& d) {
    std::uint64_t bits;
    if (!get_le(is, bits)) return false;
    std::memcpy(&d, &bits, 8);
    return true;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Writes all parameters, or only those whose name starts with name_prefix
// when it is non-empty (used to emit TEM-only checkpoints).
inline void save_checkpoint(const ParamStore& store, const std::string& path,
                            const std::string& name_prefix = "") {
    std::vector<std::size_t> selected;
    for (std::size_t i = 0; i < store.size(); ++i)
        if (name_prefix.empty() || store.at(i).name.rfind(name_prefix, 0) == 0)
            selected.push_back(i);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("RTDW", 4);
    detail::put_le<std::uint32_t>(os, kCheckpointVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(selected.size()));
    for (std::size_t i : selected) {
        const Parameter& p = store.at(i);
        detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
        detail::put_bytes(os, p.name.data(), p.name.size());
        const auto& shape = p.value.shape();
        detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(shape.size()));
        for (std::size_t d : shape) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        for (std::size_t j = 0; j < p.value.size(); ++j) detail::put_f64(os, p.value[j]);
    }
    if (!os) throw IoError("write failed: " + path);
}

// Loads values into an existing store. Every parameter found in the file
// must exist in the store with a matching shape; parameters of the store
// missing from the file are left untouched (reported via return count).
inline std::size_t load_checkpoint(ParamStore& store, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "RTDW", 4) != 0)
        throw FormatError("bad checkpoint magic in " + path);
    std::uint32_t version = 0, count = 0;
    if (!detail::get_le(is, version) || version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version in " + path);
    if (!detail::get_le(is, count)) throw FormatError("truncated checkpoint header in " + path);
    std::size_t loaded = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint16_t name_len = 0;
        if (!detail::get_le(is, name_len)) throw FormatError("truncated checkpoint: " + path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw FormatError("truncated checkpoint: " + path);
        std::uint8_t rank = 0;
        if (!detail::get_le(is, rank)) throw FormatError("truncated checkpoint: " + path);
        std::vector<std::size_t> shape(rank);
        std::size_t total = 1;
        for (std::uint8_t r = 0; r < rank; ++r) {
            std::uint32_t d = 0;
            if (!detail::get_le(is, d)) throw FormatError("truncated checkpoint: " + path);
            shape[r] = d;
            total *= d;
        }
        std::vector<double> values(total);
        for (std::size_t j = 0; j < total; ++j)
            if (!detail::get_f64(is, values[j])) throw FormatError("truncated checkpoint: " + path);
        if (!store.contains(name)) throw FormatError("checkpoint parameter unknown to model: " + name);
        Parameter& p = store.get(name);
        if (p.value.shape() != shape)
            throw FormatError("checkpoint shape mismatch for " + name);
        for (std::size_t j = 0; j < total; ++j) p.value[j] = values[j];
        ++loaded;
    }
    return loaded;
}

}  // namespace rtd
