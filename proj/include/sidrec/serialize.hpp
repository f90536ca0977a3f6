#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "sidrec/tensor.hpp"

// Little binary helpers for checkpoint files (host-endian; files are
// artifacts of one run directory, not an interchange format).
namespace sidrec::ser {

inline void write_u64(std::ostream& o, uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
inline uint64_t read_u64(std::istream& i) {
    uint64_t v = 0;
    i.read(reinterpret_cast<char*>(&v), 8);
    if (!i) throw Error("checkpoint: truncated file (u64)");
    return v;
}

inline void write_string(std::ostream& o, const std::string& s) {
    write_u64(o, s.size());
    o.write(s.data(), std::streamsize(s.size()));
}
inline std::string read_string(std::istream& i) {
    uint64_t n = read_u64(i);
    if (n > (uint64_t(1) << 32)) throw Error("checkpoint: corrupt string length");
    std::string s(n, '\0');
    i.read(s.data(), std::streamsize(n));
    if (!i) throw Error("checkpoint: truncated file (string)");
    return s;
}

inline void write_tensor(std::ostream& o, const num::Tensor& t) {
    write_u64(o, t.shape.size());
    for (size_t e : t.shape) write_u64(o, e);
    write_u64(o, t.data.size());
    o.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(t.data.size() * 8));
}
inline num::Tensor read_tensor(std::istream& i) {
    num::Tensor t;
    uint64_t rank = read_u64(i);
    if (rank > 8) throw Error("checkpoint: corrupt tensor rank");
    for (uint64_t r = 0; r < rank; ++r) t.shape.push_back(read_u64(i));
    uint64_t n = read_u64(i);
    if (n > (uint64_t(1) << 32)) throw Error("checkpoint: corrupt tensor size");
    t.data.resize(n);
    i.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(n * 8));
    if (!i) throw Error("checkpoint: truncated file (tensor)");
    return t;
}

inline void write_tensors(std::ostream& o, const std::vector<num::Tensor>& ts) {
    write_u64(o, ts.size());
    for (const auto& t : ts) write_tensor(o, t);
}
inline std::vector<num::Tensor> read_tensors(std::istream& i) {
    uint64_t n = read_u64(i);
    std::vector<num::Tensor> ts;
    ts.reserve(n);
    for (uint64_t k = 0; k < n; ++k) ts.push_back(read_tensor(i));
    return ts;
}

}  // namespace sidrec::ser
