#ifndef __TRAJVID_ARCHIVE_HPP__
#define __TRAJVID_ARCHIVE_HPP__

// Single-file container for named tensors plus a JSON metadata blob.
// Used for model checkpoints and per-clip data.  Writes are atomic
// (temp file + rename) and byte-deterministic for identical contents.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajvid/tensor.hpp"

namespace trajvid {

enum class Dtype : uint8_t { f64 = 0, f32 = 1, u8 = 2 };

struct ArchiveEntry {
    std::vector<int64_t> shape;
    Dtype dtype = Dtype::f64;
    std::vector<unsigned char> bytes;

    int64_t numel() const { return numel_of(shape); }
    Tensor as_tensor() const;  // widens to double, no scaling
};

struct Archive {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, ArchiveEntry> tensors;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    void put_f64(const std::string& name, const Tensor& t);
    void put_f32(const std::string& name, const Tensor& t);
    void put_u8(const std::string& name, const std::vector<int64_t>& shape,
                const std::vector<unsigned char>& bytes);
    Tensor get(const std::string& name) const;
    const ArchiveEntry& entry(const std::string& name) const;

    void save(const std::string& path) const;
    static Archive load(const std::string& path);
};

}  // namespace trajvid

#endif
