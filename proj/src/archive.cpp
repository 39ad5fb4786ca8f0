#include "trajvid/archive.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "trajvid/errors.hpp"

namespace trajvid {

namespace {

constexpr char kMagic[4] = {'T', 'V', 'A', 'R'};
constexpr uint32_t kVersion = 1;

size_t dtype_size(Dtype d) {
    switch (d) {
        case Dtype::f64: return 8;
        case Dtype::f32: return 4;
        case Dtype::u8: return 1;
    }
    throw io_error("unknown dtype tag");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw io_error("archive truncated");
    return v;
}

}  // namespace

Tensor ArchiveEntry::as_tensor() const {
    Tensor t(shape);
    const size_t n = t.data.size();
    switch (dtype) {
        case Dtype::f64:
            std::memcpy(t.data.data(), bytes.data(), n * 8);
            break;
        case Dtype::f32: {
            const float* p = reinterpret_cast<const float*>(bytes.data());
            for (size_t i = 0; i < n; ++i) t.data[i] = static_cast<double>(p[i]);
            break;
        }
        case Dtype::u8:
            for (size_t i = 0; i < n; ++i) t.data[i] = static_cast<double>(bytes[i]);
            break;
    }
    return t;
}

void Archive::put_f64(const std::string& name, const Tensor& t) {
    ArchiveEntry e;
    e.shape = t.shape;
    e.dtype = Dtype::f64;
    e.bytes.resize(t.data.size() * 8);
    std::memcpy(e.bytes.data(), t.data.data(), e.bytes.size());
    tensors[name] = std::move(e);
}

void Archive::put_f32(const std::string& name, const Tensor& t) {
    ArchiveEntry e;
    e.shape = t.shape;
    e.dtype = Dtype::f32;
    e.bytes.resize(t.data.size() * 4);
    float* p = reinterpret_cast<float*>(e.bytes.data());
    for (size_t i = 0; i < t.data.size(); ++i) p[i] = static_cast<float>(t.data[i]);
    tensors[name] = std::move(e);
}

void Archive::put_u8(const std::string& name, const std::vector<int64_t>& shape,
                     const std::vector<unsigned char>& bytes) {
    if (numel_of(shape) != static_cast<int64_t>(bytes.size()))
        throw validation_error("archive entry '" + name + "': byte count " +
                               std::to_string(bytes.size()) + " does not match shape " +
                               shape_str(shape));
    ArchiveEntry e;
    e.shape = shape;
    e.dtype = Dtype::u8;
    e.bytes = bytes;
    tensors[name] = std::move(e);
}

const ArchiveEntry& Archive::entry(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw io_error("archive has no entry named '" + name + "'");
    return it->second;
}

Tensor Archive::get(const std::string& name) const { return entry(name).as_tensor(); }

void Archive::save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw io_error("cannot open '" + tmp + "' for writing");
        os.write(kMagic, 4);
        write_pod<uint32_t>(os, kVersion);
        const std::string meta_str = meta.dump();
        write_pod<uint64_t>(os, meta_str.size());
        os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
        write_pod<uint64_t>(os, tensors.size());
        for (const auto& [name, e] : tensors) {
            write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_pod<uint8_t>(os, static_cast<uint8_t>(e.dtype));
            write_pod<uint32_t>(os, static_cast<uint32_t>(e.shape.size()));
            for (int64_t d : e.shape) write_pod<int64_t>(os, d);
            write_pod<uint64_t>(os, e.bytes.size());
            os.write(reinterpret_cast<const char*>(e.bytes.data()),
                     static_cast<std::streamsize>(e.bytes.size()));
        }
        if (!os) throw io_error("write failed for '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw io_error("cannot rename '" + tmp + "' to '" + path + "'");
}

Archive Archive::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw io_error("'" + path + "' is not an archive file");
    const uint32_t version = read_pod<uint32_t>(is);
    if (version != kVersion)
        throw io_error("'" + path + "' has unsupported archive version " +
                       std::to_string(version));
    Archive a;
    const uint64_t meta_len = read_pod<uint64_t>(is);
    std::string meta_str(meta_len, '\0');
    is.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    if (!is) throw io_error("archive truncated");
    a.meta = nlohmann::json::parse(meta_str, nullptr, false);
    if (a.meta.is_discarded()) throw io_error("archive metadata is not valid JSON");
    const uint64_t count = read_pod<uint64_t>(is);
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_pod<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        ArchiveEntry e;
        const uint8_t dtag = read_pod<uint8_t>(is);
        if (dtag > 2) throw io_error("archive entry '" + name + "' has unknown dtype");
        e.dtype = static_cast<Dtype>(dtag);
        const uint32_t ndim = read_pod<uint32_t>(is);
        e.shape.resize(ndim);
        for (uint32_t d = 0; d < ndim; ++d) e.shape[d] = read_pod<int64_t>(is);
        const uint64_t blen = read_pod<uint64_t>(is);
        if (blen != static_cast<uint64_t>(e.numel()) * dtype_size(e.dtype))
            throw io_error("archive entry '" + name + "' has inconsistent payload size");
        e.bytes.resize(blen);
        is.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(blen));
        if (!is) throw io_error("archive truncated");
        a.tensors[name] = std::move(e);
    }
    return a;
}

}  // namespace trajvid
