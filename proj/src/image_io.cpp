#include "trajvid/image_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "trajvid/errors.hpp"

namespace trajvid {

namespace {

void put_u32_be(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& payload) {
    put_u32_be(out, static_cast<uint32_t>(payload.size()));
    const size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
    put_u32_be(out, crc);
}

}  // namespace

void write_png(const std::string& path, int64_t width, int64_t height,
               const std::vector<unsigned char>& rgb) {
    if (width <= 0 || height <= 0)
        throw validation_error("png: image dimensions must be positive");
    if (static_cast<int64_t>(rgb.size()) != width * height * 3)
        throw validation_error("png: pixel buffer size does not match " + std::to_string(width) +
                               "x" + std::to_string(height));

    // raw scanlines, filter byte 0 per row
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<size_t>(height * (1 + width * 3)));
    for (int64_t y = 0; y < height; ++y) {
        raw.push_back(0);
        const unsigned char* row = rgb.data() + y * width * 3;
        raw.insert(raw.end(), row, row + width * 3);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw io_error("png: deflate failed");
    comp.resize(comp_len);

    std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<unsigned char> ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(width));
    put_u32_be(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", comp);
    put_chunk(out, "IEND", {});

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open '" + path + "' for writing");
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) throw io_error("write failed for '" + path + "'");
}

std::vector<unsigned char> to_rgb8(const Tensor& t) {
    if (t.ndim() != 3 || t.shape[2] != 3)
        throw validation_error("to_rgb8: expected [h, w, 3], got " + shape_str(t.shape));
    std::vector<unsigned char> out(t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i) {
        double v = std::round(t.data[i] * 255.0);
        if (v < 0.0) v = 0.0;
        if (v > 255.0) v = 255.0;
        out[i] = static_cast<unsigned char>(v);
    }
    return out;
}

void write_png(const std::string& path, const Tensor& image) {
    write_png(path, image.shape[1], image.shape[0], to_rgb8(image));
}

}  // namespace trajvid
