#ifndef __TRAJVID_IMAGE_IO_HPP__
#define __TRAJVID_IMAGE_IO_HPP__

#include <cstdint>
#include <string>
#include <vector>

#include "trajvid/tensor.hpp"

namespace trajvid {

// rgb is row-major [h][w][3], values 0..255
void write_png(const std::string& path, int64_t width, int64_t height,
               const std::vector<unsigned char>& rgb);

// t: [H, W, 3] with values in [0, 1]; rounds to 0..255
std::vector<unsigned char> to_rgb8(const Tensor& t);

// image: [H, W, 3] in [0, 1]
void write_png(const std::string& path, const Tensor& image);

}  // namespace trajvid

#endif
