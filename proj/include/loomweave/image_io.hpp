#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loomweave/tensor.hpp"

namespace loomweave {

struct Image8 {
    int rows = 0, cols = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

/// [0,1] HxWx3 tensor -> 8-bit (round half up), and back (v / 255).
Image8 to_image8(const Tensor& hwc);
Tensor to_tensor01(const Image8& img);

void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

/// Min-max normalized grayscale dump of an HxW slice (dump-triplane helper).
void write_png_gray_normalized(const std::string& path, const Tensor& hw);

}  // namespace loomweave
