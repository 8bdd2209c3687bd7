#pragma once

#include <string>
#include <vector>

#include "smallobj/tensor.hpp"

namespace smallobj {

// Interleaved 8-bit RGB rows, top to bottom.
struct ImageBytes {
    int width = 0;
    int height = 0;
    std::vector<unsigned char> rgb;  // 3 * width * height
};

// Minimal PNG codec: writes 8-bit truecolor with filter 0; reads 8-bit
// grayscale or truecolor, any scanline filter, no interlace.
void write_png_rgb8(const std::string& path, const ImageBytes& image);
ImageBytes read_png_rgb8(const std::string& path);

// 3xHxW tensor in [0,1] <-> 8-bit RGB.
Tensor image_to_tensor(const ImageBytes& image);
ImageBytes tensor_to_image(const Tensor& t);

// Raw float32 tensor dump ("SOTEN001" header, little-endian).
void save_tensor_raw(const std::string& path, const Tensor& t);
Tensor load_tensor_raw(const std::string& path);

}  // namespace smallobj
