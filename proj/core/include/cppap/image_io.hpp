#pragma once

#include <string>

#include "cppap/tensor.hpp"

namespace cppap {

// 8-bit RGB raster -> [H,W,3] tensor with values in [0,1].
// Dispatches on extension: .png (libpng) or .ppm (binary P6).
Tensor read_image(const std::string& path);
Tensor read_ppm(const std::string& path);
Tensor read_png(const std::string& path);
void write_ppm(const std::string& path, const Tensor& img);

// Raw float64 tensor files ("CTEN1\0" magic), used for cached model inputs.
Tensor load_tensor(const std::string& path);
void save_tensor(const std::string& path, const Tensor& t);

}  // namespace cppap
