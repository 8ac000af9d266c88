#pragma once

#include <string>

#include "attnpain/tensor.hpp"

namespace attnpain {

// 8-bit binary PGM (P5) and PPM (P6). Pixel values map to [0, 1] doubles;
// tensors are planar [C x H x W] with C = 1 (gray) or 3 (RGB).

// Reads either format; returns [1,H,W] for P5, [3,H,W] for P6.
Tensor read_image(const std::string& path);

// [1,H,W] or [H,W], values clamped to [0,1] and quantized to 8 bits.
void write_pgm(const Tensor& image, const std::string& path);

// [3,H,W].
void write_ppm(const Tensor& image, const std::string& path);

}  // namespace attnpain
