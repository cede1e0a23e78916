#pragma once

#include <filesystem>

#include "fxdetect/tensor.hpp"

namespace fxdetect {

// Binary PGM (P5), binary PPM (P6), or an FXT1 tensor blob, detected by
// magic. Pixel values scale to [0,1]; PGM yields c=1, PPM c=3, n is always 1.
Tensor load_image(const std::filesystem::path& path);

// 8-bit binary PGM from a 1x1xHxW real tensor; values clamped to [0,1] and
// scaled to 0..255.
void write_pgm(const std::filesystem::path& path, const Tensor& t);

}  // namespace fxdetect
