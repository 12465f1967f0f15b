#pragma once

// Grayscale PNG I/O. Intensities map to [0,1] by the file's bit depth.

#include <cstdint>
#include <string>

#include "ufcn/tensor.hpp"

namespace ufcn {

// Reads an 8- or 16-bit grayscale PNG (RGB/alpha are converted to gray).
Tensor<float> read_png_gray(const std::string& path);

// Reads a PNG as a binary mask: any nonzero pixel is 1.
Tensor<std::uint8_t> read_png_mask(const std::string& path);

// Values are clamped to [0,1] and quantized; bit_depth is 8 or 16.
void write_png_gray(const std::string& path, const Tensor<float>& image, int bit_depth = 8);

// Writes {0,1} masks as {0,255}.
void write_png_mask(const std::string& path, const Tensor<std::uint8_t>& mask);

// 3 x H x W tensor of RGB bytes.
void write_png_rgb(const std::string& path, const Tensor<std::uint8_t>& rgb);

}  // namespace ufcn
