#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rego/tensor.hpp"

namespace rego {

/// Reads a PNG or JPEG file as an HxWx3 RGB tensor with values in [0,1].
Tensor load_rgb(const std::filesystem::path& path);
/// Reads an image as an HxWx1 grayscale tensor in [0,1].
Tensor load_gray(const std::filesystem::path& path);

/// Writes an HxWx1 or HxWx3 tensor as 8-bit PNG (values clamped to [0,1]).
void save_png(const std::filesystem::path& path, const Tensor& image);

std::vector<std::uint8_t> encode_png(const Tensor& image);
/// Decodes PNG/JPEG bytes to `channels` (1 or 3) planes in [0,1].
Tensor decode_image(const std::vector<std::uint8_t>& bytes, int channels);

/// Round-trips a [0,1] tensor through 8-bit quantization.
Tensor quantize_8bit(const Tensor& image);

/// Area-averaging resize (downscale) or bilinear (upscale).
Tensor resize(const Tensor& image, int height, int width);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Throws IoError on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

bool is_image_file(const std::filesystem::path& path);

}  // namespace rego
