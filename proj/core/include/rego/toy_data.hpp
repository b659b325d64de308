#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rego/dataprep.hpp"

namespace rego {

/// Seeded procedural landscape (sky gradient, sun, ridge lines, ground
/// texture), quantized to 8 bits so it survives a PNG round trip exactly.
Tensor make_toy_scene(int height, int width, std::uint64_t seed);

/// Ids are "toy_000", "toy_001", ...
std::vector<ImageSample> make_toy_set(int count, int height, int width, std::uint64_t seed);

/// Writes make_toy_set() as <id>.png files into `dir`.
void write_toy_images(const std::filesystem::path& dir, int count, int height, int width, std::uint64_t seed);

}  // namespace rego
