#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "moeisr/image.hpp"

namespace moeisr {

using Rgb8 = std::array<unsigned char, 3>;

/// Expert 1..4: yellow, green, blue, red (shallowest to deepest).
const std::vector<Rgb8>& default_palette();

/// Colour-coded map of per-pixel expert indices (0-based).
Image expert_map_image(std::span<const std::size_t> decisions, std::size_t height, std::size_t width,
                       std::span<const Rgb8> palette = default_palette());

/// Writes the map as PPM. Throws UsageError when an index has no colour.
void export_expert_map(std::span<const std::size_t> decisions, std::size_t height, std::size_t width,
                       const std::filesystem::path& path, std::span<const Rgb8> palette = default_palette());

/// Inverse palette lookup; throws ParseError on a colour not in the palette.
std::vector<std::size_t> decode_expert_map(const Image& map, std::span<const Rgb8> palette = default_palette());

}  // namespace moeisr
