#include "moeisr/expert_map.hpp"

#include <cmath>

#include "moeisr/errors.hpp"

namespace moeisr {

const std::vector<Rgb8>& default_palette() {
    static const std::vector<Rgb8> palette{{255, 255, 0}, {0, 255, 0}, {0, 0, 255}, {255, 0, 0}};
    return palette;
}

Image expert_map_image(std::span<const std::size_t> decisions, std::size_t height, std::size_t width,
                       std::span<const Rgb8> palette) {
    if (decisions.size() != height * width) {
        throw UsageError("expert map: " + std::to_string(decisions.size()) + " decisions for a " +
                         std::to_string(height) + "x" + std::to_string(width) + " map");
    }
    Image out(height, width);
    auto px = out.pixels();
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        if (decisions[i] >= palette.size()) {
            throw UsageError("expert map: expert " + std::to_string(decisions[i] + 1) + " exceeds the " +
                             std::to_string(palette.size()) + "-colour palette");
        }
        const Rgb8& c = palette[decisions[i]];
        for (std::size_t k = 0; k < 3; ++k) px[i * 3 + k] = float(c[k]) / 255.0f;
    }
    return out;
}

void export_expert_map(std::span<const std::size_t> decisions, std::size_t height, std::size_t width,
                       const std::filesystem::path& path, std::span<const Rgb8> palette) {
    write_ppm(path, expert_map_image(decisions, height, width, palette));
}

std::vector<std::size_t> decode_expert_map(const Image& map, std::span<const Rgb8> palette) {
    const auto px = map.pixels();
    std::vector<std::size_t> out(map.height() * map.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        Rgb8 c;
        for (std::size_t k = 0; k < 3; ++k) c[k] = static_cast<unsigned char>(std::lround(px[i * 3 + k] * 255.0f));
        std::size_t j = 0;
        while (j < palette.size() && palette[j] != c) ++j;
        if (j == palette.size()) throw ParseError("expert map: colour not in palette at pixel " + std::to_string(i), i);
        out[i] = j;
    }
    return out;
}

}  // namespace moeisr
